"""Command-line entry point: `synth` with generate/preview/eval/turing-serve."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synth",
        description="Synthetic liver tumor generation and evaluation toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize a dataset from CT/liver pairs")
    gen.add_argument("--inputs", required=True, type=Path,
                     help="directory of <case>_ct.nii[.gz] + <case>_liver.nii[.gz]")
    gen.add_argument("--out", required=True, type=Path)
    gen.add_argument("--config", type=Path, default=None,
                     help="YAML config mirroring SynthConfig (defaults if omitted)")
    gen.add_argument("--seed", type=int, default=None,
                     help="master seed (overrides the config file)")
    gen.add_argument("--jobs", type=int, default=1)

    prev = sub.add_parser("preview", help="synthesize one case and render slices")
    prev.add_argument("--case", required=True, type=Path,
                      help="path to a <case>_ct.nii[.gz] with its _liver pair")
    prev.add_argument("--seed", type=int, default=0)
    prev.add_argument("--out", required=True, type=Path, help="output PNG")
    prev.add_argument("--config", type=Path, default=None)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True, type=Path)
    ev.add_argument("--gt", required=True, type=Path)
    ev.add_argument("--tolerance-mm", type=float, default=2.0)
    ev.add_argument("--bins", type=str, default="5,10,20,30",
                    help="radius bin edges in mm, comma-separated")
    ev.add_argument("--out", required=True, type=Path)

    serve = sub.add_parser("turing-serve", help="run the visual test service")
    serve.add_argument("--real", required=True, type=Path,
                       help="pool of real-tumor image/label pairs")
    serve.add_argument("--synthetic", required=True, type=Path,
                       help="pool of synthetic image/label pairs")
    serve.add_argument("--port", type=int, default=8008)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--state", type=Path, default=None,
                       help="append-only session event log (replayed on restart)")
    serve.add_argument("--ui", type=Path, default=None,
                       help="static UI bundle directory to host at /")
    return parser


def _load_cfg(config_path, seed):
    from .config import SynthConfig, load_config
    cfg = load_config(config_path) if config_path else SynthConfig()
    if seed is not None:
        cfg = SynthConfig.from_dict({**cfg.to_dict(), "master_seed": seed})
    return cfg


def _cmd_generate(args) -> int:
    from .pipeline import generate_dataset
    cfg = _load_cfg(args.config, args.seed)
    summary = generate_dataset(args.inputs, args.out, cfg, jobs=args.jobs)
    print(f"generated {summary.succeeded} case(s), {summary.failed} failed, "
          f"{summary.warnings} warning(s); manifest at {summary.manifest_path}")
    if summary.succeeded == 0:
        print("error: no case succeeded", file=sys.stderr)
        return 1
    return 0


def _cmd_preview(args) -> int:
    from .nifti import load_nifti
    from .pipeline import CT_SUFFIXES, LIVER_SUFFIXES, synthesize_case
    from .report import save_case_preview
    from .seeds import derive_seed

    ct_path = args.case
    stem = None
    for suffix in CT_SUFFIXES:
        if ct_path.name.endswith(suffix):
            stem = ct_path.name[:-len(suffix)]
            break
    if stem is None:
        print(f"error: {ct_path} does not end with one of {CT_SUFFIXES}",
              file=sys.stderr)
        return 2
    liver_path = None
    for suffix in LIVER_SUFFIXES:
        candidate = ct_path.parent / f"{stem}{suffix}"
        if candidate.exists():
            liver_path = candidate
            break
    if liver_path is None:
        print(f"error: no liver mask next to {ct_path}", file=sys.stderr)
        return 2

    cfg = _load_cfg(args.config, None)
    ct = load_nifti(ct_path)
    liver = load_nifti(liver_path, as_mask=True)
    result = synthesize_case(ct, liver, cfg, derive_seed(args.seed, "preview"))
    save_case_preview(result, args.out)
    print(f"wrote {args.out} ({len(result.specs)} tumor(s), "
          f"{len(result.warnings)} warning(s))")
    return 0


def _cmd_eval(args) -> int:
    from .grids import GridError
    from .metrics import SizeBins
    from .report import evaluate_pairs

    edges = tuple(float(e) for e in args.bins.split(",") if e.strip())
    try:
        report = evaluate_pairs(args.pred, args.gt,
                                tolerance_mm=args.tolerance_mm,
                                bins=SizeBins(edges), out_dir=args.out)
    except GridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in report.unmatched_pred:
        print(f"warning: prediction {name} has no ground truth", file=sys.stderr)
    for name in report.unmatched_gt:
        print(f"warning: ground truth {name} has no prediction", file=sys.stderr)
    print(f"{len(report.per_case)} case(s): mean DSC {report.mean_dsc:.3f} "
          f"[{report.dsc_ci[0]:.3f}, {report.dsc_ci[1]:.3f}], "
          f"mean NSD {report.mean_nsd:.3f} "
          f"[{report.nsd_ci[0]:.3f}, {report.nsd_ci[1]:.3f}]")
    print(f"reports under {args.out}")
    return 0


def _cmd_turing_serve(args) -> int:
    import uvicorn

    from .turing.service import create_app
    from .turing.session import SessionStore, VolumePool

    real = VolumePool(args.real)
    synthetic = VolumePool(args.synthetic)
    if len(real) == 0 or len(synthetic) == 0:
        print("error: both pools need at least one image/label pair",
              file=sys.stderr)
        return 1
    store = SessionStore(real, synthetic, event_log=args.state,
                         server_seed=args.seed)
    static = args.ui if args.ui else _default_ui_dir()
    app = create_app(store, static_dir=static)
    print(f"serving {len(real)} real / {len(synthetic)} synthetic case(s) "
          f"on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _default_ui_dir():
    bundled = Path(__file__).resolve().parent.parent.parent.parent \
        / "frontend" / "dist"
    return bundled if bundled.is_dir() else None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "preview": _cmd_preview,
        "eval": _cmd_eval,
        "turing-serve": _cmd_turing_serve,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
