"""Report emission: per-case metric tables, aggregate CIs, and figures.

The evaluation path writes delimited CSV output next to matplotlib
renderings; the preview path renders orthogonal mid-tumor slices of a
synthesized case.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .grids import GridError
from .metrics import EvalResult, SizeBins, bootstrap_ci, evaluate_pair
from .nifti import load_nifti
from .pipeline import CaseResult
from .turing.render import window_u8

NIFTI_SUFFIXES = (".nii.gz", ".nii")


@dataclass(frozen=True)
class EvalReport:
    per_case: Dict[str, EvalResult]
    unmatched_pred: List[str]
    unmatched_gt: List[str]
    mean_dsc: float
    mean_nsd: float
    dsc_ci: Tuple[float, float]
    nsd_ci: Tuple[float, float]
    out_dir: Path


def _nifti_names(directory: Path) -> Dict[str, Path]:
    names = {}
    for path in sorted(directory.iterdir()) if directory.is_dir() else []:
        for suffix in NIFTI_SUFFIXES:
            if path.name.endswith(suffix):
                names[path.name] = path
                break
    return names


def evaluate_pairs(pred_dir, gt_dir, tolerance_mm: float = 2.0,
                   bins: SizeBins = SizeBins(), out_dir=None,
                   n_resamples: int = 10_000) -> EvalReport:
    """Evaluate matching prediction/ground-truth mask files and emit reports.

    Masks are matched by identical filename. Writes cases.csv,
    aggregate.csv, sensitivity_by_size.csv, and figures under out_dir.
    Raises when no filenames match.
    """
    preds = _nifti_names(Path(pred_dir))
    gts = _nifti_names(Path(gt_dir))
    shared = sorted(set(preds) & set(gts))
    if not shared:
        raise GridError(f"no matching mask filenames between {pred_dir} "
                        f"and {gt_dir}")

    per_case: Dict[str, EvalResult] = {}
    for name in shared:
        pred = load_nifti(preds[name], as_mask=True)
        gt = load_nifti(gts[name], as_mask=True)
        per_case[name] = evaluate_pair(pred, gt, tolerance_mm, bins)

    dscs = [r.dsc for r in per_case.values()]
    nsds = [r.nsd for r in per_case.values()]
    report = EvalReport(
        per_case=per_case,
        unmatched_pred=sorted(set(preds) - set(gts)),
        unmatched_gt=sorted(set(gts) - set(preds)),
        mean_dsc=float(np.mean(dscs)),
        mean_nsd=float(np.mean(nsds)),
        dsc_ci=bootstrap_ci(dscs, n_resamples=n_resamples),
        nsd_ci=bootstrap_ci(nsds, n_resamples=n_resamples),
        out_dir=Path(out_dir) if out_dir else Path("."),
    )
    if out_dir is not None:
        _write_report_files(report, bins, tolerance_mm)
    return report


def _aggregate_bins(report: EvalReport, bins: SizeBins) -> Dict[str, Tuple[int, int]]:
    totals = {label: [0, 0] for label in bins.labels}
    for result in report.per_case.values():
        for label, (detected, total) in result.bin_sensitivity.items():
            totals[label][0] += detected
            totals[label][1] += total
    return {k: (d, t) for k, (d, t) in totals.items()}


def _write_report_files(report: EvalReport, bins: SizeBins,
                        tolerance_mm: float) -> None:
    out = report.out_dir
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "cases.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "dsc", "nsd", "tumors", "detected"])
        for name, result in sorted(report.per_case.items()):
            writer.writerow([name, f"{result.dsc:.6f}", f"{result.nsd:.6f}",
                             len(result.detections),
                             sum(r.detected for r in result.detections)])

    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "ci95_lo", "ci95_hi", "cases"])
        n = len(report.per_case)
        writer.writerow(["dsc", f"{report.mean_dsc:.6f}",
                         f"{report.dsc_ci[0]:.6f}", f"{report.dsc_ci[1]:.6f}", n])
        writer.writerow([f"nsd@{tolerance_mm:g}mm", f"{report.mean_nsd:.6f}",
                         f"{report.nsd_ci[0]:.6f}", f"{report.nsd_ci[1]:.6f}", n])

    sens = _aggregate_bins(report, bins)
    with open(out / "sensitivity_by_size.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "detected", "total", "sensitivity"])
        for label in bins.labels:
            detected, total = sens[label]
            value = detected / total if total else ""
            writer.writerow([label, detected, total,
                             f"{value:.6f}" if total else ""])

    _plot_sensitivity(sens, bins, out / "sensitivity_by_size.png")
    _plot_case_metrics(report, out / "case_metrics.png")


def _plot_sensitivity(sens: Dict[str, Tuple[int, int]], bins: SizeBins,
                      path: Path) -> None:
    labels = bins.labels
    values = [sens[l][0] / sens[l][1] if sens[l][1] else 0.0 for l in labels]
    counts = [sens[l][1] for l in labels]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(range(len(labels)), values, color="#4878a8")
    for bar, total in zip(bars, counts):
        ax.annotate(f"n={total}", (bar.get_x() + bar.get_width() / 2, 0.02),
                    ha="center", fontsize=8, color="white")
    ax.set_xticks(range(len(labels)), labels, rotation=20)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("tumor-level sensitivity")
    ax.set_xlabel("equivalent radius")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_case_metrics(report: EvalReport, path: Path) -> None:
    names = sorted(report.per_case)
    dscs = [report.per_case[n].dsc for n in names]
    nsds = [report.per_case[n].nsd for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(names)), 4))
    ax.bar(x - 0.2, dscs, width=0.4, label="DSC", color="#4878a8")
    ax.bar(x + 0.2, nsds, width=0.4, label="NSD", color="#a85448")
    ax.set_xticks(x, names, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_case_preview(result: CaseResult, path, level_hu: float = 40.0,
                      width_hu: float = 400.0) -> None:
    """Render orthogonal slices through the first tumor with label contours."""
    image, label = result.image, result.label
    if result.specs:
        center = np.round(image.world_to_voxel(
            result.specs[0].center_world_mm)).astype(int)
        center = np.clip(center, 0, np.asarray(image.dims) - 1)
    else:
        center = np.asarray(image.dims) // 2

    fig, axes = plt.subplots(1, 3, figsize=(12, 4.2))
    names = ["sagittal", "coronal", "axial"]
    for axis, (ax, name) in enumerate(zip(axes, names)):
        plane = np.take(image.data, center[axis], axis=axis)
        mask_plane = np.take(label.data, center[axis], axis=axis)
        kept = [a for a in range(3) if a != axis]
        extent = (0, plane.shape[1] * image.spacing[kept[1]],
                  0, plane.shape[0] * image.spacing[kept[0]])
        ax.imshow(window_u8(plane, level_hu, width_hu), cmap="gray",
                  origin="lower", extent=extent, vmin=0, vmax=255)
        if mask_plane.any():
            ax.contour(mask_plane.astype(float), levels=[0.5], colors="r",
                       linewidths=0.8,
                       extent=extent)
        ax.set_title(f"{name} @ {center[axis]}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(f"{len(result.specs)} tumor(s), window "
                 f"L={level_hu:g}/W={width_hu:g}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
