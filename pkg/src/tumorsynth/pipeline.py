"""Per-case synthesis orchestration, streaming generation, and batch runs.

A case takes a healthy CT plus its liver mask and plants a planned set of
tumors: shape, location, texture, blend, then mass effect and cirrhosis,
then satellites of large tumors. Everything is a pure function of
(inputs, config, case seed); batch outputs are bit-identical across runs
and parallelism settings.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import __version__, kernels, placement as placement_mod, shape as shape_mod
from .config import SynthConfig
from .grids import BBox, GridError, Mask3, Volume3
from .nifti import load_nifti, save_nifti
from .placement import PlacementError, TumorSpec
from .seeds import derive_seed, rng_for
from .shape import ShapeError, TumorShape, size_class
from .texture import TextureParams, blend, texture_field


@dataclass(frozen=True)
class CaseResult:
    """One synthesized case: modified CT, tumor label, and provenance."""

    image: Volume3
    label: Mask3
    specs: List[TumorSpec]
    case_seed: int
    warnings: List[str]
    influence: Mask3  # union of voxels the generator may have modified
    duration_s: float


@dataclass(frozen=True)
class CaseOutcome:
    """Stream item: a case result or the error that replaced it."""

    case: str
    result: Optional[CaseResult] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class DatasetSummary:
    manifest_path: Path
    succeeded: int
    failed: int
    warnings: int


def _draw_texture_params(texture_seed: int, liver_mean_hu: float,
                         cfg: SynthConfig) -> TextureParams:
    rng = rng_for(texture_seed, "params")
    t = cfg.texture
    sigma = float(rng.uniform(*t.sigma_range_mm))
    mean = liver_mean_hu + float(rng.uniform(*t.mean_offset_range_hu))
    lo, hi = t.clip_hu
    mean = float(np.clip(mean, lo, hi))
    return TextureParams(salt_density=t.salt_density, salt_value_hu=t.salt_value_hu,
                         sigma_mm=sigma, target_mean_hu=mean,
                         target_std_hu=t.target_std_hu, clip_hu=t.clip_hu)


def _crop_for_placement(host_dims, shape: TumorShape, center_idx: np.ndarray
                        ) -> Optional[Tuple[BBox, Tuple[slice, ...], BBox]]:
    """Host box for the shape crop; None if the hard mask would be clipped."""
    lo = np.round(center_idx - np.asarray(shape.center_voxel)).astype(int)
    hi = lo + np.asarray(shape.dims)

    hard_lo = lo + np.asarray(shape.crop_box.lo)
    hard_hi = lo + np.asarray(shape.crop_box.hi)
    if np.any(hard_lo < 0) or np.any(hard_hi > np.asarray(host_dims)):
        return None

    clip_lo = np.maximum(lo, 0)
    clip_hi = np.minimum(hi, host_dims)
    host_box = BBox(tuple(int(v) for v in clip_lo), tuple(int(v) for v in clip_hi))
    local = tuple(slice(int(cl - l), int(ch - l))
                  for cl, ch, l in zip(clip_lo, clip_hi, lo))
    return host_box, local, BBox(tuple(int(v) for v in hard_lo),
                                 tuple(int(v) for v in hard_hi))


class _CasePlanner:
    """Sequential per-case planting; placement constraints are stateful."""

    def __init__(self, ct: Volume3, liver: Mask3, cfg: SynthConfig, case_seed: int):
        ct.require_same_geometry(liver)
        if liver.count == 0:
            raise PlacementError("liver mask is empty")
        self.cfg = cfg
        self.case_seed = case_seed
        self.liver = liver
        self.interior_depth = kernels.interior_depth_mm(liver)
        self.liver_mean_hu = float(ct.data[liver.data].mean())
        self.image = ct
        self.label = np.zeros(ct.dims, dtype=bool)
        self.influence = np.zeros(ct.dims, dtype=bool)
        self.specs: List[TumorSpec] = []
        self.warnings: List[str] = []
        self._shape_cache: dict = {}

    def _shape_for(self, cls_name: str, seed: int) -> TumorShape:
        key = (cls_name, seed)
        if key not in self._shape_cache:
            self._shape_cache[key] = shape_mod.sample_shape(
                size_class(cls_name), self.liver.spacing, seed,
                elastic=self.cfg.elastic)
        return self._shape_cache[key]

    def plant(self, spec: TumorSpec, shape: TumorShape) -> TumorSpec:
        """Blend one tumor and apply its effects; returns the final spec."""
        center_idx = self.image.world_to_voxel(spec.center_world_mm)
        boxes = _crop_for_placement(self.image.dims, shape, center_idx)
        if boxes is None:
            raise PlacementError(
                f"tumor {spec.tumor_id} hard mask would cross the volume edge")
        host_box, local, _hard_box = boxes

        geometry = dict(spacing=self.image.spacing, origin=(0, 0, 0))
        soft_crop = type(shape.soft)(shape.soft.data[local].copy(), **geometry)
        tex = texture_field(host_box.shape, self.image.spacing, spec.texture,
                            spec.texture_seed)
        self.image = blend(self.image, tex, soft_crop, host_box)
        self.influence[host_box.slices] |= soft_crop.data > 0

        hard_full = np.zeros(self.image.dims, dtype=bool)
        hard_full[host_box.slices] = shape.hard.data[local]
        self.label |= hard_full

        effects = self.cfg.effects
        do_mass = (effects.mass_effect_strength > 0
                   and spec.radius_mm >= effects.mass_effect_min_radius_mm)
        do_cirr = effects.cirrhosis_amplitude_hu > 0
        spec = replace(spec, mass_effect=do_mass, cirrhosis=do_cirr)

        if do_mass:
            self.image = placement_mod.mass_effect(
                self.image, self.liver, spec.center_world_mm, spec.radius_mm,
                effects)
            self.influence |= placement_mod.mass_effect_region(
                self.image, spec.center_world_mm, spec.radius_mm, effects)
        if do_cirr:
            hard_mask = Mask3(hard_full, **self.image._geometry_kwargs())
            cirr_seed = derive_seed(self.case_seed, "cirrhosis", spec.tumor_id)
            self.image = placement_mod.cirrhosis_texture(
                self.image, self.liver, hard_mask, effects, cirr_seed)
            self.influence |= placement_mod.cirrhosis_region(
                self.liver, hard_mask, effects)

        self.specs.append(spec)
        return spec

    def plan_and_plant(self, index: int, cls_name: str) -> Optional[TumorSpec]:
        shape_seed = derive_seed(self.case_seed, "tumor", index, "shape")
        texture_seed = derive_seed(self.case_seed, "tumor", index, "texture")
        loc_seed = derive_seed(self.case_seed, "tumor", index, "location")
        try:
            shape = self._shape_for(cls_name, shape_seed)
            center = placement_mod.sample_location(
                self.liver, shape.radius_mm, self.cfg.placement, self.specs,
                loc_seed, extent_mm=shape.max_extent_mm,
                interior_depth=self.interior_depth)
            spec = TumorSpec(
                tumor_id=f"tumor{index}",
                center_world_mm=center,
                size_class=cls_name,
                shape_seed=shape_seed,
                texture_seed=texture_seed,
                radius_mm=shape.radius_mm,
                extent_mm=shape.max_extent_mm,
                texture=_draw_texture_params(texture_seed, self.liver_mean_hu,
                                             self.cfg),
            )
            return self.plant(spec, shape)
        except (ShapeError, PlacementError) as exc:
            self.warnings.append(f"tumor{index} ({cls_name}) skipped: {exc}")
            return None

    def plant_satellites(self, main: TumorSpec, index: int) -> None:
        sat_seed = derive_seed(self.case_seed, "tumor", index, "satellites")
        sats, planned = placement_mod.spawn_satellites(
            main, self.liver, self.cfg.effects, sat_seed,
            policy=self.cfg.placement, interior_depth=self.interior_depth,
            existing=self.specs)
        for sat in sats:
            sat = sat.with_texture(_draw_texture_params(
                sat.texture_seed, self.liver_mean_hu, self.cfg))
            try:
                shape = self._shape_for(sat.size_class, sat.shape_seed)
                self.plant(sat, shape)
            except (ShapeError, PlacementError) as exc:
                self.warnings.append(f"satellite {sat.tumor_id} skipped: {exc}")
        if planned > len(sats):
            self.warnings.append(
                f"{main.tumor_id}: {planned - len(sats)} of {planned} "
                "satellites infeasible, dropped")


def synthesize_case(ct: Volume3, liver: Mask3, cfg: SynthConfig,
                    case_seed: int) -> CaseResult:
    """Plant a planned set of synthetic tumors into one healthy CT.

    Fully deterministic in (cfg, case_seed). Infeasible placements degrade
    to fewer tumors with a warning record; an empty liver mask is an error.
    """
    started = time.perf_counter()
    planner = _CasePlanner(ct, liver, cfg, case_seed)

    rng = rng_for(case_seed, "plan")
    counts = sorted(cfg.tumor_count_distribution)
    count_probs = [cfg.tumor_count_distribution[k] for k in counts]
    n_tumors = int(rng.choice(counts, p=count_probs))
    class_names = sorted(cfg.size_class_weights)
    class_probs = [cfg.size_class_weights[c] for c in class_names]

    for index in range(n_tumors):
        cls_name = str(rng.choice(class_names, p=class_probs))
        spec = planner.plan_and_plant(index, cls_name)
        if spec is not None:
            planner.plant_satellites(spec, index)

    geometry = ct._geometry_kwargs()
    return CaseResult(
        image=planner.image,
        label=Mask3(planner.label, **geometry),
        specs=planner.specs,
        case_seed=case_seed,
        warnings=planner.warnings,
        influence=Mask3(planner.influence, **geometry),
        duration_s=time.perf_counter() - started,
    )


# --- dataset-level plumbing -------------------------------------------------

CT_SUFFIXES = ("_ct.nii.gz", "_ct.nii")
LIVER_SUFFIXES = ("_liver.nii.gz", "_liver.nii")


def discover_cases(inputs) -> List[Tuple[str, Path, Path]]:
    """(stem, ct path, liver path) for every *_ct/_liver pair in a directory."""
    inputs = Path(inputs)
    cases = []
    for path in sorted(inputs.iterdir()) if inputs.is_dir() else []:
        for suffix in CT_SUFFIXES:
            if path.name.endswith(suffix):
                stem = path.name[:-len(suffix)]
                for liver_suffix in LIVER_SUFFIXES:
                    liver = inputs / f"{stem}{liver_suffix}"
                    if liver.exists():
                        cases.append((stem, path, liver))
                        break
                break
    return cases


def _run_case(stem: str, ct_path: Path, liver_path: Path,
              cfg: SynthConfig) -> CaseOutcome:
    try:
        ct = load_nifti(ct_path)
        liver = load_nifti(liver_path, as_mask=True)
        case_seed = derive_seed(cfg.master_seed, "case", stem)
        return CaseOutcome(case=stem,
                           result=synthesize_case(ct, liver, cfg, case_seed))
    except (GridError, OSError) as exc:
        return CaseOutcome(case=stem, error=f"{type(exc).__name__}: {exc}")


def stream_cases(inputs, cfg: SynthConfig, prefetch: int = 1
                 ) -> Iterator[CaseOutcome]:
    """Lazy per-case generation with optional parallel prefetch.

    Yields cases in stable (sorted) order regardless of prefetch width;
    failures come through as error outcomes rather than exceptions.
    """
    cases = discover_cases(inputs)
    if not cases:
        return
    prefetch = max(1, int(prefetch))
    with ThreadPoolExecutor(max_workers=prefetch) as pool:
        pending = [pool.submit(_run_case, stem, ct, lv, cfg)
                   for stem, ct, lv in cases[:prefetch]]
        next_submit = prefetch
        for i in range(len(cases)):
            outcome = pending[i].result()
            if next_submit < len(cases):
                stem, ct, lv = cases[next_submit]
                pending.append(pool.submit(_run_case, stem, ct, lv, cfg))
                next_submit += 1
            yield outcome


def _spec_to_dict(spec: TumorSpec) -> dict:
    d = {
        "tumor_id": spec.tumor_id,
        "center_world_mm": list(spec.center_world_mm),
        "size_class": spec.size_class,
        "shape_seed": spec.shape_seed,
        "texture_seed": spec.texture_seed,
        "radius_mm": spec.radius_mm,
        "extent_mm": spec.extent_mm,
        "mass_effect": spec.mass_effect,
        "cirrhosis": spec.cirrhosis,
        "parent_id": spec.parent_id,
    }
    if spec.texture is not None:
        d["texture"] = {
            "salt_density": spec.texture.salt_density,
            "salt_value_hu": spec.texture.salt_value_hu,
            "sigma_mm": spec.texture.sigma_mm,
            "target_mean_hu": spec.texture.target_mean_hu,
            "target_std_hu": spec.texture.target_std_hu,
            "clip_hu": list(spec.texture.clip_hu),
        }
    return d


def generate_dataset(inputs, out_dir, cfg: SynthConfig, jobs: int = 1
                     ) -> DatasetSummary:
    """Synthesize every case pair under `inputs` into `out_dir`.

    Writes image/label NIfTI pairs plus a JSON-lines manifest whose records
    carry every seed and parameter needed to regenerate each case
    bit-identically. Unreadable cases are logged and skipped.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths_by_stem = {stem: (ct, lv) for stem, ct, lv in discover_cases(inputs)}
    manifest_path = out_dir / "manifest.jsonl"

    succeeded = failed = warned = 0
    with open(manifest_path, "w") as manifest:
        header = {
            "record": "run",
            "version": __version__,
            "master_seed": cfg.master_seed,
            "config_hash": cfg.config_hash(),
            "config": cfg.to_dict(),
        }
        manifest.write(json.dumps(header, sort_keys=True) + "\n")

        for outcome in stream_cases(inputs, cfg, prefetch=jobs):
            ct_path, liver_path = paths_by_stem[outcome.case]
            record = _write_case(outcome, outcome.case, ct_path, liver_path,
                                 out_dir)
            manifest.write(json.dumps(record, sort_keys=True) + "\n")
            if record["record"] == "case":
                succeeded += 1
                warned += len(record["warnings"])
            else:
                failed += 1
    return DatasetSummary(manifest_path=manifest_path, succeeded=succeeded,
                          failed=failed, warnings=warned)


def _write_case(outcome: CaseOutcome, stem: str, ct_path: Path,
                liver_path: Path, out_dir: Path) -> dict:
    if outcome.error is not None:
        return {"record": "case_error", "case": stem, "input_ct": str(ct_path),
                "error": outcome.error}
    result = outcome.result
    image_path = out_dir / f"{stem}_image.nii.gz"
    label_path = out_dir / f"{stem}_label.nii.gz"
    save_nifti(result.image, image_path)
    save_nifti(result.label, label_path)
    # output paths relative to the manifest so reruns into different
    # directories stay byte-identical
    return {
        "record": "case",
        "case": stem,
        "input_ct": str(ct_path),
        "input_liver": str(liver_path),
        "image": image_path.name,
        "label": label_path.name,
        "dims": list(result.image.dims),
        "spacing_mm": [float(s) for s in result.image.spacing],
        "case_seed": result.case_seed,
        "tumors": [_spec_to_dict(s) for s in result.specs],
        "warnings": result.warnings,
    }
