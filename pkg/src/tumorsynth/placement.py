"""Tumor placement inside the liver and secondary realism effects.

Covers feasible-location sampling, the outward mass-effect warp, the
peritumoral cirrhosis texture, and satellite lesion planning. All effect
operations are exact identities at zero strength/amplitude/rate and touch
no voxel outside their declared influence regions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import kernels, shape as shape_mod
from .grids import GridError, Mask3, Volume3
from .seeds import derive_seed, rng_for
from .texture import TextureParams


class PlacementError(GridError):
    """No feasible tumor location."""


@dataclass(frozen=True)
class PlacementPolicy:
    """Constraints on tumor centers inside the liver."""

    margin_mm: float = 2.0
    max_attempts: int = 100
    min_separation_mm: float = 0.0

    def __post_init__(self):
        if self.margin_mm < 0 or self.min_separation_mm < 0:
            raise PlacementError(f"negative placement margins: {self}")
        if self.max_attempts < 1:
            raise PlacementError("max_attempts must be >= 1")


@dataclass(frozen=True)
class EffectParams:
    """Secondary effect strengths; zero disables an effect entirely."""

    mass_effect_strength: float = 0.3
    mass_effect_reach_mm: float = 6.0
    mass_effect_min_radius_mm: float = 22.0
    cirrhosis_amplitude_hu: float = 8.0
    cirrhosis_sigma_mm: float = 3.0
    satellite_rate: float = 3.0
    satellite_trigger_radius_mm: float = 22.0

    def __post_init__(self):
        vals = (self.mass_effect_strength, self.mass_effect_reach_mm,
                self.mass_effect_min_radius_mm, self.cirrhosis_amplitude_hu,
                self.cirrhosis_sigma_mm, self.satellite_rate,
                self.satellite_trigger_radius_mm)
        if any(v < 0 for v in vals):
            raise GridError(f"effect parameters must be non-negative: {self}")
        if self.mass_effect_strength > 1:
            raise GridError("mass_effect_strength must be <= 1")


@dataclass(frozen=True)
class TumorSpec:
    """Everything needed to regenerate one tumor deterministically."""

    tumor_id: str
    center_world_mm: Tuple[float, float, float]
    size_class: str
    shape_seed: int
    texture_seed: int
    radius_mm: float
    extent_mm: float
    texture: Optional[TextureParams] = None
    mass_effect: bool = False
    cirrhosis: bool = False
    parent_id: Optional[str] = None

    def with_texture(self, texture: TextureParams) -> "TumorSpec":
        return replace(self, texture=texture)


def touch_gap_mm(spacing) -> float:
    """Center distance below which two hard masks could become 26-adjacent."""
    return float(np.linalg.norm(np.asarray(spacing, dtype=np.float64))) + 0.5


def _required_separation(policy: PlacementPolicy, extent_mm: float,
                         other: TumorSpec, gap: float) -> float:
    return max(policy.min_separation_mm, extent_mm + other.extent_mm + gap)


def sample_location(liver: Mask3, tumor_radius_mm: float, policy: PlacementPolicy,
                    existing: List[TumorSpec], seed: int,
                    extent_mm: Optional[float] = None,
                    interior_depth: Optional[np.ndarray] = None,
                    ) -> Tuple[float, float, float]:
    """Sample a tumor center uniformly over the eroded liver interior.

    The liver is eroded by half the tumor radius plus the policy margin, so
    lesions may abut (but not escape) the capsule. Draws closer to an
    existing tumor than the separation rule allows are rejected.
    Deterministic in the seed.
    """
    if liver.count == 0:
        raise PlacementError("no feasible location: liver mask is empty")
    if interior_depth is None:
        interior_depth = kernels.interior_depth_mm(liver)
    depth = 0.5 * tumor_radius_mm + policy.margin_mm
    candidates = np.argwhere(interior_depth > depth)
    if candidates.shape[0] == 0:
        raise PlacementError(f"no feasible location: liver interior shallower "
                             f"than {depth:.1f} mm everywhere")

    extent = tumor_radius_mm if extent_mm is None else extent_mm
    gap = touch_gap_mm(liver.spacing)
    rng = np.random.default_rng(seed)
    for _ in range(policy.max_attempts):
        voxel = candidates[int(rng.integers(candidates.shape[0]))]
        center = liver.voxel_to_world(voxel)
        ok = all(
            np.linalg.norm(center - np.asarray(other.center_world_mm))
            >= _required_separation(policy, extent, other, gap)
            for other in existing
        )
        if ok:
            return tuple(float(c) for c in center)
    raise PlacementError(f"no feasible location: {policy.max_attempts} draws "
                         "all violated the separation rule")


def mass_effect(host: Volume3, liver: Mask3, center, radius_mm: float,
                params: EffectParams, seed: int = 0) -> Volume3:
    """Push tissue around a tumor outward by a radially decaying warp.

    Backward warp with trilinear resampling; the displacement magnitude is
    strength * radius * exp(-(d - radius) / reach) outside the tumor radius
    and cut off beyond 3 reach lengths, where voxels stay bit-identical.
    The warp itself is deterministic; `seed` is accepted for call-site
    symmetry with the other effects.
    """
    strength = params.mass_effect_strength
    if strength == 0:
        return host
    reach = params.mass_effect_reach_mm
    if reach <= 0:
        return host

    spacing = np.asarray(host.spacing)
    c_idx = host.world_to_voxel(center)
    outer_mm = radius_mm + 3.0 * reach
    max_u = strength * radius_mm
    pad = np.ceil((outer_mm + max_u) / spacing).astype(int) + 1
    lo = np.maximum(np.floor(c_idx).astype(int) - pad, 0)
    hi = np.minimum(np.ceil(c_idx).astype(int) + pad + 1, host.dims)
    if np.any(lo >= hi):
        return host
    slices = tuple(slice(l, h) for l, h in zip(lo, hi))

    axes = [np.arange(l, h, dtype=np.float64) for l, h in zip(lo, hi)]
    gi, gj, gk = np.meshgrid(*axes, indexing="ij")
    off = np.stack([(g - c) * s for g, c, s in zip((gi, gj, gk), c_idx, spacing)])
    dist = np.sqrt((off ** 2).sum(axis=0))
    region = (dist > radius_mm) & (dist <= outer_mm)
    if not region.any():
        return host

    d = dist[region]
    u = strength * radius_mm * np.exp(-(d - radius_mm) / reach)
    scale = 1.0 - u / d
    src = np.stack([
        c + (g[region] - c) * scale
        for g, c in zip((gi, gj, gk), c_idx)
    ]) - lo[:, None]

    crop = host.data[slices].astype(np.float64)
    sampled = ndimage.map_coordinates(crop, src, order=1, mode="nearest")
    out = host.data.copy()
    view = out[slices]
    view[region] = sampled.astype(out.dtype)
    return host.with_data(out)


def mass_effect_region(host: Volume3, center, radius_mm: float,
                       params: EffectParams) -> np.ndarray:
    """Boolean grid of voxels the mass-effect warp is allowed to modify."""
    region = np.zeros(host.dims, dtype=bool)
    if params.mass_effect_strength == 0 or params.mass_effect_reach_mm <= 0:
        return region
    spacing = np.asarray(host.spacing)
    c_idx = host.world_to_voxel(center)
    outer_mm = radius_mm + 3.0 * params.mass_effect_reach_mm
    pad = np.ceil(outer_mm / spacing).astype(int) + 1
    lo = np.maximum(np.floor(c_idx).astype(int) - pad, 0)
    hi = np.minimum(np.ceil(c_idx).astype(int) + pad + 1, host.dims)
    if np.any(lo >= hi):
        return region
    slices = tuple(slice(l, h) for l, h in zip(lo, hi))
    axes = [np.arange(l, h, dtype=np.float64) for l, h in zip(lo, hi)]
    gi, gj, gk = np.meshgrid(*axes, indexing="ij")
    off = np.stack([(g - c) * s for g, c, s in zip((gi, gj, gk), c_idx, spacing)])
    dist = np.sqrt((off ** 2).sum(axis=0))
    region[slices] = (dist > radius_mm) & (dist <= outer_mm)
    return region


def _shell_around(tumor_hard: Mask3, liver: Mask3, width_mm: float):
    """Liver voxels within width_mm of the tumor, excluding the tumor."""
    box = tumor_hard.bounding_box()
    pad = int(np.ceil(width_mm / min(tumor_hard.spacing))) + 1
    box = box.padded(pad, tumor_hard.dims)
    slices = box.slices
    tumor_crop = tumor_hard.data[slices]
    dist = ndimage.distance_transform_edt(~tumor_crop, sampling=tumor_hard.spacing)
    shell = (dist > 0) & (dist <= width_mm) & liver.data[slices]
    return slices, shell


def cirrhosis_texture(host: Volume3, liver: Mask3, tumor_hard: Mask3,
                      params: EffectParams, seed: int) -> Volume3:
    """Add smoothed zero-mean HU noise to the liver shell around a tumor.

    The shell is the band of liver within 2 * cirrhosis_sigma_mm of the
    tumor surface, tumor voxels excluded; everything else is untouched.
    """
    amplitude = params.cirrhosis_amplitude_hu
    if amplitude == 0:
        return host
    host.require_same_geometry(liver)
    host.require_same_geometry(tumor_hard)
    if tumor_hard.count == 0:
        return host

    width = 2.0 * params.cirrhosis_sigma_mm
    slices, shell = _shell_around(tumor_hard, liver, width)
    if not shell.any():
        return host

    rng = np.random.default_rng(seed)
    white = rng.normal(size=shell.shape)
    sigma_vox = params.cirrhosis_sigma_mm / np.asarray(host.spacing)
    noise = kernels.blur_array(white, sigma_vox)
    std = noise.std()
    if std > 0:
        noise *= amplitude / std

    out = host.data.copy()
    view = out[slices]
    view[shell] = view[shell] + noise[shell].astype(out.dtype)
    return host.with_data(out)


def cirrhosis_region(liver: Mask3, tumor_hard: Mask3,
                     params: EffectParams) -> np.ndarray:
    """Boolean grid of voxels cirrhosis_texture may modify."""
    region = np.zeros(liver.dims, dtype=bool)
    if params.cirrhosis_amplitude_hu == 0 or tumor_hard.count == 0:
        return region
    slices, shell = _shell_around(tumor_hard, liver,
                                  2.0 * params.cirrhosis_sigma_mm)
    region[slices] = shell
    return region


def spawn_satellites(main: TumorSpec, liver: Mask3, params: EffectParams,
                     seed: int, policy: PlacementPolicy = PlacementPolicy(),
                     interior_depth: Optional[np.ndarray] = None,
                     existing: Sequence[TumorSpec] = (),
                     ) -> Tuple[List[TumorSpec], int]:
    """Plan small satellite lesions around a large main tumor.

    Qualifying mains (radius >= trigger) draw a Poisson number of
    tiny-class satellites with centers uniform over the spherical shell
    [1.2 r, 2.5 r], kept only where the liver is feasible and no masks
    would touch. Returns (specs, planned_count); infeasible draws are
    dropped. Deterministic in the seed.
    """
    if main.radius_mm < params.satellite_trigger_radius_mm:
        return [], 0
    rng = np.random.default_rng(seed)
    planned = int(rng.poisson(params.satellite_rate))
    if planned == 0:
        return [], 0

    if interior_depth is None:
        interior_depth = kernels.interior_depth_mm(liver)
    r_main = main.radius_mm
    center_main = np.asarray(main.center_world_mm)
    gap = touch_gap_mm(liver.spacing)
    tiny = shape_mod.size_class("tiny")
    dims = np.asarray(liver.dims)

    placed: List[TumorSpec] = []
    neighbours = list(existing) + [main]
    for s_index in range(planned):
        sat_seed = derive_seed(seed, "satellite", s_index)
        try:
            sat_shape = shape_mod.sample_shape(tiny, liver.spacing, sat_seed)
        except shape_mod.ShapeError:
            continue
        sat_rng = rng_for(seed, "satellite-place", s_index)
        found = None
        for _ in range(policy.max_attempts):
            direction = sat_rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            rho = r_main * (sat_rng.uniform(1.2 ** 3, 2.5 ** 3)) ** (1.0 / 3.0)
            center = center_main + rho * direction
            voxel = np.round(liver.world_to_voxel(center)).astype(int)
            if np.any(voxel < 0) or np.any(voxel >= dims):
                continue
            depth_needed = 0.5 * sat_shape.radius_mm + policy.margin_mm
            if interior_depth[tuple(voxel)] <= depth_needed:
                continue
            center = liver.voxel_to_world(voxel)
            ok = all(
                np.linalg.norm(center - np.asarray(other.center_world_mm))
                >= _required_separation(policy, sat_shape.max_extent_mm, other, gap)
                for other in neighbours
            )
            if ok:
                found = tuple(float(c) for c in center)
                break
        if found is None:
            continue
        spec = TumorSpec(
            tumor_id=f"{main.tumor_id}-sat{s_index}",
            center_world_mm=found,
            size_class="tiny",
            shape_seed=sat_seed,
            texture_seed=derive_seed(seed, "satellite-texture", s_index),
            radius_mm=sat_shape.radius_mm,
            extent_mm=sat_shape.max_extent_mm,
            parent_id=main.tumor_id,
        )
        placed.append(spec)
        neighbours.append(spec)
    return placed, planned
