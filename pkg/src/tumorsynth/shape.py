"""Tumor shape synthesis: ellipsoid seed, random elastic warp, soft border.

The shape pipeline runs on a small local crop with the host's voxel
spacing; placement into the host volume happens later. Every operation is
a pure function of its inputs and seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from . import kernels
from .grids import BBox, Component, GridError, Mask3, SoftMask3
from .seeds import rng_for


class ShapeError(GridError):
    """Shape generation failed or was given degenerate parameters."""


@dataclass(frozen=True)
class SizeClass:
    """Named tumor size band by equivalent-sphere radius."""

    name: str
    radius_range_mm: Tuple[float, float]

    def __post_init__(self):
        lo, hi = self.radius_range_mm
        if not (2.0 <= lo < hi <= 44.0):
            raise ShapeError(f"size class {self.name}: range {self.radius_range_mm} "
                             "must satisfy 2 <= lo < hi <= 44")


SIZE_CLASSES = {
    "tiny": SizeClass("tiny", (2.0, 4.0)),
    "small": SizeClass("small", (4.0, 10.0)),
    "medium": SizeClass("medium", (10.0, 22.0)),
    "large": SizeClass("large", (22.0, 44.0)),
}

RADIUS_TOLERANCE = 0.2  # fractional slack on the class range after deformation


def size_class(name: str) -> SizeClass:
    try:
        return SIZE_CLASSES[name]
    except KeyError:
        raise ShapeError(f"unknown size class {name!r}; "
                         f"choose from {sorted(SIZE_CLASSES)}") from None


@dataclass(frozen=True)
class ElasticParams:
    """Random smooth warp: coarse Gaussian offsets, interpolated and blurred."""

    control_spacing_mm: float = 8.0
    displacement_sigma_mm: float = 2.0
    smoothing_sigma_mm: float = 4.0

    def __post_init__(self):
        if min(self.control_spacing_mm, self.smoothing_sigma_mm) <= 0 \
                or self.displacement_sigma_mm < 0:
            raise ShapeError(f"elastic parameters must be positive, got {self}")
        if self.displacement_sigma_mm > self.control_spacing_mm / 2:
            raise ShapeError("displacement_sigma_mm > control_spacing_mm / 2 "
                             "risks grid folding")


@dataclass(frozen=True)
class TumorShape:
    """One sampled tumor shape on a tight local crop.

    `hard` is exactly the 0.5-superlevel set of `soft`; `center_voxel` is
    the generation center in crop coordinates, the anchor for placement.
    """

    soft: SoftMask3
    hard: Mask3
    radius_mm: float
    crop_box: BBox  # hard-mask bounds within the crop
    center_voxel: Tuple[float, float, float]
    max_extent_mm: float  # farthest hard voxel from the center

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.soft.dims


def default_soften_sigma_mm(radius_mm: float) -> float:
    """Blend border width grows with tumor size."""
    return max(1.0, 0.15 * radius_mm)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (via a uniform unit quaternion)."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def make_ellipsoid(semi_axes_mm, rotation, spacing, margin_mm: float = 0.0) -> Mask3:
    """Voxelize a rotated ellipsoid on a fresh crop centered at world 0.

    A voxel is included iff its center lies inside the ellipsoid. The crop
    covers the rotated extents plus one voxel plus margin_mm headroom.
    """
    axes = np.asarray(semi_axes_mm, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    rot = np.asarray(rotation, dtype=np.float64)
    if np.any(axes <= 0):
        raise ShapeError(f"semi-axes must be positive, got {semi_axes_mm}")
    if axes.min() < spacing.max() / 2:
        raise ShapeError(f"degenerate axis: semi-axes {tuple(axes)} under half "
                         f"the largest spacing {spacing.max()}")

    if np.allclose(axes, axes[0]):
        rot = np.eye(3)  # spheres are rotation-invariant; keep ties stable

    extent = np.sqrt(((rot * axes) ** 2).sum(axis=1))
    half_vox = np.ceil((extent + margin_mm) / spacing).astype(int) + 1
    dims = 2 * half_vox + 1

    coords = [(np.arange(dims[a]) - half_vox[a]) * spacing[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij", sparse=True)
    local = [rot[0, a] * gx + rot[1, a] * gy + rot[2, a] * gz for a in range(3)]
    inside = sum((local[a] / axes[a]) ** 2 for a in range(3)) <= 1.0
    origin = tuple(-half_vox * spacing)
    return Mask3(inside, spacing=tuple(spacing), origin=origin)


def _dense_displacement_vox(dims, spacing, params: ElasticParams,
                            rng: np.random.Generator) -> np.ndarray:
    """Per-axis displacement field in voxel units, shape (3, *dims)."""
    spacing = np.asarray(spacing, dtype=np.float64)
    pitch = params.control_spacing_mm
    n_nodes = np.ceil(np.asarray(dims) * spacing / pitch).astype(int) + 3
    offsets = rng.normal(0.0, params.displacement_sigma_mm, size=(3, *n_nodes))

    node_coords = np.meshgrid(
        *[(np.arange(d) * s) / pitch + 1.0 for d, s in zip(dims, spacing)],
        indexing="ij")
    node_coords = np.stack([c.astype(np.float64) for c in node_coords])

    disp = np.empty((3, *dims), dtype=np.float32)
    sigma_vox = params.smoothing_sigma_mm / spacing
    for a in range(3):
        field = ndimage.map_coordinates(offsets[a], node_coords, order=1,
                                        mode="nearest")
        field = kernels.blur_array(field, sigma_vox)
        disp[a] = field / spacing[a]
    return disp


def elastic_deform(mask: Mask3, params: ElasticParams, seed: int) -> Mask3:
    """Warp a binary mask by a random smooth displacement field.

    Backward warping with trilinear interpolation, thresholded at 0.5;
    zero displacement sigma reproduces the input exactly. Deterministic in
    the seed.
    """
    rng = np.random.default_rng(seed)
    disp = _dense_displacement_vox(mask.dims, mask.spacing, params, rng)
    base = np.meshgrid(*[np.arange(d, dtype=np.float32) for d in mask.dims],
                       indexing="ij")
    coords = np.stack(base) + disp
    warped = ndimage.map_coordinates(mask.data.astype(np.float32), coords,
                                     order=1, mode="constant", cval=0.0)
    return mask.with_data(warped >= 0.5)


def soften_mask(mask: Mask3, sigma_mm: float) -> SoftMask3:
    """Blur a binary mask into blending weights in [0, 1]."""
    if sigma_mm < 0:
        raise ShapeError(f"soften sigma must be >= 0, got {sigma_mm}")
    if sigma_mm == 0:
        return SoftMask3(mask.data.astype(np.float32), **mask._geometry_kwargs())
    blurred = kernels.blur_array(mask.data, sigma_mm / np.asarray(mask.spacing))
    return SoftMask3(np.clip(blurred, 0.0, 1.0), **mask._geometry_kwargs())


def _crop_shape(soft: SoftMask3, hard: Mask3, center_voxel: np.ndarray,
                radius_mm: float) -> TumorShape:
    support = soft.data > 0
    idx = np.nonzero(support)
    lo = np.array([a.min() for a in idx])
    hi = np.array([a.max() + 1 for a in idx])
    slices = tuple(slice(l, h) for l, h in zip(lo, hi))

    geometry = dict(spacing=soft.spacing, direction=soft.direction)
    soft_c = SoftMask3(soft.data[slices].copy(), origin=(0, 0, 0), **geometry)
    hard_c = Mask3(hard.data[slices].copy(), origin=(0, 0, 0), **geometry)

    center = center_voxel - lo
    hard_idx = np.argwhere(hard_c.data)
    offsets_mm = (hard_idx - center) * np.asarray(soft.spacing)
    extent = float(np.sqrt((offsets_mm ** 2).sum(axis=1)).max())
    return TumorShape(
        soft=soft_c,
        hard=hard_c,
        radius_mm=radius_mm,
        crop_box=BBox(tuple(int(v) for v in hard_idx.min(axis=0)),
                      tuple(int(v) + 1 for v in hard_idx.max(axis=0))),
        center_voxel=tuple(float(c) for c in center),
        max_extent_mm=extent,
    )


def sample_shape(cls: SizeClass, spacing, seed: int,
                 elastic: ElasticParams = ElasticParams(),
                 soften_sigma_mm: Optional[float] = None,
                 max_attempts: int = 10) -> TumorShape:
    """Sample one tumor shape for a size class: ellipsoid, warp, soften.

    Radius is uniform over the class range, semi-axis ratios uniform in
    [0.7, 1.3] renormalized to the radius, rotation uniform. Draws whose
    result breaks the shape invariants (single component, radius within
    the class range +-20%) are retried on fresh sub-seeds.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    lo, hi = cls.radius_range_mm
    last_failure = "no attempts"
    for attempt in range(max_attempts):
        rng = rng_for(seed, "shape", attempt)
        radius = float(rng.uniform(lo, hi))
        ratios = rng.uniform(0.7, 1.3, size=3)
        axes = radius * ratios / float(np.prod(ratios) ** (1.0 / 3.0))
        rotation = random_rotation(rng)
        sigma = default_soften_sigma_mm(radius) if soften_sigma_mm is None \
            else soften_sigma_mm

        margin = 3.0 * elastic.displacement_sigma_mm + 3.0 * sigma + spacing.max()
        try:
            seed_mask = make_ellipsoid(axes, rotation, spacing, margin_mm=margin)
        except ShapeError as exc:
            last_failure = str(exc)
            continue
        deformed = elastic_deform(seed_mask, elastic,
                                  int(rng.integers(0, 2 ** 63 - 1)))
        soft = soften_mask(deformed, sigma)
        hard = soft.threshold(0.5)

        count = hard.count
        if count == 0 or kernels.component_count(hard) != 1:
            last_failure = "deformed mask is empty or disconnected"
            continue
        r_eq = Component.equivalent_radius_mm(count, hard.voxel_volume_mm3)
        if not (lo * (1 - RADIUS_TOLERANCE) <= r_eq <= hi * (1 + RADIUS_TOLERANCE)):
            last_failure = (f"equivalent radius {r_eq:.2f} mm outside "
                            f"[{lo * 0.8:.2f}, {hi * 1.2:.2f}]")
            continue

        half_vox = (np.asarray(seed_mask.dims) - 1) // 2
        return _crop_shape(soft, hard, half_vox.astype(np.float64), r_eq)
    raise ShapeError(f"shape sampling failed after {max_attempts} attempts "
                     f"(class {cls.name}, seed {seed}): {last_failure}")
