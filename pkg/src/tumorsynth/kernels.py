"""Shared grid kernels: separable Gaussian blur, ball erosion, labeling.

All functions are pure: inputs are never mutated and outputs are freshly
allocated.
"""

from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np
from scipy import ndimage

from .grids import BBox, Component, GridError, Mask3, SoftMask3, Volume3


def _per_axis(value, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,)).copy()
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise GridError(f"{name} must be finite and >= 0, got {value}")
    return arr


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Truncated (3 sigma) normalized Gaussian kernel; [1] when sigma == 0."""
    radius = int(3.0 * sigma + 0.5)
    if sigma <= 0 or radius == 0:
        return np.ones(1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_array(data: np.ndarray, sigma_vox: Sequence[float]) -> np.ndarray:
    """Separable Gaussian blur with edge replication, computed in float64."""
    out = np.asarray(data, dtype=np.float64)
    for axis, sigma in enumerate(sigma_vox):
        kernel = gaussian_kernel1d(float(sigma))
        if kernel.size > 1:
            out = ndimage.correlate1d(out, kernel, axis=axis, mode="nearest")
    if out is data:
        out = out.copy()
    return out


def gaussian_blur(grid: Union[Volume3, SoftMask3], sigma_mm) -> Union[Volume3, SoftMask3]:
    """Blur a volume or soft mask with per-axis physical sigma in mm.

    Per-axis voxel sigma is sigma_mm / spacing; the kernel is truncated at
    3 sigma and renormalized, so constant inputs stay constant and grid
    borders are edge-replicated.
    """
    sigma = _per_axis(sigma_mm, "sigma_mm")
    sigma_vox = sigma / np.asarray(grid.spacing)
    blurred = blur_array(grid.data, sigma_vox)
    if isinstance(grid, SoftMask3):
        return SoftMask3(np.clip(blurred, 0.0, 1.0), **grid._geometry_kwargs())
    if isinstance(grid, Volume3):
        return Volume3(blurred.astype(grid.data.dtype), **grid._geometry_kwargs())
    raise GridError(f"cannot blur object of type {type(grid).__name__}")


def interior_depth_mm(mask: Mask3) -> np.ndarray:
    """Distance (mm) from each voxel to the nearest background voxel center.

    Voxels outside the grid count as background; zero on background voxels.
    Computed on the mask's bounding box only, which is exact: depths are
    bounded by the distance to the box faces.
    """
    out = np.zeros(mask.dims, dtype=np.float32)
    if not mask.data.any():
        return out
    box = mask.bounding_box()
    crop = np.pad(mask.data[box.slices], 1, mode="constant",
                  constant_values=False)
    dist = ndimage.distance_transform_edt(crop, sampling=mask.spacing)
    out[box.slices] = dist[1:-1, 1:-1, 1:-1]
    return out


def erode(mask: Mask3, radius_mm: float) -> Mask3:
    """Binary erosion by a spacing-aware ball of the given physical radius.

    Equivalent to requiring every lattice offset within radius_mm (in mm)
    to stay inside the mask; implemented via the Euclidean distance
    transform, which gives the identical voxel-center criterion.
    """
    if radius_mm < 0:
        raise GridError(f"erosion radius must be >= 0, got {radius_mm}")
    if radius_mm == 0:
        return mask.with_data(mask.data.copy())
    return mask.with_data(interior_depth_mm(mask) > radius_mm)


_CONN26 = np.ones((3, 3, 3), dtype=bool)


def connected_components(mask: Mask3) -> List[Component]:
    """26-connected components, sorted by descending voxel count."""
    labels, n = ndimage.label(mask.data, structure=_CONN26)
    if n == 0:
        return []
    voxel_volume = mask.voxel_volume_mm3
    objects = ndimage.find_objects(labels)
    comps = []
    for lab, slc in zip(range(1, n + 1), objects):
        local = labels[slc] == lab
        idx = np.argwhere(local)
        idx += [s.start for s in slc]
        count = idx.shape[0]
        comps.append(Component(
            voxels=idx,
            count=count,
            bbox=BBox(tuple(int(v) for v in idx.min(axis=0)),
                      tuple(int(v) + 1 for v in idx.max(axis=0))),
            centroid=tuple(float(c) for c in idx.mean(axis=0)),
            radius_mm=Component.equivalent_radius_mm(count, voxel_volume),
        ))
    comps.sort(key=lambda c: c.count, reverse=True)
    return comps


def component_count(mask: Mask3) -> int:
    """Number of 26-connected components (no per-component payload)."""
    _, n = ndimage.label(mask.data, structure=_CONN26)
    return int(n)
