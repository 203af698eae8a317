"""Core 3-D grid types: CT volumes, binary masks, blending masks.

All grids are indexed [i, j, k] along the (x, y, z) axes and carry their
own geometry (spacing in mm/voxel, world origin, orthonormal direction
matrix). Values of a Volume3 are Hounsfield units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

ORTHO_TOL = 1e-6


class GridError(ValueError):
    """Invalid grid data or geometry."""


def _as_direction(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3, 3):
        raise GridError(f"direction must be 3x3, got {d.shape}")
    if not np.allclose(d.T @ d, np.eye(3), atol=ORTHO_TOL):
        raise GridError("direction matrix is not orthonormal (sheared geometry rejected)")
    return d


def _as_spacing(spacing) -> Tuple[float, float, float]:
    s = tuple(float(x) for x in spacing)
    if len(s) != 3 or any(not np.isfinite(x) or x <= 0 for x in s):
        raise GridError(f"invalid spacing {spacing}: components must be finite and > 0")
    return s


@dataclass(frozen=True)
class BBox:
    """Half-open voxel-index box [lo, hi)."""

    lo: Tuple[int, int, int]
    hi: Tuple[int, int, int]

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise GridError(f"empty bounding box {self.lo}..{self.hi}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))

    def contains(self, other: "BBox") -> bool:
        return all(sl <= ol and oh <= sh for sl, ol, oh, sh in
                   zip(self.lo, other.lo, other.hi, self.hi))

    def padded(self, margin: int, shape: Tuple[int, int, int]) -> "BBox":
        """Expand by `margin` voxels per side, clipped to a grid of `shape`."""
        lo = tuple(max(0, l - margin) for l in self.lo)
        hi = tuple(min(n, h + margin) for h, n in zip(self.hi, shape))
        return BBox(lo, hi)


class _Grid3:
    """Shared geometry behaviour for the volume/mask types."""

    data: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float]
    direction: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def same_geometry(self, other: "_Grid3", tol: float = 1e-6) -> bool:
        return (self.dims == other.dims
                and np.allclose(self.spacing, other.spacing, atol=tol)
                and np.allclose(self.origin, other.origin, atol=tol)
                and np.allclose(self.direction, other.direction, atol=tol))

    def require_same_geometry(self, other: "_Grid3") -> None:
        if not self.same_geometry(other):
            raise GridError("grids are not co-registered (geometry mismatch)")

    def voxel_to_world(self, voxel) -> np.ndarray:
        """Map continuous voxel coordinates to world mm. Accepts (..., 3)."""
        v = np.asarray(voxel, dtype=np.float64)
        mm = v * np.asarray(self.spacing)
        return mm @ self.direction.T + np.asarray(self.origin)

    def world_to_voxel(self, world) -> np.ndarray:
        """Inverse of voxel_to_world; exact for orthonormal directions."""
        p = np.asarray(world, dtype=np.float64)
        mm = (p - np.asarray(self.origin)) @ self.direction
        return mm / np.asarray(self.spacing)

    def _geometry_kwargs(self) -> dict:
        return dict(spacing=self.spacing, origin=self.origin, direction=self.direction)


def _common_init(obj, data, spacing, origin, direction):
    object.__setattr__(obj, "data", data)
    object.__setattr__(obj, "spacing", _as_spacing(spacing))
    object.__setattr__(obj, "origin", tuple(float(x) for x in origin))
    object.__setattr__(obj, "direction", _as_direction(direction))
    if data.ndim != 3:
        raise GridError(f"grid data must be 3-D, got shape {data.shape}")
    if 0 in data.shape:
        raise GridError("grid data must be non-empty")


@dataclass(frozen=True, init=False)
class Volume3(_Grid3):
    """A 3-D CT image in Hounsfield units with world-space geometry."""

    data: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float]
    direction: np.ndarray

    def __init__(self, data, spacing, origin=(0.0, 0.0, 0.0), direction=np.eye(3)):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        _common_init(self, arr, spacing, origin, direction)
        if not np.all(np.isfinite(arr)):
            raise GridError("volume contains non-finite values")

    def with_data(self, data: np.ndarray) -> "Volume3":
        return Volume3(data, **self._geometry_kwargs())


@dataclass(frozen=True, init=False)
class Mask3(_Grid3):
    """A binary 3-D label grid co-registered with some Volume3."""

    data: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float]
    direction: np.ndarray

    def __init__(self, data, spacing, origin=(0.0, 0.0, 0.0), direction=np.eye(3)):
        arr = np.asarray(data)
        if arr.dtype != np.bool_:
            vals = np.unique(arr)
            if not np.all(np.isin(vals, (0, 1))):
                raise GridError("mask values must be 0 or 1")
            arr = arr.astype(bool)
        _common_init(self, arr, spacing, origin, direction)

    def with_data(self, data: np.ndarray) -> "Mask3":
        return Mask3(data, **self._geometry_kwargs())

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def bounding_box(self) -> BBox:
        idx = np.nonzero(self.data)
        if idx[0].size == 0:
            raise GridError("empty mask has no bounding box")
        return BBox(tuple(int(a.min()) for a in idx),
                    tuple(int(a.max()) + 1 for a in idx))


@dataclass(frozen=True, init=False)
class SoftMask3(_Grid3):
    """Blending weights in [0, 1] over a grid."""

    data: np.ndarray
    spacing: Tuple[float, float, float]
    origin: Tuple[float, float, float]
    direction: np.ndarray

    def __init__(self, data, spacing, origin=(0.0, 0.0, 0.0), direction=np.eye(3)):
        arr = np.asarray(data, dtype=np.float32)
        _common_init(self, arr, spacing, origin, direction)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise GridError("soft mask weights must lie in [0, 1]")

    def threshold(self, level: float = 0.5) -> Mask3:
        return Mask3(self.data >= level, **self._geometry_kwargs())


@dataclass(frozen=True)
class Component:
    """One 26-connected component of a binary mask."""

    voxels: np.ndarray = field(repr=False)  # (n, 3) int indices
    count: int
    bbox: BBox
    centroid: Tuple[float, float, float]  # voxel coords
    radius_mm: float  # equivalent-sphere radius

    @staticmethod
    def equivalent_radius_mm(count: int, voxel_volume_mm3: float) -> float:
        return float((3.0 * count * voxel_volume_mm3 / (4.0 * np.pi)) ** (1.0 / 3.0))
