"""Tumor interior texture: impulse noise, blur, intensity rescale, clip.

The texture field is generated on the tumor's crop box and blended into
the host CT through the shape's soft mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import kernels
from .grids import BBox, GridError, SoftMask3, Volume3


class TextureError(GridError):
    """Texture generation failed."""


@dataclass(frozen=True)
class TextureParams:
    """Controls one tumor's interior appearance (HU)."""

    salt_density: float = 0.4
    salt_value_hu: float = 1.0
    sigma_mm: float = 0.8
    target_mean_hu: float = 60.0
    target_std_hu: float = 15.0
    clip_hu: Tuple[float, float] = (-100.0, 200.0)

    def __post_init__(self):
        lo, hi = self.clip_hu
        if not 0.0 <= self.salt_density <= 1.0:
            raise TextureError(f"salt_density {self.salt_density} not in [0, 1]")
        if self.sigma_mm < 0:
            raise TextureError(f"sigma_mm {self.sigma_mm} must be >= 0")
        if not lo < hi:
            raise TextureError(f"clip range {self.clip_hu} is empty")
        if not lo <= self.target_mean_hu <= hi:
            raise TextureError(f"target mean {self.target_mean_hu} outside "
                               f"clip range {self.clip_hu}")
        if self.target_std_hu < 0:
            raise TextureError(f"target_std_hu {self.target_std_hu} must be >= 0")


@dataclass(frozen=True)
class TextureField:
    """HU texture over a tumor crop box."""

    values: np.ndarray
    spacing: Tuple[float, float, float]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.values.shape


def salt_noise(dims, density: float, value_hu: float, seed: int) -> np.ndarray:
    """Independent per-voxel impulses: value_hu with the given probability."""
    if not 0.0 <= density <= 1.0:
        raise TextureError(f"density {density} not in [0, 1]")
    rng = np.random.default_rng(seed)
    hits = rng.random(tuple(dims)) < density
    return np.where(hits, float(value_hu), 0.0)


def texture_field(dims, spacing, params: TextureParams, seed: int) -> TextureField:
    """Generate tumor texture: salt noise, Gaussian blur, rescale, clip.

    The blurred noise is affinely rescaled to the target mean/std over the
    crop, then clamped to the clip range. Raises on a flat (zero-variance)
    field unless the target std is zero too.
    """
    noise = salt_noise(dims, params.salt_density, params.salt_value_hu, seed)
    sigma_vox = params.sigma_mm / np.asarray(spacing, dtype=np.float64)
    smooth = kernels.blur_array(noise, sigma_vox)

    std = float(smooth.std())
    if std == 0.0:
        if params.target_std_hu != 0.0:
            raise TextureError("flat texture: blurred noise has zero variance "
                               "(salt density 0 or 1) but target std is nonzero")
        values = np.full(tuple(dims), params.target_mean_hu)
    else:
        values = (smooth - smooth.mean()) * (params.target_std_hu / std) \
            + params.target_mean_hu
    np.clip(values, *params.clip_hu, out=values)
    return TextureField(values=values, spacing=tuple(float(s) for s in spacing))


def blend(host: Volume3, tex: TextureField, soft: SoftMask3, crop_box: BBox) -> Volume3:
    """Composite texture into the host through soft weights on a crop box.

    out = (1 - w) * host + w * tex per voxel; voxels with w == 0 keep their
    exact host value (they are never rewritten).
    """
    if tex.dims != soft.dims or tex.dims != crop_box.shape:
        raise GridError(f"crop mismatch: texture {tex.dims}, soft {soft.dims}, "
                        f"box {crop_box.shape}")
    host_box = BBox((0, 0, 0), host.dims)
    if not host_box.contains(crop_box):
        raise GridError(f"crop box {crop_box.lo}..{crop_box.hi} exceeds host "
                        f"dims {host.dims}")

    out = host.data.copy()
    region = out[crop_box.slices]
    w = soft.data.astype(region.dtype)
    touched = w > 0
    mixed = (1.0 - w) * region + w * tex.values.astype(region.dtype)
    region[touched] = mixed[touched]
    return host.with_data(out)
