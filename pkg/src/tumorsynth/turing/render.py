"""CT slice rendering: linear HU windowing to 8-bit grayscale."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from PIL import Image

from ..grids import GridError, Volume3

AXIS_NAMES = {"x": 0, "y": 1, "z": 2, "sagittal": 0, "coronal": 1, "axial": 2}

DEFAULT_LEVEL_HU = 40.0
DEFAULT_WIDTH_HU = 400.0


@dataclass(frozen=True)
class SliceRender:
    """One windowed 2-D slice; pixels are exact per the windowing formula."""

    pixels: np.ndarray  # uint8, shape (n0, n1)
    level_hu: float
    width_hu: float
    axis: int
    index: int
    pixel_spacing_mm: Tuple[float, float]

    @property
    def aspect(self) -> float:
        """Height/width scale factor of one pixel (rows vs columns)."""
        return self.pixel_spacing_mm[0] / self.pixel_spacing_mm[1]


def window_u8(values: np.ndarray, level_hu: float, width_hu: float) -> np.ndarray:
    """Map HU to display gray: clamp(round(255 * (hu - (L - W/2)) / W), 0, 255).

    Rounding is half-up so the mapping is exactly reproducible.
    """
    if width_hu <= 0:
        raise GridError(f"window width must be > 0, got {width_hu}")
    lower = level_hu - width_hu / 2.0
    scaled = 255.0 * (np.asarray(values, dtype=np.float64) - lower) / width_hu
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def render_slice(volume: Volume3, axis, index: int,
                 level_hu: float = DEFAULT_LEVEL_HU,
                 width_hu: float = DEFAULT_WIDTH_HU) -> SliceRender:
    """Window one orthogonal slice of a volume to 8-bit grayscale."""
    axis_idx = AXIS_NAMES[axis] if isinstance(axis, str) else int(axis)
    if axis_idx not in (0, 1, 2):
        raise GridError(f"axis must be 0..2 or one of {sorted(AXIS_NAMES)}")
    if not 0 <= index < volume.dims[axis_idx]:
        raise GridError(f"slice index {index} out of range "
                        f"[0, {volume.dims[axis_idx]}) on axis {axis_idx}")
    plane = np.take(volume.data, index, axis=axis_idx)
    kept = [a for a in range(3) if a != axis_idx]
    spacing = (volume.spacing[kept[0]], volume.spacing[kept[1]])
    return SliceRender(pixels=window_u8(plane, level_hu, width_hu),
                       level_hu=level_hu, width_hu=width_hu,
                       axis=axis_idx, index=index, pixel_spacing_mm=spacing)


def slice_png(render: SliceRender) -> bytes:
    """Encode a slice as PNG, aspect-corrected by nearest-neighbor repeats.

    Repetition keeps the windowed gray values exact while approximating
    the physical in-plane aspect of anisotropic spacing.
    """
    pixels = render.pixels
    s0, s1 = render.pixel_spacing_mm
    smin = min(s0, s1)
    reps = (max(1, round(s0 / smin)), max(1, round(s1 / smin)))
    if reps != (1, 1):
        pixels = np.repeat(np.repeat(pixels, reps[0], axis=0), reps[1], axis=1)
    # rows render top-to-bottom; transpose so axis order is (row, col)
    img = Image.fromarray(pixels.T, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
