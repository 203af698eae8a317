"""Segmentation evaluation: Dice, surface Dice at a tolerance, and
tumor-level detection sensitivity stratified by lesion size.

Surfaces are represented as boundary voxel centers (unit-weight points);
distances are spacing-aware Euclidean. Empty-vs-empty comparisons score
1.0, matching common challenge conventions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .grids import GridError, Mask3
from .kernels import connected_components


@dataclass(frozen=True)
class SizeBins:
    """Ascending radius bin edges in mm; the last bin is open-ended."""

    edges_mm: Tuple[float, ...] = (5.0, 10.0, 20.0, 30.0)

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges_mm)
        if len(edges) == 0 or any(b <= a for a, b in zip(edges, edges[1:])) \
                or edges[0] <= 0:
            raise GridError(f"bin edges must be positive and strictly "
                            f"increasing, got {self.edges_mm}")
        object.__setattr__(self, "edges_mm", edges)

    @property
    def labels(self) -> List[str]:
        edges = self.edges_mm
        labels = [f"<{edges[0]:g}mm"]
        labels += [f"{a:g}-{b:g}mm" for a, b in zip(edges, edges[1:])]
        labels.append(f">={edges[-1]:g}mm")
        return labels

    def index_for(self, radius_mm: float) -> int:
        return int(np.searchsorted(np.asarray(self.edges_mm), radius_mm,
                                   side="right"))


@dataclass(frozen=True)
class DetectionRow:
    radius_mm: float
    voxels: int
    detected: bool
    overlap_fraction: float


@dataclass(frozen=True)
class EvalResult:
    """Metrics for one predicted/ground-truth mask pair."""

    dsc: float
    nsd: float
    tolerance_mm: float
    detections: List[DetectionRow]
    bin_sensitivity: Dict[str, Tuple[int, int]]  # label -> (detected, total)


def dsc(pred: Mask3, gt: Mask3) -> float:
    """Dice similarity coefficient 2|A&B| / (|A|+|B|); 1.0 when both empty."""
    pred.require_same_geometry(gt)
    total = pred.count + gt.count
    if total == 0:
        return 1.0
    overlap = int(np.logical_and(pred.data, gt.data).sum())
    return 2.0 * overlap / total


def boundary_voxels(mask: Mask3) -> np.ndarray:
    """Mask voxels with a 6-neighbor background voxel (grid edge counts)."""
    data = mask.data
    interior = ndimage.binary_erosion(
        data, structure=ndimage.generate_binary_structure(3, 1),
        border_value=0)
    return data & ~interior


def nsd(pred: Mask3, gt: Mask3, tolerance_mm: float = 2.0) -> float:
    """Normalized surface Dice: fraction of both boundaries within tolerance.

    1.0 when both masks are empty, 0.0 when exactly one is. Distances are
    measured between boundary voxel centers in mm.
    """
    pred.require_same_geometry(gt)
    if tolerance_mm < 0:
        raise GridError(f"tolerance must be >= 0, got {tolerance_mm}")
    pred_empty, gt_empty = pred.count == 0, gt.count == 0
    if pred_empty and gt_empty:
        return 1.0
    if pred_empty or gt_empty:
        return 0.0

    surf_pred = boundary_voxels(pred)
    surf_gt = boundary_voxels(gt)
    dist_to_gt = ndimage.distance_transform_edt(~surf_gt, sampling=gt.spacing)
    dist_to_pred = ndimage.distance_transform_edt(~surf_pred,
                                                  sampling=pred.spacing)
    pred_close = int((dist_to_gt[surf_pred] <= tolerance_mm).sum())
    gt_close = int((dist_to_pred[surf_gt] <= tolerance_mm).sum())
    return (pred_close + gt_close) / (int(surf_pred.sum()) + int(surf_gt.sum()))


def tumor_sensitivity_by_size(pred: Mask3, gt: Mask3,
                              bins: SizeBins = SizeBins(),
                              min_overlap_fraction: float = 0.0,
                              ) -> Tuple[List[DetectionRow], Dict[str, Tuple[int, int]]]:
    """Detection table over ground-truth components, binned by radius.

    A component counts as detected when the prediction overlaps it in at
    least one voxel; `min_overlap_fraction` optionally tightens that to a
    minimum overlapped fraction of the component.
    """
    pred.require_same_geometry(gt)
    rows: List[DetectionRow] = []
    per_bin = {label: [0, 0] for label in bins.labels}
    for comp in connected_components(gt):
        idx = tuple(comp.voxels.T)
        overlap = int(pred.data[idx].sum())
        fraction = overlap / comp.count
        detected = overlap >= 1 and fraction >= min_overlap_fraction
        rows.append(DetectionRow(radius_mm=comp.radius_mm, voxels=comp.count,
                                 detected=detected, overlap_fraction=fraction))
        label = bins.labels[bins.index_for(comp.radius_mm)]
        per_bin[label][0] += int(detected)
        per_bin[label][1] += 1
    return rows, {k: (d, t) for k, (d, t) in per_bin.items()}


def evaluate_pair(pred: Mask3, gt: Mask3, tolerance_mm: float = 2.0,
                  bins: SizeBins = SizeBins()) -> EvalResult:
    rows, per_bin = tumor_sensitivity_by_size(pred, gt, bins)
    return EvalResult(dsc=dsc(pred, gt), nsd=nsd(pred, gt, tolerance_mm),
                      tolerance_mm=tolerance_mm, detections=rows,
                      bin_sensitivity=per_bin)


def bootstrap_ci(values: Sequence[float], n_resamples: int = 10_000,
                 alpha: float = 0.05, seed: int = 20_240_101
                 ) -> Tuple[float, float]:
    """Percentile bootstrap CI of the mean over per-case values."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise GridError("bootstrap over zero cases")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
    means = arr[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)
