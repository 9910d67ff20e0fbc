"""Metric-space error measures and the regional scale-consistency analysis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, ShapeError
from .maps import DepthMap


@dataclass(frozen=True)
class MetricsReport:
    absrel: float
    rmse: float
    n_pixels: int

    def to_dict(self):
        return {"absrel": self.absrel, "rmse": self.rmse, "n_pixels": self.n_pixels}


@dataclass(frozen=True)
class ScaleMap:
    grid: tuple
    scales: list          # row-major; None where the region has no valid pixel
    counts: list
    variance: float

    def to_dict(self):
        return {"grid": list(self.grid), "scales": self.scales, "counts": self.counts,
                "variance": self.variance}

    def as_array(self) -> np.ndarray:
        """Scales as a rows x cols float array, NaN for absent regions."""
        vals = [np.nan if s is None else s for s in self.scales]
        return np.asarray(vals, dtype=np.float64).reshape(self.grid)


def _joint(pred: DepthMap, gt: DepthMap):
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    m = pred.valid & gt.valid
    if not m.any():
        raise EmptyInput("no jointly valid pixels")
    return pred.values[m], gt.values[m]


def absrel(pred: DepthMap, gt: DepthMap) -> float:
    p, g = _joint(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def rmse(pred: DepthMap, gt: DepthMap) -> float:
    p, g = _joint(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def evaluate(pred: DepthMap, gt: DepthMap) -> MetricsReport:
    p, _ = _joint(pred, gt)
    return MetricsReport(absrel(pred, gt), rmse(pred, gt), int(p.size))


def region_bounds(n: int, parts: int):
    return [(i * n // parts, (i + 1) * n // parts) for i in range(parts)]


def scale_consistency(gt: DepthMap, pred: DepthMap, grid=(4, 4)) -> ScaleMap:
    """Per-region median of gt / pred, and the population variance of those medians.

    Regions split the image as evenly as integer bounds allow. A region with
    no jointly valid pixel is recorded as ``None`` and left out of the
    variance.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    rows, cols = grid
    h, w = gt.shape
    if not (1 <= rows <= h and 1 <= cols <= w):
        raise ShapeError(f"grid {grid} does not fit a {h}x{w} map")
    joint = gt.valid & pred.valid
    scales, counts = [], []
    for r0, r1 in region_bounds(h, rows):
        for c0, c1 in region_bounds(w, cols):
            m = joint[r0:r1, c0:c1]
            counts.append(int(m.sum()))
            if not m.any():
                scales.append(None)
                continue
            ratio = gt.values[r0:r1, c0:c1][m] / pred.values[r0:r1, c0:c1][m]
            scales.append(float(np.median(ratio)))
    present = np.array([s for s in scales if s is not None])
    if present.size == 0:
        raise EmptyInput("no region has valid pixels")
    return ScaleMap((rows, cols), scales, counts, float(np.var(present)))
