"""Metric depth <-> disparity <-> normalized relative domain, and global alignment.

The relative domain is disparity standardized by its population mean and
standard deviation over valid pixels. Metric recovery fits one global scale
and shift in disparity space by ordinary least squares and inverts.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyInput, EmptySparseInput, ScaleDegenerate, ShapeError
from .maps import DepthMap, RelativeMap

SIGMA_FLOOR = 1e-8
DISP_FLOOR = 1e-6


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float


@dataclass(frozen=True)
class AlignmentFit:
    scale: float
    shift: float
    rms_residual: float
    n_points: int

    def to_dict(self) -> dict:
        d = asdict(self)
        return {"s": d["scale"], "t": d["shift"], "rms_residual": d["rms_residual"], "n_points": d["n_points"]}


def depth_to_disparity(d: DepthMap) -> DepthMap:
    disp = np.zeros(d.shape)
    disp[d.valid] = 1.0 / d.values[d.valid]
    return DepthMap(disp, d.valid)


def norm_stats(values: np.ndarray, mask: np.ndarray) -> NormStats:
    x = values[mask]
    if x.size == 0:
        raise EmptyInput("normalization needs at least one valid pixel")
    mu = x.mean()
    sigma = np.sqrt(((x - mu) ** 2).mean())
    return NormStats(float(mu), float(max(sigma, SIGMA_FLOOR)))


def normalize(disp) -> tuple[RelativeMap, NormStats]:
    """Standardize valid pixels to zero mean, unit population std."""
    stats = norm_stats(disp.values, disp.valid)
    out = np.where(disp.valid, (disp.values - stats.mu) / stats.sigma, 0.0)
    return RelativeMap(out, disp.valid), stats


def denormalize(rel: RelativeMap, stats: NormStats) -> np.ndarray:
    return stats.mu + stats.sigma * rel.values


def lsq_align(pred: RelativeMap, sparse_metric: DepthMap) -> AlignmentFit:
    """Least-squares ``scale * pred + shift ~= 1 / depth`` over the sparse pixels.

    Solved in centred closed form, which is the normal-equations solution
    for the two-parameter affine model but better conditioned.
    """
    if pred.shape != sparse_metric.shape:
        raise ShapeError(f"pred {pred.shape} vs sparse {sparse_metric.shape}")
    omega = sparse_metric.valid
    n = int(omega.sum())
    if n < 2:
        raise EmptySparseInput(f"alignment needs >= 2 sparse points, got {n}")
    if not pred.valid[omega].all():
        raise EmptyInput("relative prediction is invalid at some sparse pixels")
    x = pred.values[omega]
    y = 1.0 / sparse_metric.values[omega]
    xm = x.mean()
    ym = y.mean()
    xc = x - xm
    sxx = float(xc @ xc)
    scale_x = float(np.abs(x).max())
    if sxx <= n * (64 * np.finfo(float).eps * max(scale_x, 1e-300)) ** 2:
        raise ScaleDegenerate("relative prediction is constant over the sparse pixels")
    s = float(xc @ (y - ym)) / sxx
    t = float(ym - s * xm)
    r = s * x + t - y
    return AlignmentFit(s, t, float(np.sqrt((r * r).mean())), n)


def apply_fit(pred: RelativeMap, fit: AlignmentFit) -> DepthMap:
    """Metric depth from a relative map; disparity is floored so depth stays positive."""
    disp = np.maximum(fit.scale * pred.values + fit.shift, DISP_FLOOR)
    return DepthMap(1.0 / disp, pred.valid)
