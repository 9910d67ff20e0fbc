"""Training losses on the relative domain, with analytic gradients.

Both operands are standardized (population mean / std over the loss mask)
before comparison, so every loss is invariant to positive affine maps of
the raw prediction. Gradients are taken with respect to the raw prediction
and include the standardization chain. At an exact L1 kink the subgradient
0 is used.

Each ``loss_*`` returns ``(value, grad)``; ``grad`` is an array shaped like
the prediction (zero outside the mask), or ``None`` with ``grad=False``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import partial

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .depth_domain import SIGMA_FLOOR
from .errors import EmptyInput, ShapeError

RSSIM_WINDOW = 7
RSSIM_C = 1e-4


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.5
    lambda3: float = 0.5
    lambda4: float = 0.5

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class LossReport:
    ssi: float
    gm: float
    anchor: float
    rssim: float
    total: float
    n_omega: int
    n_sparse: int

    def to_dict(self):
        return asdict(self)


def _prep(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not pred.shape == gt.shape == mask.shape or pred.ndim != 2:
        raise ShapeError(f"pred {pred.shape}, gt {gt.shape}, mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise EmptyInput("loss mask is empty")
    return pred, gt, mask, n


def standardize(x, mask):
    """Return ``(x_tilde, backward)``; x_tilde is zero outside the mask.

    ``backward(g)`` maps dL/dx_tilde to dL/dx.
    """
    v = x[mask]
    mu = v.mean()
    sd = np.sqrt(((v - mu) ** 2).mean())
    sigma = max(sd, SIGMA_FLOOR)
    xt = np.where(mask, (x - mu) / sigma, 0.0)

    def backward(g):
        gm = g[mask]
        out = gm - gm.mean()
        if sd > SIGMA_FLOOR:
            out = out - xt[mask] * (gm * xt[mask]).mean()
        full = np.zeros_like(x)
        full[mask] = out / sigma
        return full

    return xt, backward


def loss_ssi(pred, gt, mask, grad=True):
    """Mean absolute difference of the standardized maps over the mask."""
    pred, gt, mask, n = _prep(pred, gt, mask)
    pt, back = standardize(pred, mask)
    gtt, _ = standardize(gt, mask)
    diff = np.where(mask, pt - gtt, 0.0)
    value = float(np.abs(diff[mask]).sum() / n)
    if not grad:
        return value, None
    return value, back(np.sign(diff) / n)


def loss_anchor(pred, gt_sparse, mask_s, grad=True):
    """The SSI loss restricted to the sparse anchors (statistics from the anchors)."""
    return loss_ssi(pred, gt_sparse, mask_s, grad)


def _gm_terms(diff, mask):
    mx = mask[:, 1:] & mask[:, :-1]
    my = mask[1:, :] & mask[:-1, :]
    dx = np.where(mx, diff[:, 1:] - diff[:, :-1], 0.0)
    dy = np.where(my, diff[1:, :] - diff[:-1, :], 0.0)
    return dx, dy, mx, my


def loss_gm(pred, gt, mask, grad=True):
    """Gradient matching: forward differences of the residual, both pixels in the mask.

    The sum of |dx| + |dy| is divided by the mask size; the last column has
    no x-term and the last row no y-term.
    """
    pred, gt, mask, n = _prep(pred, gt, mask)
    if min(pred.shape) < 2:
        raise ShapeError("gradient matching needs at least a 2 x 2 map")
    pt, back = standardize(pred, mask)
    gtt, _ = standardize(gt, mask)
    dx, dy, mx, my = _gm_terms(pt - gtt, mask)
    value = float((np.abs(dx).sum() + np.abs(dy).sum()) / n)
    if not grad:
        return value, None
    sx = np.sign(dx) / n
    sy = np.sign(dy) / n
    g = np.zeros_like(pred)
    g[:, 1:] += sx
    g[:, :-1] -= sx
    g[1:, :] += sy
    g[:-1, :] -= sy
    return value, back(g)


def loss_rssim(pred, gt, mask, grad=True, window=RSSIM_WINDOW, c=RSSIM_C):
    """Windowed relative-structure SSIM loss on the standardized maps.

    Per window (stride 1, clipped to the map size) over the valid pixels:
    ``1 - (2 cov + C) / (var_gt + var_pred + C)``, evaluated in the
    algebraically equal form ``var(gt - pred) / (var_gt + var_pred + C)``
    which is non-negative by construction. Windows with fewer than two
    valid pixels are skipped; the loss is the mean over the rest.
    """
    pred, gt, mask, n = _prep(pred, gt, mask)
    pt, back = standardize(pred, mask)
    gtt, _ = standardize(gt, mask)
    wh, ww = min(window, pred.shape[0]), min(window, pred.shape[1])
    P = sliding_window_view(pt, (wh, ww))
    G = sliding_window_view(gtt, (wh, ww))
    M = sliding_window_view(mask, (wh, ww)).astype(np.float64)
    cnt = M.sum(axis=(2, 3))
    use = cnt >= 2
    k = int(use.sum())
    if k == 0:
        raise EmptyInput("no window has two valid pixels")
    nw = np.where(use, cnt, 1.0)[..., None, None]
    mp = (M * P).sum(axis=(2, 3), keepdims=True) / nw
    mg = (M * G).sum(axis=(2, 3), keepdims=True) / nw
    dp = M * (P - mp)
    dg = M * (G - mg)
    de = dg - dp
    var_p = (dp * dp).sum(axis=(2, 3), keepdims=True) / nw
    var_g = (dg * dg).sum(axis=(2, 3), keepdims=True) / nw
    var_e = (de * de).sum(axis=(2, 3), keepdims=True) / nw
    den = var_p + var_g + c
    per_window = (var_e / den)[..., 0, 0]
    value = float(per_window[use].sum() / k)
    if not grad:
        return value, None
    # d/dp of var_e/den per window pixel; masked-out pixels carry M = 0
    contrib = (-2.0 * de / nw) / den - (var_e / den ** 2) * (2.0 * dp / nw)
    contrib = contrib * use[..., None, None] / k
    g = np.zeros_like(pred)
    nh, nwid = use.shape
    for a in range(wh):
        for b in range(ww):
            g[a:a + nh, b:b + nwid] += contrib[:, :, a, b]
    return value, back(g)


def loss_total(pred, gt, mask, gt_sparse, mask_s, weights: LossWeights = LossWeights(), grad=False):
    """Weighted sum of the four losses. Returns ``(LossReport, grad or None)``."""
    ssi, g1 = loss_ssi(pred, gt, mask, grad)
    gm, g2 = loss_gm(pred, gt, mask, grad)
    anchor, g3 = loss_anchor(pred, gt_sparse, mask_s, grad)
    rssim, g4 = loss_rssim(pred, gt, mask, grad)
    w = weights
    total = w.lambda1 * ssi + w.lambda2 * gm + w.lambda3 * anchor + w.lambda4 * rssim
    report = LossReport(ssi, gm, anchor, rssim, total, int(np.sum(mask)), int(np.sum(mask_s)))
    g = None
    if grad:
        g = w.lambda1 * g1 + w.lambda2 * g2 + w.lambda3 * g3 + w.lambda4 * g4
    return report, g


# ---------------------------------------------------------------------------
# finite-difference check


def ssi_kinks(pred, gt, mask):
    pt, _ = standardize(np.asarray(pred, float), mask)
    gtt, _ = standardize(np.asarray(gt, float), mask)
    return (pt - gtt)[mask]


def gm_kinks(pred, gt, mask):
    pt, _ = standardize(np.asarray(pred, float), mask)
    gtt, _ = standardize(np.asarray(gt, float), mask)
    dx, dy, mx, my = _gm_terms(pt - gtt, mask)
    return np.concatenate([dx[mx], dy[my]])


def grad_check(fn, pred, h: float = 1e-6, n_pixels: int = 64, seed: int = 0, kinks=None) -> float:
    """Largest relative error between ``fn``'s analytic gradient and central differences.

    ``fn(pred) -> (value, grad)``. Checks a seeded subset of at least
    ``n_pixels`` pixels (all of them if the map is smaller). ``kinks(pred)``
    returns the arguments of every absolute value in the loss; a pixel
    whose +-10h perturbation flips the sign of any of them is skipped.
    Relative error is ``|a - f| / max(|a|, |f|, 1e-8)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    pred = np.array(pred, dtype=np.float64)
    _, analytic = fn(pred)
    n = pred.size
    idx = np.random.default_rng(seed).choice(n, size=min(max(n_pixels, 64), n), replace=False)
    base_sign = None if kinks is None else np.sign(kinks(pred))
    worst = 0.0
    for i in np.sort(idx):
        e = np.zeros(n)
        e[i] = 1.0
        e = e.reshape(pred.shape)
        if kinks is not None:
            if (np.sign(kinks(pred + 10 * h * e)) != base_sign).any() or \
               (np.sign(kinks(pred - 10 * h * e)) != base_sign).any():
                continue
        fd = (fn(pred + h * e)[0] - fn(pred - h * e)[0]) / (2 * h)
        a = analytic.flat[i]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
    return worst


def gradcheck_suite(seed: int = 0, size: int = 8, h: float = 1e-6, corrupt: bool = False) -> dict[str, float]:
    """Run ``grad_check`` for the four losses on seeded ``size x size`` maps."""
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(size, size))
    gt = rng.normal(size=(size, size)) + 0.5 * pred
    mask = rng.random((size, size)) > 0.1
    mask_s = mask & (rng.random((size, size)) < 0.3)
    if mask_s.sum() < 2:
        mask_s.flat[np.flatnonzero(mask)[:2]] = True

    def wrap(loss, target, m):
        def fn(p):
            v, g = loss(p, target, m)
            if corrupt:
                g = g * 1.01 + 1e-3
            return v, g
        return fn

    cases = {
        "ssi": (wrap(loss_ssi, gt, mask), partial(ssi_kinks, gt=gt, mask=mask)),
        "gm": (wrap(loss_gm, gt, mask), partial(gm_kinks, gt=gt, mask=mask)),
        "anchor": (wrap(loss_anchor, gt, mask_s), partial(ssi_kinks, gt=gt, mask=mask_s)),
        "rssim": (wrap(loss_rssim, gt, mask), None),
    }
    return {name: grad_check(fn, pred, h=h, seed=seed, kinks=k) for name, (fn, k) in cases.items()}
