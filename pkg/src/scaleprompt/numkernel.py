"""Small deterministic dense kernels shared by the neural modules.

Everything runs in float64. ``matmul`` goes through ``np.einsum`` without
path optimisation so no BLAS call (and no thread-dependent reduction order)
is involved; results are bitwise reproducible regardless of how many
threads the host BLAS would use.

Resize convention (align_corners=False): output pixel ``o`` samples the
source at ``x = (o + 0.5) * in / out - 0.5``, clamped to ``[0, in - 1]``,
and interpolates as ``v0 + w * (v1 - v0)``. The lerp form keeps constant
maps bitwise constant and makes same-size resizes exact copies.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyRow, ShapeError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return np.einsum("ik,kj->ij", a, b, optimize=False)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w + b`` over the last axis of a 2-D token matrix."""
    y = matmul(x, w)
    if b is not None:
        y = y + b
    return y


def softmax_rows(logits, mask=None, fallback: str | None = None) -> np.ndarray:
    """Row-wise softmax with an optional boolean keep-mask.

    Masked entries come out as exact zeros. A row with no unmasked entry
    raises ``EmptyRow`` unless ``fallback="uniform"`` is given, in which case
    that row is uniform over all of its entries.
    """
    z = np.array(logits, dtype=np.float64, copy=True)
    if z.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D array, got {z.shape}")
    if mask is None:
        keep = np.ones(z.shape, dtype=bool)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != z.shape:
            raise ShapeError(f"mask shape {keep.shape} != logits shape {z.shape}")
    empty = ~keep.any(axis=1)
    if empty.any():
        if fallback != "uniform":
            raise EmptyRow(f"rows {np.flatnonzero(empty).tolist()} are fully masked")
        keep = keep.copy()
        keep[empty] = True
        z[empty] = 0.0
    z[~keep] = -np.inf
    z -= z.max(axis=1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(x, gain, bias, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


def gelu(x):
    """Tanh-approximated GELU, the smooth ramp used in every MLP."""
    return 0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x ** 3)))


def _axis_weights(n_in: int, n_out: int):
    o = np.arange(n_out, dtype=np.float64)
    src = (o + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x, out_h: int, out_w: int) -> np.ndarray:
    """Resize the two leading axes of ``x``; trailing axes are carried along."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ShapeError(f"bilinear_resize expects at least 2 dims, got {x.shape}")
    h, w = x.shape[:2]
    if min(h, w, out_h, out_w) < 1:
        raise ShapeError("sizes must be >= 1")
    if (h, w) == (out_h, out_w):
        return x.copy()
    r0, r1, rw = _axis_weights(h, out_h)
    c0, c1, cw = _axis_weights(w, out_w)
    extra = (1,) * (x.ndim - 2)
    rw = rw.reshape((-1, 1) + extra)
    cw = cw.reshape((1, -1) + extra)
    top = x[r0]
    rows = top + rw * (x[r1] - top)
    left = rows[:, c0]
    return left + cw * (rows[:, c1] - left)
