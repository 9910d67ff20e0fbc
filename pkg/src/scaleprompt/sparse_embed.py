"""Mask-aware embedding of a sparse relative depth map into patch tokens.

Each patch is summarized at several sizes (full, 1/2, 1/4 of the patch
side by default). At every size the valid pixels are mean-pooled, the
holes are nearest-filled, and the filled values concatenated with the
validity mask go through a per-size linear layer. The per-size features
are averaged, a learned positional embedding is added, and a CLS token is
formed from the mean of the patch features.

Nothing here reads the stored value of an invalid pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import ShapeError
from .params import ParamSet, fan_in_uniform


@dataclass(frozen=True, eq=False)
class PatchFeatures:
    tokens: np.ndarray       # (P + 1) x D, row 0 is CLS
    patch_valid: np.ndarray  # (P,) bool
    grid: tuple


def patchify(values, valid, patch: int):
    """Split H x W arrays into row-major (P, patch, patch) blocks."""
    values = np.asarray(values)
    valid = np.asarray(valid, dtype=bool)
    h, w = values.shape
    if h % patch or w % patch:
        raise ShapeError(f"{h}x{w} is not divisible by patch {patch}")
    rows, cols = h // patch, w // patch

    def split(a):
        return a.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(rows * cols, patch, patch)

    return split(values), split(valid), (rows, cols)


def patch_validity(mask_blocks) -> np.ndarray:
    m = np.asarray(mask_blocks, dtype=bool)
    return m.reshape(m.shape[0], -1).any(axis=1)


def nearest_fill(values, mask) -> np.ndarray:
    """Fill invalid pixels from the nearest valid pixel (Euclidean).

    Ties go to the smaller row, then the smaller column. A block with no
    valid pixel becomes all zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, values, 0.0)
    if mask.all() or not mask.any():
        return out
    vr, vc = np.nonzero(mask)          # row-major, so argmin's first hit is the tie winner
    ir, ic = np.nonzero(~mask)
    d2 = (ir[:, None] - vr[None, :]) ** 2 + (ic[:, None] - vc[None, :]) ** 2
    src = np.argmin(d2, axis=1)
    out[ir, ic] = values[vr[src], vc[src]]
    return out


def _bins(n, k):
    return [(i * n // k, (i + 1) * n // k) for i in range(k)]


def pool_valid_mean(vals, mask, size: int):
    """Mean over valid pixels in each of ``size x size`` cells of every block.

    Cells without a valid pixel come out invalid.
    """
    p = vals.shape[1]
    n_blocks = vals.shape[0]
    if size == p:
        return np.where(mask, vals, 0.0), mask.copy()
    out = np.zeros((n_blocks, size, size))
    out_mask = np.zeros((n_blocks, size, size), dtype=bool)
    v = np.where(mask, vals, 0.0)
    for i, (r0, r1) in enumerate(_bins(p, size)):
        for j, (c0, c1) in enumerate(_bins(p, size)):
            cnt = mask[:, r0:r1, c0:c1].sum(axis=(1, 2))
            tot = v[:, r0:r1, c0:c1].sum(axis=(1, 2))
            ok = cnt > 0
            out[ok, i, j] = tot[ok] / cnt[ok]
            out_mask[:, i, j] = ok
    return out, out_mask


def pyramid_sizes(patch: int, levels: int = 3) -> list[int]:
    return [max(patch >> k, 1) for k in range(levels)]


def pyramid_inputs(rel, patch: int, sizes) -> tuple[list[np.ndarray], np.ndarray, tuple]:
    """Per-size linear-layer inputs ``[filled values | mask]`` of shape (P, 2 s^2).

    Independent of learned parameters, so callers that re-run the encoder
    many times on one sparse map may compute this once.
    """
    vals, mask, grid = patchify(rel.values, rel.valid, patch)
    feats = []
    for s in sizes:
        pv, pm = pool_valid_mean(vals, mask, s)
        filled = np.stack([nearest_fill(pv[k], pm[k]) for k in range(pv.shape[0])])
        feats.append(np.concatenate([filled.reshape(len(filled), -1),
                                     pm.reshape(len(pm), -1).astype(np.float64)], axis=1))
    return feats, patch_validity(mask), grid


def init_embed_params(rng, patch: int, dim: int, n_patches: int, sizes, prefix="embed") -> ParamSet:
    ps = ParamSet()
    for s in sizes:
        fan_in = 2 * s * s
        ps[f"{prefix}.w{s}"] = fan_in_uniform(rng, fan_in, (fan_in, dim))
        ps[f"{prefix}.b{s}"] = fan_in_uniform(rng, fan_in, (dim,))
    ps[f"{prefix}.pos"] = rng.normal(0.0, 0.02, size=(n_patches + 1, dim))
    return ps


def encode_pyramid(feats, patch_valid, grid, params: ParamSet, sizes, prefix="embed") -> PatchFeatures:
    acc = None
    for s, x in zip(sizes, feats):
        y = nk.linear(x, params[f"{prefix}.w{s}"], params[f"{prefix}.b{s}"])
        acc = y if acc is None else acc + y
    patches = acc / len(sizes)
    pos = params[f"{prefix}.pos"]
    cls = patches.mean(axis=0, keepdims=True) + pos[:1]
    tokens = np.concatenate([cls, patches + pos[1:]], axis=0)
    return PatchFeatures(tokens, patch_valid, grid)


def embed_patches(rel, params: ParamSet, patch: int, sizes, prefix="embed") -> PatchFeatures:
    if not sizes:
        raise ShapeError("at least one pyramid size is required")
    feats, pvalid, grid = pyramid_inputs(rel, patch, sizes)
    return encode_pyramid(feats, pvalid, grid, params, sizes, prefix)
