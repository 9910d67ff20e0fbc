"""Toy ViT-style monocular depth backbone with a multi-level decoder.

The encoder is ``groups * blocks_per_group`` pre-norm transformer blocks;
the output of every block is kept as a tap. Decoder level ``l`` (1-based,
lowest first) reads tap ``l * blocks_per_group``, i.e. the last block of
encoder group ``l``.

Decoder: per level, drop CLS, lay the patch tokens out on the patch grid,
project to the fusion width, resize to a common grid of twice the patch
grid, then sum coarse-to-fine (deepest level first) with a residual MLP
refinement per level. A linear head gives one channel, resized to the
requested output size. The output is an unconstrained relative disparity.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, ShapeError
from .maps import RelativeMap, RgbImage
from .params import ParamSet, uniform

INIT_BOUND = 0.05


@dataclass(frozen=True)
class BackboneConfig:
    patch: int = 8
    dim: int = 8
    heads: int = 2
    groups: int = 4
    blocks_per_group: int = 2
    mlp_ratio: int = 2
    seed: int = 0
    height: int = 32
    width: int = 32

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.groups < 2 or self.blocks_per_group < 1:
            raise ConfigError("need groups >= 2 and blocks_per_group >= 1")
        if self.height % self.patch or self.width % self.patch:
            raise ConfigError("image size must be divisible by patch")
        if min(self.patch, self.mlp_ratio, self.height, self.width) < 1:
            raise ConfigError("sizes must be positive")

    @property
    def n_blocks(self) -> int:
        return self.groups * self.blocks_per_group

    @property
    def grid(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def n_patches(self) -> int:
        r, c = self.grid
        return r * c

    def level_tap(self, level: int) -> int:
        """Tap index read by decoder level ``level`` (1-based)."""
        return level * self.blocks_per_group

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown backbone keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def init_backbone(cfg: BackboneConfig) -> ParamSet:
    for level in range(1, cfg.groups + 1):
        assert 1 <= cfg.level_tap(level) <= cfg.n_blocks
    rng = np.random.default_rng(cfg.seed)
    D, P = cfg.dim, cfg.n_patches
    H = D * cfg.mlp_ratio
    ps = ParamSet()

    def lin(name, n_in, n_out):
        ps[f"{name}.w"] = uniform(rng, (n_in, n_out), INIT_BOUND)
        ps[f"{name}.b"] = uniform(rng, (n_out,), INIT_BOUND)

    lin("patch", 3 * cfg.patch * cfg.patch, D)
    ps["patch.cls"] = uniform(rng, (D,), INIT_BOUND)
    ps["patch.pos"] = uniform(rng, (P + 1, D), INIT_BOUND)
    for j in range(1, cfg.n_blocks + 1):
        p = f"enc{j}"
        ps[f"{p}.ln1.g"] = np.ones(D)
        ps[f"{p}.ln1.b"] = np.zeros(D)
        for m in ("q", "k", "v", "o"):
            lin(f"{p}.{m}", D, D)
        ps[f"{p}.ln2.g"] = np.ones(D)
        ps[f"{p}.ln2.b"] = np.zeros(D)
        lin(f"{p}.fc1", D, H)
        lin(f"{p}.fc2", H, D)
    for level in range(1, cfg.groups + 1):
        p = f"dec{level}"
        lin(f"{p}.proj", D, D)
        lin(f"{p}.ref1", D, 2 * D)
        lin(f"{p}.ref2", 2 * D, D)
    lin("head", D, 1)
    return ps


# ---------------------------------------------------------------------------
# shared transformer pieces


def attention(q_src, k_src, v_src, ps: ParamSet, prefix: str, heads: int, key_mask=None):
    """Multi-head attention. Returns ``(output, weights)`` with weights (heads, T, T).

    ``key_mask`` is a boolean keep-vector over key tokens; masked keys get
    zero weight in every row.
    """
    q = nk.linear(q_src, ps[f"{prefix}.q.w"], ps[f"{prefix}.q.b"])
    k = nk.linear(k_src, ps[f"{prefix}.k.w"], ps[f"{prefix}.k.b"])
    v = nk.linear(v_src, ps[f"{prefix}.v.w"], ps[f"{prefix}.v.b"])
    T, D = q.shape
    hd = D // heads
    scale = 1.0 / np.sqrt(hd)
    mask = None if key_mask is None else np.broadcast_to(np.asarray(key_mask, dtype=bool), (T, k.shape[0]))
    outs, weights = [], []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        logits = nk.matmul(q[:, sl], k[:, sl].T) * scale
        a = nk.softmax_rows(logits, mask)
        weights.append(a)
        outs.append(nk.matmul(a, v[:, sl]))
    out = nk.linear(np.concatenate(outs, axis=1), ps[f"{prefix}.o.w"], ps[f"{prefix}.o.b"])
    return out, np.stack(weights)


def mlp(x, ps: ParamSet, prefix: str):
    h = nk.gelu(nk.linear(x, ps[f"{prefix}.fc1.w"], ps[f"{prefix}.fc1.b"]))
    return nk.linear(h, ps[f"{prefix}.fc2.w"], ps[f"{prefix}.fc2.b"])


def ln(x, ps: ParamSet, prefix: str):
    return nk.layer_norm(x, ps[f"{prefix}.g"], ps[f"{prefix}.b"])


def encoder_block(x, ps: ParamSet, prefix: str, heads: int):
    h = ln(x, ps, f"{prefix}.ln1")
    a, w = attention(h, h, h, ps, prefix, heads)
    x = x + a
    x = x + mlp(ln(x, ps, f"{prefix}.ln2"), ps, prefix)
    return x, w


# ---------------------------------------------------------------------------
# forward passes


def patch_embed_rgb(img: RgbImage, ps: ParamSet, cfg: BackboneConfig) -> np.ndarray:
    px = img.pixels
    h, w = px.shape[:2]
    p = cfg.patch
    if h % p or w % p:
        raise ShapeError(f"{h}x{w} image is not divisible by patch {p}")
    if (h, w) != (cfg.height, cfg.width):
        raise ShapeError(f"backbone configured for {cfg.height}x{cfg.width}, got {h}x{w}")
    rows, cols = h // p, w // p
    flat = px.reshape(rows, p, cols, p, 3).transpose(0, 2, 1, 3, 4).reshape(rows * cols, p * p * 3)
    patches = nk.linear(flat, ps["patch.w"], ps["patch.b"])
    tokens = np.concatenate([ps["patch.cls"][None, :], patches], axis=0)
    return tokens + ps["patch.pos"]


def encode(tokens, ps: ParamSet, cfg: BackboneConfig, return_weights=False):
    """Run every block; returns the list of taps (index 0 = embedded input).

    With ``return_weights`` also returns the attention weights per block.
    """
    if tokens.shape != (cfg.n_patches + 1, cfg.dim):
        raise ShapeError(f"tokens {tokens.shape} do not match config")
    taps = [tokens]
    weights = []
    x = tokens
    for j in range(1, cfg.n_blocks + 1):
        x, w = encoder_block(x, ps, f"enc{j}", cfg.heads)
        taps.append(x)
        weights.append(w)
    return (taps, weights) if return_weights else taps


def level_tokens(taps, cfg: BackboneConfig) -> list[np.ndarray]:
    return [taps[cfg.level_tap(level)] for level in range(1, cfg.groups + 1)]


def decode(levels, ps: ParamSet, cfg: BackboneConfig, out_h: int, out_w: int) -> RelativeMap:
    """Decode one token set per level (lowest level first) into a relative map."""
    if len(levels) != cfg.groups:
        raise ShapeError(f"expected {cfg.groups} levels, got {len(levels)}")
    rows, cols = cfg.grid
    gh, gw = 2 * rows, 2 * cols
    feats = []
    for level, tok in enumerate(levels, start=1):
        x = nk.linear(tok[1:], ps[f"dec{level}.proj.w"], ps[f"dec{level}.proj.b"])
        x = nk.bilinear_resize(x.reshape(rows, cols, -1), gh, gw)
        feats.append(x.reshape(gh * gw, -1))
    h = None
    for level in range(cfg.groups, 0, -1):
        h = feats[level - 1] if h is None else h + feats[level - 1]
        r = nk.gelu(nk.linear(h, ps[f"dec{level}.ref1.w"], ps[f"dec{level}.ref1.b"]))
        h = h + nk.linear(r, ps[f"dec{level}.ref2.w"], ps[f"dec{level}.ref2.b"])
    out = nk.linear(h, ps["head.w"], ps["head.b"]).reshape(gh, gw)
    return RelativeMap.dense(nk.bilinear_resize(out, out_h, out_w))


def predict_relative(img: RgbImage, ps: ParamSet, cfg: BackboneConfig) -> RelativeMap:
    taps = encode(patch_embed_rgb(img, ps, cfg), ps, cfg)
    h, w = img.shape
    return decode(level_tokens(taps, cfg), ps, cfg, h, w)
