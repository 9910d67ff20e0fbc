"""Scale-aware prompt encoder and the prompted forward pass.

Pipeline for one image and its sparse metric depth:

1. sparse depth -> disparity -> standardized relative map
2. mask-aware patch embedding (``sparse_embed``) -> depth tokens + patch mask
3. local enrichment: FiLM of the backbone tokens conditioned on
   (depth token, backbone token), per token
4. global propagation: one transformer block per prompted decoder level;
   queries and keys come from backbone taps, values from the running scale
   features; the first block masks keys of patches without measurements
5. prompt fusion: per prompted level, FiLM of the decoder-level tap with
   gain from the prompt only and bias from (prompt, tap)
6. decode, then one global least-squares fit to the sparse metric depth

The lowest decoder level(s) are left unprompted. With ``L_p`` prompted
levels out of ``G``, levels ``G - L_p + 1 .. G`` are prompted; level ``l``
is fused into tap ``l * n`` and its propagation block is guided by tap
``l * n - 1``. Enrichment uses the guide tap of the first prompted level.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numkernel as nk
from .backbone import (BackboneConfig, attention, decode, encode, level_tokens, ln, mlp, patch_embed_rgb,
                       predict_relative)
from .depth_domain import AlignmentFit, apply_fit, depth_to_disparity, lsq_align, normalize
from .errors import ConfigError, ShapeError
from .maps import DepthMap, RelativeMap, RgbImage
from .params import ParamSet, fan_in_uniform
from .sparse_embed import encode_pyramid, init_embed_params, pyramid_inputs, pyramid_sizes


@dataclass(frozen=True)
class SapeConfig:
    prompted_levels: int | None = None   # None -> groups - 1
    pyramid_levels: int = 3
    film_hidden_mult: int = 2
    seed: int = 1
    identity_fusion: bool = True

    def __post_init__(self):
        if self.prompted_levels is not None and self.prompted_levels < 1:
            raise ConfigError("prompted_levels must be >= 1")
        if self.pyramid_levels < 1 or self.film_hidden_mult < 1:
            raise ConfigError("pyramid_levels and film_hidden_mult must be >= 1")

    def levels(self, bcfg: BackboneConfig) -> list[int]:
        """Decoder levels (1-based) that receive a scale prompt."""
        lp = bcfg.groups - 1 if self.prompted_levels is None else self.prompted_levels
        if lp > bcfg.groups:
            raise ConfigError(f"prompted_levels {lp} exceeds {bcfg.groups} decoder levels")
        return list(range(bcfg.groups - lp + 1, bcfg.groups + 1))

    def sizes(self, bcfg: BackboneConfig) -> list[int]:
        return pyramid_sizes(bcfg.patch, self.pyramid_levels)

    @classmethod
    def from_dict(cls, d: dict) -> "SapeConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown sape keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# FiLM


class FiLMHead:
    """Two small MLPs predicting per-channel gain and bias.

    ``gamma = fc2(gelu(fc1(gamma_in)))`` and likewise for ``beta``; the
    inputs are token matrices (already concatenated by the caller).
    """

    def __init__(self, ps: ParamSet, prefix: str):
        self.ps = ps
        self.prefix = prefix

    def _mlp(self, branch, x):
        p = f"{self.prefix}.{branch}"
        h = nk.gelu(nk.linear(x, self.ps[f"{p}.fc1.w"], self.ps[f"{p}.fc1.b"]))
        return nk.linear(h, self.ps[f"{p}.fc2.w"], self.ps[f"{p}.fc2.b"])

    def modulation(self, gamma_in, beta_in):
        return self._mlp("gamma", gamma_in), self._mlp("beta", beta_in)


def init_film(ps: ParamSet, rng, prefix: str, gamma_in: int, beta_in: int, dim: int, hidden: int,
              identity: bool):
    for branch, n_in in (("gamma", gamma_in), ("beta", beta_in)):
        p = f"{prefix}.{branch}"
        ps[f"{p}.fc1.w"] = fan_in_uniform(rng, n_in, (n_in, hidden))
        ps[f"{p}.fc1.b"] = fan_in_uniform(rng, n_in, (hidden,))
        if identity:
            ps[f"{p}.fc2.w"] = np.zeros((hidden, dim))
            ps[f"{p}.fc2.b"] = np.zeros(dim)
        else:
            ps[f"{p}.fc2.w"] = fan_in_uniform(rng, hidden, (hidden, dim))
            ps[f"{p}.fc2.b"] = fan_in_uniform(rng, hidden, (dim,))
        if branch == "gamma":
            ps[f"{p}.fc2.b"] = ps[f"{p}.fc2.b"] + 1.0


def film(x, gamma, beta):
    return gamma * x + beta


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"token shapes differ: {a.shape} vs {b.shape}")


def local_enrich(f_dep, f_mde, head) -> np.ndarray:
    """Per token: ``gamma(dep, mde) * mde + beta(dep, mde)``."""
    _check_pair(f_dep, f_mde)
    cond = np.concatenate([f_dep, f_mde], axis=1)
    gamma, beta = head.modulation(cond, cond)
    return film(f_mde, gamma, beta)


def prompt_fuse(f_glo, f_mde, head) -> np.ndarray:
    """Per token: ``gamma(glo) * mde + beta(glo, mde)``."""
    _check_pair(f_glo, f_mde)
    gamma, beta = head.modulation(f_glo, np.concatenate([f_glo, f_mde], axis=1))
    return film(f_mde, gamma, beta)


# ---------------------------------------------------------------------------
# propagation


def geometry_attention_block(f_glo, f_mde, ps: ParamSet, prefix: str, heads: int, patch_mask=None):
    """Transformer block whose attention pattern depends on ``f_mde`` only.

    Queries and keys are projections of the layer-normed backbone tokens,
    values of the layer-normed scale features. ``patch_mask`` (length P)
    removes keys of patches without measurements; CLS is always a key, so
    a fully masked patch set degrades to CLS-only attention.

    Returns ``(tokens, weights)`` with weights of shape (heads, P+1, P+1).
    """
    _check_pair(f_glo, f_mde)
    key_mask = None
    if patch_mask is not None:
        patch_mask = np.asarray(patch_mask, dtype=bool)
        if patch_mask.shape != (f_glo.shape[0] - 1,):
            raise ShapeError(f"patch mask {patch_mask.shape} for {f_glo.shape[0] - 1} patches")
        key_mask = np.concatenate([[True], patch_mask])
    g = ln(f_mde, ps, f"{prefix}.ln_geo")
    v = ln(f_glo, ps, f"{prefix}.ln_val")
    a, w = attention(g, g, v, ps, prefix, heads, key_mask)
    x = f_glo + a
    x = x + mlp(ln(x, ps, f"{prefix}.ln2"), ps, prefix)
    return x, w


def global_propagate(f_loc, taps, patch_mask, ps: ParamSet, bcfg: BackboneConfig, scfg: SapeConfig,
                     return_weights=False):
    """Run the propagation blocks; returns one prompt per prompted level."""
    prompts, weights = [], []
    x = f_loc
    for k, level in enumerate(scfg.levels(bcfg), start=1):
        guide = taps[bcfg.level_tap(level) - 1]
        x, w = geometry_attention_block(x, guide, ps, f"prop{k}", bcfg.heads,
                                        patch_mask if k == 1 else None)
        prompts.append(x)
        weights.append(w)
    return (prompts, weights) if return_weights else prompts


# ---------------------------------------------------------------------------
# parameters


def init_sape(bcfg: BackboneConfig, scfg: SapeConfig) -> ParamSet:
    rng = np.random.default_rng(scfg.seed)
    D = bcfg.dim
    hidden = scfg.film_hidden_mult * D
    ps = init_embed_params(rng, bcfg.patch, D, bcfg.n_patches, scfg.sizes(bcfg))
    init_film(ps, rng, "enrich", 2 * D, 2 * D, D, hidden, identity=False)
    levels = scfg.levels(bcfg)
    for k in range(1, len(levels) + 1):
        p = f"prop{k}"
        for norm in ("ln_geo", "ln_val", "ln2"):
            ps[f"{p}.{norm}.g"] = np.ones(D)
            ps[f"{p}.{norm}.b"] = np.zeros(D)
        for m in ("q", "k", "v", "o"):
            ps[f"{p}.{m}.w"] = fan_in_uniform(rng, D, (D, D))
            ps[f"{p}.{m}.b"] = fan_in_uniform(rng, D, (D,))
        H = bcfg.mlp_ratio * D
        ps[f"{p}.fc1.w"] = fan_in_uniform(rng, D, (D, H))
        ps[f"{p}.fc1.b"] = fan_in_uniform(rng, D, (H,))
        ps[f"{p}.fc2.w"] = fan_in_uniform(rng, H, (H, D))
        ps[f"{p}.fc2.b"] = fan_in_uniform(rng, H, (D,))
    for level in levels:
        init_film(ps, rng, f"fuse{level}", D, 2 * D, D, hidden, identity=scfg.identity_fusion)
    return ps


# ---------------------------------------------------------------------------
# forward


@dataclass(frozen=True, eq=False)
class PromptInputs:
    """Everything the prompted decoder needs that does not depend on prompt-encoder weights."""

    taps: list
    pyramid: list
    patch_valid: np.ndarray
    grid: tuple
    out_shape: tuple
    sparse_rel: RelativeMap


def sparse_relative(sparse_metric: DepthMap) -> RelativeMap:
    rel, _ = normalize(depth_to_disparity(sparse_metric))
    return rel


def prepare(img: RgbImage, sparse_metric: DepthMap, model: ParamSet, bcfg: BackboneConfig,
            scfg: SapeConfig) -> PromptInputs:
    if img.shape != sparse_metric.shape:
        raise ShapeError(f"image {img.shape} vs depth {sparse_metric.shape}")
    taps = encode(patch_embed_rgb(img, model, bcfg), model, bcfg)
    rel = sparse_relative(sparse_metric)
    feats, pvalid, grid = pyramid_inputs(rel, bcfg.patch, scfg.sizes(bcfg))
    return PromptInputs(taps, feats, pvalid, grid, img.shape, rel)


def prompted_relative(inputs: PromptInputs, model: ParamSet, sape: ParamSet, bcfg: BackboneConfig,
                      scfg: SapeConfig, trace: dict | None = None) -> RelativeMap:
    """Prompted decode from precomputed inputs. ``trace`` collects intermediates if given."""
    taps = inputs.taps
    levels = scfg.levels(bcfg)
    f_dep = encode_pyramid(inputs.pyramid, inputs.patch_valid, inputs.grid, sape, scfg.sizes(bcfg))
    f_loc = local_enrich(f_dep.tokens, taps[bcfg.level_tap(levels[0]) - 1], FiLMHead(sape, "enrich"))
    prompts, weights = global_propagate(f_loc, taps, inputs.patch_valid, sape, bcfg, scfg,
                                        return_weights=True)
    dec_in = level_tokens(taps, bcfg)
    for prompt, level in zip(prompts, levels):
        dec_in[level - 1] = prompt_fuse(prompt, dec_in[level - 1], FiLMHead(sape, f"fuse{level}"))
    if trace is not None:
        trace.update(f_dep=f_dep, f_loc=f_loc, prompts=prompts, attention=weights, decoder_inputs=dec_in)
    return decode(dec_in, model, bcfg, *inputs.out_shape)


def prompted_forward(img: RgbImage, sparse_metric: DepthMap, model: ParamSet, sape: ParamSet,
                     bcfg: BackboneConfig, scfg: SapeConfig
                     ) -> tuple[RelativeMap, AlignmentFit, DepthMap]:
    """Image + sparse metric depth -> (relative prediction, global fit, dense metric depth)."""
    inputs = prepare(img, sparse_metric, model, bcfg, scfg)
    rel = prompted_relative(inputs, model, sape, bcfg, scfg)
    fit = lsq_align(rel, sparse_metric)
    return rel, fit, apply_fit(rel, fit)


def baseline_forward(img: RgbImage, sparse_metric: DepthMap, model: ParamSet, bcfg: BackboneConfig
                     ) -> tuple[RelativeMap, AlignmentFit, DepthMap]:
    """Unprompted backbone prediction aligned to the same sparse depth."""
    rel = predict_relative(img, model, bcfg)
    fit = lsq_align(rel, sparse_metric)
    return rel, fit, apply_fit(rel, fit)
