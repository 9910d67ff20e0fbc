import json

import numpy as np
import pytest

from scaleprompt.backbone import encode, patch_embed_rgb, predict_relative
from scaleprompt.errors import ConfigError, ShapeError
from scaleprompt.evaluation import absrel
from scaleprompt.sape import (FiLMHead, SapeConfig, baseline_forward, geometry_attention_block, global_propagate,
                              init_sape, local_enrich, prepare, prompt_fuse, prompted_forward, prompted_relative)
from scaleprompt.scene import apply_sparse_random


class FixedHead:
    """Stand-in FiLM head returning preset gain and bias."""

    def __init__(self, gamma, beta):
        self.gamma, self.beta = gamma, beta

    def modulation(self, gamma_in, beta_in):
        g = self.gamma(gamma_in) if callable(self.gamma) else self.gamma
        b = self.beta(beta_in) if callable(self.beta) else self.beta
        return g, b


def tokens(seed, shape=(17, 8)):
    return np.random.default_rng(seed).normal(size=shape)


def test_levels_and_taps(bcfg, scfg):
    levels = scfg.levels(bcfg)
    assert levels == [2, 3, 4]
    assert [bcfg.level_tap(level) - 1 for level in levels] == [3, 5, 7]
    assert SapeConfig(prompted_levels=4).levels(bcfg) == [1, 2, 3, 4]
    with pytest.raises(ConfigError):
        SapeConfig(prompted_levels=5).levels(bcfg)
    with pytest.raises(ConfigError):
        SapeConfig(prompted_levels=0)


def test_film_identity():
    mde, dep = tokens(0), tokens(1)
    out = local_enrich(dep, mde, FixedHead(np.ones(8), np.zeros(8)))
    assert out.tobytes() == mde.tobytes()


def test_film_replacement():
    mde, dep = tokens(0), tokens(1)
    out = local_enrich(dep, mde, FixedHead(np.zeros(8), lambda cond: cond[:, :8]))
    assert np.array_equal(out, dep)


def test_film_hand_case():
    out = local_enrich(np.zeros((1, 2)), np.array([[1.0, 2.0]]), FixedHead(np.array([2.0, 0.5]), np.array([3.0, -1.0])))
    assert out.tolist() == [[5.0, 0.0]]
    out = prompt_fuse(np.zeros((1, 2)), np.array([[1.0, 2.0]]), FixedHead(np.array([2.0, 0.5]), np.array([3.0, -1.0])))
    assert out.tolist() == [[5.0, 0.0]]


def test_fuse_pure_gain():
    mde = tokens(2)
    assert np.array_equal(prompt_fuse(tokens(3), mde, FixedHead(np.full(8, 2.0), np.zeros(8))), 2 * mde)


def test_fuse_head_inputs():
    seen = {}

    class Spy:
        def modulation(self, gamma_in, beta_in):
            seen["g"], seen["b"] = gamma_in, beta_in
            n = gamma_in.shape[0]
            return np.ones((n, 8)), np.zeros((n, 8))

    glo, mde = tokens(4), tokens(5)
    prompt_fuse(glo, mde, Spy())
    assert np.array_equal(seen["g"], glo)
    assert np.array_equal(seen["b"], np.concatenate([glo, mde], axis=1))
    local_enrich(glo, mde, Spy())
    assert np.array_equal(seen["g"], np.concatenate([glo, mde], axis=1))


def test_identity_init_heads(sape_params):
    head = FiLMHead(sape_params, "fuse3")
    mde, glo = tokens(6), tokens(7)
    assert prompt_fuse(glo, mde, head).tobytes() == mde.tobytes()


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        local_enrich(tokens(0, (17, 8)), tokens(1, (16, 8)), FixedHead(np.ones(8), np.zeros(8)))


def _block_inputs(sape_params, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(16) < 0.5
    mask[0] = True
    mask[1] = False
    return tokens(seed), tokens(seed + 100), mask


@pytest.mark.parametrize("seed", range(5))
def test_attention_block_properties(sape_params, seed):
    glo, mde, mask = _block_inputs(sape_params, seed)
    _, w = geometry_attention_block(glo, mde, sape_params, "prop1", 2, mask)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    assert (w[:, :, 1:][:, :, ~mask] == 0).all()
    _, w2 = geometry_attention_block(tokens(seed + 7) * 50, mde, sape_params, "prop1", 2, mask)
    assert w.tobytes() == w2.tobytes()


def test_attention_block_all_masked(sape_params):
    glo, mde, _ = _block_inputs(sape_params, 0)
    _, w = geometry_attention_block(glo, mde, sape_params, "prop1", 2, np.zeros(16, bool))
    assert (w[:, :, 0] == 1.0).all() and not w[:, :, 1:].any()


def test_vacuous_mask_matches_unmasked(sape_params):
    glo, mde, _ = _block_inputs(sape_params, 1)
    a, wa = geometry_attention_block(glo, mde, sape_params, "prop1", 2, np.ones(16, bool))
    b, wb = geometry_attention_block(glo, mde, sape_params, "prop1", 2, None)
    assert a.tobytes() == b.tobytes() and wa.tobytes() == wb.tobytes()


def test_propagate_masks_first_block_only(bcfg, scfg, backbone, sape_params, scene):
    taps = encode(patch_embed_rgb(scene[0], backbone, bcfg), backbone, bcfg)
    mask = np.arange(16) % 3 == 0
    prompts, weights = global_propagate(tokens(9), taps, mask, sape_params, bcfg, scfg, return_weights=True)
    assert len(prompts) == 3
    assert not weights[0][:, :, 1:][:, :, ~mask].any()
    assert weights[1][:, :, 1:][:, :, ~mask].all()


def test_identity_at_init(bcfg, scfg, backbone, sape_params, scene):
    rgb, depth = scene
    sparse = apply_sparse_random(depth, fraction=0.05, seed=3)
    rel, fit, metric = prompted_forward(rgb, sparse, backbone, sape_params, bcfg, scfg)
    b_rel, b_fit, b_metric = baseline_forward(rgb, sparse, backbone, bcfg)
    assert rel.values.tobytes() == predict_relative(rgb, backbone, bcfg).values.tobytes()
    assert fit == b_fit and metric.values.tobytes() == b_metric.values.tobytes()


def test_prompt_changes_output_when_not_identity(bcfg, backbone, scene):
    scfg = SapeConfig(identity_fusion=False)
    ps = init_sape(bcfg, scfg)
    rgb, depth = scene
    sparse = apply_sparse_random(depth, fraction=0.05, seed=3)
    rel, _, metric = prompted_forward(rgb, sparse, backbone, ps, bcfg, scfg)
    assert not np.array_equal(rel.values, predict_relative(rgb, backbone, bcfg).values)
    assert np.isfinite(metric.values).all()


def test_prompted_deterministic_and_trace(bcfg, scfg, backbone, sape_params, scene):
    rgb, depth = scene
    sparse = apply_sparse_random(depth, count=40, seed=1)
    a = prompted_forward(rgb, sparse, backbone, sape_params, bcfg, scfg)
    b = prompted_forward(rgb, sparse, backbone, sape_params, bcfg, scfg)
    assert a[0].values.tobytes() == b[0].values.tobytes() and a[1] == b[1]
    trace = {}
    prompted_relative(prepare(rgb, sparse, backbone, bcfg, scfg), backbone, sape_params, bcfg, scfg, trace)
    assert trace["f_dep"].tokens.shape == (17, 8)
    assert len(trace["prompts"]) == 3 and len(trace["decoder_inputs"]) == 4


def test_init_sape_deterministic(bcfg, scfg):
    assert init_sape(bcfg, scfg).equals(init_sape(bcfg, scfg))


def test_baseline_golden(golden, bcfg, backbone, scene):
    ref = json.loads((golden / "baseline_seed1.json").read_text())
    rgb, depth = scene
    _, fit, metric = baseline_forward(rgb, apply_sparse_random(depth, fraction=0.05, seed=3), backbone, bcfg)
    assert fit.scale == ref["scale"] and fit.shift == ref["shift"]
    assert absrel(metric, depth) == ref["baseline_absrel"]
