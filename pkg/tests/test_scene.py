import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaleprompt.errors import ConfigError, EmptyInput
from scaleprompt.maps import DepthMap
from scaleprompt.scene import (PatternConfig, apply_hole, apply_mixed, apply_pattern, apply_range,
                               apply_sparse_lidar, apply_sparse_random, gen_scene, lidar_rows,
                               nearest_rank, sample_training_pattern)


def rank_oracle(values, pct):
    """Smallest value whose cumulative count reaches pct% of N (nearest-rank definition)."""
    s = sorted(values)
    n = len(s)
    for i, v in enumerate(s, start=1):
        if 100 * i >= pct * n:
            return v
    return s[-1]


def ramp(h=10, w=10):
    return DepthMap.dense(np.arange(1, h * w + 1, dtype=float).reshape(h, w) / 10)


def assert_restriction(src: DepthMap, out: DepthMap):
    assert np.array_equal(out.values[out.valid], src.values[out.valid])
    assert not (out.valid & ~src.valid).any()


# --- scenes -----------------------------------------------------------------

def test_scene_background_only():
    rgb, d = gen_scene(5, 32, 32, 0)
    assert d.valid.all()
    # a plane seen through a pinhole: inverse depth is affine in pixel coordinates
    inv = 1.0 / d.values
    v, u = np.mgrid[0:32, 0:32]
    A = np.stack([u.ravel(), v.ravel(), np.ones(u.size)], 1)
    coef, *_ = np.linalg.lstsq(A, inv.ravel(), rcond=None)
    np.testing.assert_allclose(A @ coef, inv.ravel(), atol=1e-12)


def test_scene_determinism():
    a = gen_scene(3, 32, 48, 4)
    b = gen_scene(3, 32, 48, 4)
    assert a[0].pixels.tobytes() == b[0].pixels.tobytes()
    assert a[1].values.tobytes() == b[1].values.tobytes()


def test_scene_golden(golden, scene):
    ref = json.loads((golden / "scene_seed1.json").read_text())
    _, d = scene
    assert float(d.values.min()) == ref["depth_min"]
    assert float(d.values.max()) == ref["depth_max"]


@pytest.mark.parametrize("seed", range(5))
def test_scene_contracts(seed):
    rgb, d = gen_scene(seed, 32, 32, 3)
    assert d.valid.all() and np.isfinite(d.values).all() and (d.values > 0).all()
    assert rgb.pixels.shape == (32, 32, 3)
    assert rgb.pixels.min() >= 0 and rgb.pixels.max() <= 1


def test_scene_rejects_bad_args():
    with pytest.raises(ConfigError):
        gen_scene(0, 8, 8, 1)
    with pytest.raises(ConfigError):
        gen_scene(0, 32, 32, -1)


# --- pattern config -----------------------------------------------------------

def test_pattern_config_validation():
    with pytest.raises(ConfigError):
        PatternConfig("range", lo_pct=80, hi_pct=20)
    with pytest.raises(ConfigError):
        PatternConfig("sparse_random")
    with pytest.raises(ConfigError):
        PatternConfig("sparse_random", count=-1)
    with pytest.raises(ConfigError):
        PatternConfig("nope")
    with pytest.raises(ConfigError):
        PatternConfig.from_dict({"kind": "hole", "radius": 3})


def test_pattern_config_round_trip():
    cfg = PatternConfig("mixed", parts=({"kind": "hole", "rects": [[0, 0, 2, 2]]},
                                        {"kind": "sparse_random", "count": 5}))
    assert PatternConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# --- hole -----------------------------------------------------------------------

def test_hole_rectangle():
    out = apply_hole(ramp(), PatternConfig("hole", rects=((0, 0, 2, 2),)))
    assert (~out.valid).sum() == 4
    assert not out.valid[:2, :2].any()


def test_hole_none_is_identity():
    d = ramp()
    out = apply_hole(d, PatternConfig("hole"))
    assert out.values.tobytes() == d.values.tobytes() and np.array_equal(out.valid, d.valid)


def test_hole_blob_coverage():
    d = DepthMap.dense(np.ones((64, 64)))
    out = apply_hole(d, PatternConfig("hole", coverage=0.3, blobs=3, seed=7))
    frac = (~out.valid).mean()
    assert 0.28 <= frac <= 0.32


def test_hole_full_coverage_rejected():
    with pytest.raises(ConfigError):
        apply_hole(ramp(), PatternConfig("hole", coverage=1.0))


# --- range ----------------------------------------------------------------------

def test_range_hand_case():
    d = DepthMap.dense(np.arange(1.0, 11.0).reshape(1, 10))
    out = apply_range(d, 20, 80)
    assert out.values[out.valid].tolist() == [2, 3, 4, 5, 6, 7, 8]


def test_range_full_is_identity():
    d = ramp()
    out = apply_range(d, 0, 100)
    assert np.array_equal(out.valid, d.valid)


def test_range_constant():
    d = DepthMap.dense(np.full((4, 4), 3.0))
    assert apply_range(d, 30, 40).valid.all()


def test_range_empty():
    with pytest.raises(EmptyInput):
        apply_range(DepthMap.dense(np.zeros((2, 2))), 20, 80)


@settings(max_examples=200)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40), st.integers(0, 99), st.integers(1, 100))
def test_nearest_rank_oracle(vals, lo, width):
    hi = min(lo + width, 100)
    s = sorted(float(v) for v in vals)
    assert nearest_rank(s, lo) == rank_oracle(s, lo)
    assert nearest_rank(s, hi) == rank_oracle(s, hi)


# --- sparse random ------------------------------------------------------------------

def test_sparse_count():
    assert apply_sparse_random(ramp(), count=30, seed=1).n_valid == 30
    assert apply_sparse_random(ramp(), count=0).n_valid == 0
    assert apply_sparse_random(ramp(), fraction=0.1).n_valid == 10


def test_sparse_count_clamped():
    assert apply_sparse_random(ramp(), count=1000).n_valid == 100


def test_sparse_respects_existing_holes():
    d = apply_hole(ramp(), PatternConfig("hole", rects=((0, 0, 5, 10),)))
    out = apply_sparse_random(d, count=20, seed=4)
    assert out.n_valid == 20
    assert_restriction(d, out)


# --- lidar ----------------------------------------------------------------------------

def test_lidar_rows():
    assert lidar_rows(8, 2) == [0, 4]
    assert lidar_rows(8, 1) == [0]
    d = DepthMap.dense(np.ones((8, 3)))
    out = apply_sparse_lidar(d, 2)
    assert np.flatnonzero(out.valid.any(axis=1)).tolist() == [0, 4]


def test_lidar_all_rows():
    d = ramp()
    assert np.array_equal(apply_sparse_lidar(d, 10).valid, d.valid)


def test_lidar_bad_lines():
    with pytest.raises(ConfigError):
        apply_sparse_lidar(ramp(), 11)


# --- mixed and generic contracts -----------------------------------------------------------

def test_mixed_is_intersection():
    d = ramp()
    parts = (PatternConfig("hole", rects=((0, 0, 4, 4),)), PatternConfig("sparse_random", count=50, seed=2))
    out = apply_mixed(d, parts)
    expect = apply_pattern(d, parts[0]).valid & apply_pattern(d, parts[1]).valid
    assert np.array_equal(out.valid, expect)


PATTERNS = [
    PatternConfig("hole", coverage=0.25, blobs=2, seed=3),
    PatternConfig("hole", rects=((2, 3, 5, 7),)),
    PatternConfig("range", lo_pct=10, hi_pct=60),
    PatternConfig("sparse_random", fraction=0.05, seed=9),
    PatternConfig("sparse_lidar", lines=8),
    PatternConfig("mixed", parts=(PatternConfig("range"), PatternConfig("sparse_lidar", lines=4))),
]


@pytest.mark.parametrize("cfg", PATTERNS, ids=lambda c: c.kind)
def test_patterns_are_restrictions_and_deterministic(cfg, scene):
    _, d = scene
    d = apply_hole(d, PatternConfig("hole", rects=((10, 10, 4, 4),)))
    a, b = apply_pattern(d, cfg), apply_pattern(d, cfg)
    assert_restriction(d, a)
    assert a.values.tobytes() == b.values.tobytes() and np.array_equal(a.valid, b.valid)


# --- training sampler -------------------------------------------------------------------------

def test_training_pattern_deterministic():
    assert sample_training_pattern(11) == sample_training_pattern(11)


def test_training_pattern_balance():
    kinds = [sample_training_pattern(s).kind for s in range(10_000)]
    share = kinds.count("sparse_random") / len(kinds)
    assert abs(share - 0.5) <= 0.02


@pytest.mark.parametrize("seed", range(50))
def test_training_pattern_valid(seed):
    cfg = sample_training_pattern(seed)
    assert PatternConfig.from_dict(cfg.to_dict()) == cfg
    if cfg.kind == "sparse_random":
        assert 0.001 <= cfg.fraction <= 0.5
    else:
        assert 0.1 <= cfg.coverage <= 0.6
