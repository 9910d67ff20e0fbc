import json

import numpy as np
import pytest

from scaleprompt.errors import ConfigError, EmptySparseInput, FitAborted
from scaleprompt.fileio import read_pfm, write_pfm, write_ppm
from scaleprompt.params import ParamSet
from scaleprompt.pipeline import (ExperimentConfig, FitSettings, build_model, fit_scene, load_scene,
                                  run_experiment, spsa, worker_count)
from scaleprompt.scene import gen_scene

THREE = [{"kind": "hole", "coverage": 0.2, "blobs": 2, "seed": 1},
         {"kind": "range"},
         {"kind": "sparse_random", "fraction": 0.05, "seed": 3}]


def test_config_defaults_and_echo():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.scene.seed == 1 and len(cfg.patterns) == 4
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"scene": {"seed": 1, "colour": 2}}, {"fit": {"lr": 1}},
                                 {"patterns": [{"kind": "range", "pct": 3}]}, {"grid": [0, 2]},
                                 {"backbone": {"dim": 7}}, {"fit": {"steps": -1}}, []])
def test_config_rejects(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("A2F_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("A2F_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("A2F_THREADS", "zero")
    assert worker_count() == 1


def test_run_structure():
    rep = run_experiment(ExperimentConfig.from_dict({"patterns": THREE}))
    assert [p["name"] for p in rep["patterns"]] == ["00_hole", "01_range", "02_sparse_random"]
    for p in rep["patterns"]:
        assert p["relative_identical"]
        assert p["prompted"]["metrics"] == p["baseline"]["metrics"]
        for side in ("prompted", "baseline"):
            assert {"metrics", "fit", "scale_map"} <= set(p[side])
            assert np.isfinite(p[side]["metrics"]["absrel"])
    assert rep["prng"] == "numpy.random.PCG64" and rep["fit"] is None


def test_run_byte_identical(tmp_path):
    raw = {"patterns": THREE, "output": {"emit_images": True}}
    for name in ("a", "b"):
        cfg = ExperimentConfig.from_dict({**raw, "output": {"out_dir": str(tmp_path / name), "emit_images": True}})
        run_experiment(cfg)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "report.json" in files and any(f.endswith(".ppm") for f in files) and any(f.endswith(".pfm") for f in files)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_run_error_annotated():
    cfg = ExperimentConfig.from_dict({"patterns": [{"kind": "sparse_random", "count": 1}]})
    with pytest.raises(EmptySparseInput) as info:
        run_experiment(cfg)
    assert "01" not in str(info.value) and "00_sparse_random" in str(info.value)
    assert info.value.pattern == "00_sparse_random"


def test_run_from_files_with_resize(tmp_path):
    rgb, depth = gen_scene(2, 48, 40, 2)
    write_ppm(tmp_path / "rgb.ppm", rgb.pixels)
    write_pfm(tmp_path / "depth.pfm", depth)
    cfg = ExperimentConfig.from_dict({"inputs": {"rgb": str(tmp_path / "rgb.ppm"), "depth": str(tmp_path / "depth.pfm")},
                                      "patterns": [THREE[2]]})
    rgb2, depth2, record = load_scene(cfg)
    assert rgb2.shape == (32, 32) and depth2.shape == (32, 32)
    assert record == {"from": [48, 40], "to": [32, 32], "rgb": "bilinear", "depth": "nearest"}
    stored = read_pfm(tmp_path / "depth.pfm").values
    assert set(depth2.values.ravel()) <= set(stored.ravel())
    rep = run_experiment(cfg)
    assert rep["resize"] == record


def test_run_with_saved_params(tmp_path):
    from scaleprompt.fileio import save_params
    cfg = ExperimentConfig.from_dict({"patterns": [THREE[2]], "sape": {"identity_fusion": False}})
    m = build_model(cfg)
    save_params(tmp_path / "p.a2f", m.bcfg, m.backbone, m.scfg, m.sape)
    loaded = build_model(ExperimentConfig.from_dict({"params_path": str(tmp_path / "p.a2f")}))
    assert loaded.sape.equals(m.sape) and loaded.scfg == m.scfg


def test_spsa_zero_steps():
    start = ParamSet({"x": np.array([1.0, -2.0])})
    res = spsa(lambda ps: float((ps["x"] ** 2).sum()), start, FitSettings(steps=0))
    assert res.curve == [5.0] and res.sape.equals(start) and res.final_loss == 5.0


def test_spsa_quadratic_descends():
    start = ParamSet({"x": np.full(10, 1.0)})
    res = spsa(lambda ps: float((ps["x"] ** 2).sum()), start, FitSettings(steps=200, a0=0.5, c0=0.05))
    assert res.final_loss < 0.1 * res.initial_loss
    assert len(res.curve) == 201


def test_spsa_aborts_on_non_finite():
    start = ParamSet({"x": np.zeros(3)})
    calls = []

    def objective(ps):
        calls.append(1)
        return float("nan") if len(calls) > 3 else 1.0

    with pytest.raises(FitAborted) as info:
        spsa(objective, start, FitSettings(steps=5))
    assert info.value.step == 2


def test_fit_short_deterministic():
    cfg = ExperimentConfig.from_dict({"fit": {"steps": 6}})
    m1, r1 = fit_scene(cfg)
    m2, r2 = fit_scene(cfg)
    assert r1.curve == r2.curve and m1.sape.equals(m2.sape)
    assert len(r1.curve) == 7
    base = build_model(cfg)
    assert m1.backbone.equals(base.backbone)
    assert not m1.sape.equals(base.sape)


def test_fit_zero_steps():
    cfg = ExperimentConfig.from_dict({"fit": {"steps": 0}})
    model, res = fit_scene(cfg)
    assert model.sape.equals(build_model(cfg).sape)
    assert res.curve == [res.initial_loss]
