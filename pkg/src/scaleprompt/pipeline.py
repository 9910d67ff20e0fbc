"""Experiment orchestration: configuration, evaluation runs, and SPSA fitting."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import numkernel as nk
from .backbone import BackboneConfig, init_backbone
from .depth_domain import apply_fit, depth_to_disparity, lsq_align
from .errors import ConfigError, FitAborted
from .evaluation import evaluate, scale_consistency
from .fileio import false_color, load_params, read_pfm, read_ppm, write_json, write_pfm, write_ppm
from .losses import LossWeights, loss_total
from .maps import DepthMap, RgbImage
from .params import ParamSet
from .sape import SapeConfig, baseline_forward, init_sape, prepare, prompted_relative
from .scene import PRNG_ID, PatternConfig, apply_pattern, gen_scene


# ---------------------------------------------------------------------------
# configuration


def _strict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


DEFAULT_PATTERNS = (
    {"kind": "hole", "coverage": 0.3, "blobs": 3, "seed": 7},
    {"kind": "range", "lo_pct": 20.0, "hi_pct": 80.0},
    {"kind": "sparse_random", "fraction": 0.05, "seed": 3},
    {"kind": "sparse_lidar", "lines": 8},
)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 1
    height: int = 32
    width: int = 32
    objects: int = 3


@dataclass(frozen=True)
class InputSpec:
    rgb: str
    depth: str


@dataclass(frozen=True)
class FitSettings:
    """SPSA settings: perturbation ``c0 / (k+1)^gamma``, step ``a0 / (k+1+A)^alpha``."""

    steps: int = 500
    c0: float = 0.05
    a0: float = 1.0
    A: float = 50.0
    alpha: float = 0.602
    gamma: float = 0.101
    seed: int = 0
    pattern: dict = field(default_factory=lambda: {"kind": "sparse_random", "fraction": 0.05, "seed": 3})

    def __post_init__(self):
        if self.steps < 0 or self.c0 <= 0 or self.a0 < 0 or self.A < 0:
            raise ConfigError("fit needs steps >= 0, c0 > 0, a0 >= 0, A >= 0")
        PatternConfig.from_dict(self.pattern)


@dataclass(frozen=True)
class OutputSpec:
    out_dir: str | None = None
    emit_images: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec | None = SceneSpec()
    inputs: InputSpec | None = None
    patterns: tuple = tuple(PatternConfig.from_dict(p) for p in DEFAULT_PATTERNS)
    backbone: BackboneConfig = BackboneConfig()
    sape: SapeConfig = SapeConfig()
    params_path: str | None = None
    loss_weights: LossWeights = LossWeights()
    grid: tuple = (4, 4)
    fit: FitSettings = FitSettings()
    output: OutputSpec = OutputSpec()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        inputs = _strict(InputSpec, d["inputs"], "inputs") if d.get("inputs") else None
        scene = None if inputs else _strict(SceneSpec, d.get("scene") or {}, "scene")
        patterns = tuple(PatternConfig.from_dict(p) for p in d.get("patterns", DEFAULT_PATTERNS))
        grid = tuple(int(v) for v in d.get("grid", (4, 4)))
        if len(grid) != 2 or min(grid) < 1:
            raise ConfigError("grid must be [rows, cols] with positive entries")
        return cls(
            scene=scene,
            inputs=inputs,
            patterns=patterns,
            backbone=BackboneConfig.from_dict(d.get("backbone", {})),
            sape=SapeConfig.from_dict(d.get("sape", {})),
            params_path=d.get("params_path"),
            loss_weights=_strict(LossWeights, d.get("loss_weights", {}), "loss_weights"),
            grid=grid,
            fit=_strict(FitSettings, d.get("fit", {}), "fit"),
            output=_strict(OutputSpec, d.get("output", {}), "output"),
        )

    def to_dict(self) -> dict:
        return {
            "scene": None if self.scene is None else asdict(self.scene),
            "inputs": None if self.inputs is None else asdict(self.inputs),
            "patterns": [p.to_dict() for p in self.patterns],
            "backbone": self.backbone.to_dict(),
            "sape": self.sape.to_dict(),
            "params_path": self.params_path,
            "loss_weights": self.loss_weights.to_dict(),
            "grid": list(self.grid),
            "fit": asdict(self.fit),
            "output": asdict(self.output),
        }


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("A2F_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# scene loading


def _resize_depth_nearest(d: DepthMap, h: int, w: int) -> DepthMap:
    rows = np.minimum(((np.arange(h) + 0.5) * d.shape[0] / h).astype(int), d.shape[0] - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * d.shape[1] / w).astype(int), d.shape[1] - 1)
    return DepthMap(d.values[np.ix_(rows, cols)], d.valid[np.ix_(rows, cols)])


def load_scene(cfg: ExperimentConfig):
    """Returns ``(rgb, depth, resize_record or None)`` at the backbone resolution."""
    if cfg.inputs is not None:
        rgb = RgbImage(read_ppm(cfg.inputs.rgb) / 255.0)
        pfm = read_pfm(cfg.inputs.depth)
        depth = DepthMap(pfm.values, pfm.valid)
    else:
        s = cfg.scene
        rgb, depth = gen_scene(s.seed, s.height, s.width, s.objects)
    target = (cfg.backbone.height, cfg.backbone.width)
    if depth.shape != rgb.shape:
        raise ConfigError(f"rgb {rgb.shape} and depth {depth.shape} differ in size")
    if depth.shape == target:
        return rgb, depth, None
    record = {"from": list(depth.shape), "to": list(target), "rgb": "bilinear", "depth": "nearest"}
    rgb = RgbImage(nk.bilinear_resize(rgb.pixels, *target))
    return rgb, _resize_depth_nearest(depth, *target), record


@dataclass
class Model:
    bcfg: BackboneConfig
    backbone: ParamSet
    scfg: SapeConfig
    sape: ParamSet


def build_model(cfg: ExperimentConfig) -> Model:
    if cfg.params_path:
        bcfg, backbone, scfg, sape = load_params(cfg.params_path)
        return Model(bcfg, backbone, scfg, sape)
    return Model(cfg.backbone, init_backbone(cfg.backbone), cfg.sape, init_sape(cfg.backbone, cfg.sape))


# ---------------------------------------------------------------------------
# evaluation run


def _annotate(exc: Exception, name: str):
    exc.pattern = name
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"[pattern {name}] {exc.args[0]}",) + exc.args[1:]
    else:
        exc.args = (f"[pattern {name}]",) + exc.args
    return exc


def evaluate_pattern(name, pcfg, rgb, depth, model: Model, cfg: ExperimentConfig):
    """Degrade, run prompted and baseline forwards, and score both."""
    try:
        sparse = apply_pattern(depth, pcfg)
        inputs = prepare(rgb, sparse, model.backbone, model.bcfg, model.scfg)
        rel = prompted_relative(inputs, model.backbone, model.sape, model.bcfg, model.scfg)
        fit = lsq_align(rel, sparse)
        metric = apply_fit(rel, fit)
        b_rel, b_fit, b_metric = baseline_forward(rgb, sparse, model.backbone, model.bcfg)
        gt_disp = depth_to_disparity(depth)
        sp_disp = depth_to_disparity(sparse)
        loss, _ = loss_total(rel.values, gt_disp.values, gt_disp.valid & rel.valid,
                             sp_disp.values, sp_disp.valid, cfg.loss_weights)
        entry = {
            "name": name,
            "pattern": pcfg.to_dict(),
            "n_sparse": sparse.n_valid,
            "relative_identical": bool(np.array_equal(rel.values, b_rel.values)),
            "loss": loss.to_dict(),
            "prompted": {
                "metrics": evaluate(metric, depth).to_dict(),
                "fit": fit.to_dict(),
                "scale_map": scale_consistency(depth, metric, cfg.grid).to_dict(),
            },
            "baseline": {
                "metrics": evaluate(b_metric, depth).to_dict(),
                "fit": b_fit.to_dict(),
                "scale_map": scale_consistency(depth, b_metric, cfg.grid).to_dict(),
            },
        }
        artifacts = {"sparse": sparse, "prompted": metric, "baseline": b_metric}
        return entry, artifacts
    except Exception as exc:
        raise _annotate(exc, name)


def _emit_images(out: Path, name: str, depth: DepthMap, art: dict, entry: dict, grid):
    lo = float(depth.values[depth.valid].min())
    hi = float(depth.values[depth.valid].max())
    write_pfm(out / f"{name}_sparse.pfm", art["sparse"])
    for key in ("prompted", "baseline"):
        pred = art[key]
        write_pfm(out / f"{name}_{key}.pfm", pred)
        write_ppm(out / f"{name}_{key}_depth.ppm", false_color(pred.values, pred.valid, lo, hi))
        err = np.where(depth.valid, np.abs(pred.values - depth.values) / np.where(depth.valid, depth.values, 1.0), 0.0)
        write_ppm(out / f"{name}_{key}_error.ppm", false_color(err, depth.valid, 0.0, 0.5))
        smap = np.array([np.nan if s is None else s for s in entry[key]["scale_map"]["scales"]]).reshape(grid)
        big = np.kron(smap, np.ones((depth.shape[0] // grid[0] or 1, depth.shape[1] // grid[1] or 1)))
        write_ppm(out / f"{name}_{key}_scale.ppm", false_color(big, np.isfinite(big), 0.5, 1.5))


def run_experiment(cfg: ExperimentConfig, model: Model | None = None, fit_summary: dict | None = None) -> dict:
    """Evaluate every configured pattern; write ``report.json`` (and images) if an output dir is set."""
    rgb, depth, resize = load_scene(cfg)
    model = model or build_model(cfg)
    names = [f"{i:02d}_{p.kind}" for i, p in enumerate(cfg.patterns)]
    jobs = list(zip(names, cfg.patterns))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda job: evaluate_pattern(job[0], job[1], rgb, depth, model, cfg), jobs))
    report = {
        "artifact_version": __version__,
        "prng": PRNG_ID,
        # where the report is written is not part of the experiment
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output"},
        "model": {"backbone": model.bcfg.to_dict(), "sape": model.scfg.to_dict()},
        "resize": resize,
        "patterns": [entry for entry, _ in results],
        "fit": fit_summary,
    }
    if cfg.output.out_dir:
        out = Path(cfg.output.out_dir)
        if cfg.output.emit_images:
            write_ppm(out / "rgb.ppm", rgb.pixels)
            write_pfm(out / "gt.pfm", depth)
            for entry, art in results:
                _emit_images(out, entry["name"], depth, art, entry, cfg.grid)
        write_json(out / "report.json", report)
    return report


# ---------------------------------------------------------------------------
# SPSA fitting


@dataclass
class FitResult:
    sape: ParamSet
    curve: list          # curve[0] = initial loss, then the mean of the two probes per step
    initial_loss: float
    final_loss: float

    def summary(self) -> dict:
        return {"initial_loss": self.initial_loss, "final_loss": self.final_loss,
                "ratio": self.final_loss / self.initial_loss if self.initial_loss else None,
                "steps": len(self.curve) - 1, "curve": self.curve}


def scene_objective(rgb, depth, sparse, model: Model, weights: LossWeights):
    """Total training loss of the prompted relative prediction as a function of prompt-encoder weights."""
    inputs = prepare(rgb, sparse, model.backbone, model.bcfg, model.scfg)
    gt = depth_to_disparity(depth)
    sp = depth_to_disparity(sparse)

    def objective(sape: ParamSet) -> float:
        rel = prompted_relative(inputs, model.backbone, sape, model.bcfg, model.scfg)
        report, _ = loss_total(rel.values, gt.values, gt.valid & rel.valid, sp.values, sp.valid, weights)
        return report.total

    return objective


def spsa(objective, start: ParamSet, settings: FitSettings, log=None) -> FitResult:
    """Minimize ``objective`` over the flat parameter vector with SPSA.

    Each step draws one Rademacher direction for the whole vector, probes
    ``theta +- c_k * delta`` and moves by ``a_k`` times the two-sided
    difference estimate.
    """
    rng = np.random.default_rng(settings.seed)
    theta = start.flatten()
    initial = objective(start)
    if not np.isfinite(initial):
        raise FitAborted(0, initial)
    curve = [initial]
    for k in range(settings.steps):
        ck = settings.c0 / (k + 1) ** settings.gamma
        ak = settings.a0 / (k + 1 + settings.A) ** settings.alpha
        delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
        lp = objective(start.unflatten(theta + ck * delta))
        lm = objective(start.unflatten(theta - ck * delta))
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FitAborted(k + 1, lp if not np.isfinite(lp) else lm)
        theta = theta - ak * (lp - lm) / (2.0 * ck) * delta
        curve.append(0.5 * (lp + lm))
        if log is not None and (k + 1) % 50 == 0:
            log(f"step {k + 1}: loss ~ {curve[-1]:.6f}")
    final_ps = start.unflatten(theta)
    final = objective(final_ps)
    if not np.isfinite(final):
        raise FitAborted(settings.steps, final)
    return FitResult(final_ps, curve, float(initial), float(final))


def fit_scene(cfg: ExperimentConfig, model: Model | None = None, log=None) -> tuple[Model, FitResult]:
    """Fit the prompt encoder on the configured scene; the backbone stays frozen."""
    rgb, depth, _ = load_scene(cfg)
    model = model or build_model(cfg)
    sparse = apply_pattern(depth, PatternConfig.from_dict(cfg.fit.pattern))
    objective = scene_objective(rgb, depth, sparse, model, cfg.loss_weights)
    result = spsa(objective, model.sape, cfg.fit, log)
    return Model(model.bcfg, model.backbone, model.scfg, result.sape), result
