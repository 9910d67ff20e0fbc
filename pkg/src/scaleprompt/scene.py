"""Procedural desk-scale RGB-D scenes and depth degradation patterns.

Every pattern generator is a pure restriction of the input: a pixel either
keeps its (value, valid) pair or loses validity. Values are never altered.

Random numbers come from ``numpy.random.default_rng`` (PCG64); the
identifier below is echoed into experiment reports.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from fractions import Fraction

import numpy as np

from .errors import ConfigError, EmptyInput
from .maps import DepthMap, RgbImage

PRNG_ID = "numpy.random.PCG64"
KINDS = ("hole", "range", "sparse_random", "sparse_lidar", "mixed")

# log-uniform sampling fraction range for training patterns
TRAIN_FRACTION_RANGE = (0.001, 0.5)
# uniform coverage range for training hole patterns
TRAIN_HOLE_COVERAGE = (0.1, 0.6)


def _rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# scene generation


def _backproject(depth, f, cx, cy):
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    return np.stack([(u - cx) / f * depth, (v - cy) / f * depth, depth], axis=-1)


def _normals(points):
    dx = np.gradient(points, axis=1)
    dy = np.gradient(points, axis=0)
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.maximum(norm, 1e-12)
    # face the camera
    flip = n[..., 2:3] > 0
    return np.where(flip, -n, n)


def gen_scene(seed: int, height: int = 32, width: int = 32, object_count: int = 3):
    """Render a seeded tabletop-like scene.

    The background is a tilted plane 1.2-2.5 m away; spheres and boxes sit
    in front of it and are z-buffered. RGB is Lambertian shading of the
    surface normals times a per-surface albedo, with a faint checker on the
    plane, so image edges line up with depth edges.

    Returns ``(RgbImage, DepthMap)`` with every depth pixel valid.
    """
    if height < 16 or width < 16:
        raise ConfigError("scene must be at least 16 x 16")
    if object_count < 0:
        raise ConfigError("object_count must be >= 0")
    rng = _rng(seed)
    f = float(width)
    cx, cy = width / 2.0, height / 2.0
    v, u = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    rays = np.stack([(u - cx) / f, (v - cy) / f, np.ones_like(u)], axis=-1)

    z0 = rng.uniform(1.2, 2.5)
    tilt = rng.uniform(-0.35, 0.35, size=2)
    normal = np.array([tilt[0], tilt[1], -1.0])
    depth = (normal @ np.array([0.0, 0.0, z0])) / (rays @ normal)
    label = np.zeros((height, width), dtype=np.int64)
    albedo = [rng.uniform(0.35, 0.8, size=3)]

    for k in range(object_count):
        z = rng.uniform(0.6, z0 * 0.9)
        half_fov = 0.45 * z
        centre = np.array([rng.uniform(-half_fov, half_fov), rng.uniform(-half_fov, half_fov), z])
        size = rng.uniform(0.08, 0.22) * z
        if rng.random() < 0.5:
            # sphere
            dd = (rays * rays).sum(-1)
            dc = rays @ centre
            disc = dc * dc - dd * (centre @ centre - size * size)
            hit = disc >= 0
            t = np.where(hit, (dc - np.sqrt(np.maximum(disc, 0.0))) / dd, np.inf)
        else:
            # axis-aligned box via slab test
            lo = centre - size * np.array([1.0, 0.8, 0.7])
            hi = centre + size * np.array([1.0, 0.8, 0.7])
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = lo / rays
                t2 = hi / rays
            tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
            hit = (tmax >= tmin) & (tmin > 0)
            t = np.where(hit, tmin, np.inf)
        closer = t < depth
        depth = np.where(closer, t, depth)
        label[closer] = k + 1
        albedo.append(rng.uniform(0.2, 1.0, size=3))

    pts = _backproject(depth, f, cx, cy)
    n = _normals(pts)
    light = np.array([0.4, -0.5, -0.75])
    light /= np.linalg.norm(light)
    shade = 0.25 + 0.75 * np.clip(n @ light, 0.0, None)
    alb = np.asarray(albedo)[label]
    checker = ((np.floor(pts[..., 0] * 8) + np.floor(pts[..., 1] * 8)) % 2) * 0.08
    alb = alb - np.where(label == 0, checker, 0.0)[..., None]
    rgb = RgbImage(alb * shade[..., None])
    return rgb, DepthMap.dense(depth)


# ---------------------------------------------------------------------------
# pattern configuration


@dataclass(frozen=True)
class PatternConfig:
    """Parameters for one degradation pattern.

    ``rects`` are ``(top, left, height, width)`` tuples; ``coverage`` is the
    target fraction of pixels removed by holes (rectangles plus random-walk
    blobs). ``parts`` lists the component configs of a ``mixed`` pattern.
    """

    kind: str
    seed: int = 0
    rects: tuple = ()
    blobs: int = 0
    coverage: float | None = None
    lo_pct: float = 20.0
    hi_pct: float = 80.0
    count: int | None = None
    fraction: float | None = None
    lines: int = 64
    parts: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown pattern kind {self.kind!r}")
        object.__setattr__(self, "rects", tuple(tuple(int(v) for v in r) for r in self.rects))
        parts = tuple(p if isinstance(p, PatternConfig) else PatternConfig.from_dict(p) for p in self.parts)
        object.__setattr__(self, "parts", parts)
        if not 0 <= self.lo_pct < self.hi_pct <= 100:
            raise ConfigError(f"need 0 <= lo_pct < hi_pct <= 100, got {self.lo_pct}, {self.hi_pct}")
        if self.count is not None and self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.fraction is not None and not 0 <= self.fraction <= 1:
            raise ConfigError("fraction must lie in [0, 1]")
        if self.coverage is not None and not 0 <= self.coverage:
            raise ConfigError("coverage must be >= 0")
        if self.blobs < 0 or self.lines < 1:
            raise ConfigError("blobs must be >= 0 and lines >= 1")
        if any(len(r) != 4 or r[2] < 0 or r[3] < 0 for r in self.rects):
            raise ConfigError("rects are (top, left, height, width) with non-negative extent")
        if self.kind == "sparse_random" and (self.count is None) == (self.fraction is None):
            raise ConfigError("sparse_random needs exactly one of count / fraction")
        if self.kind == "mixed" and not parts:
            raise ConfigError("mixed pattern needs at least one part")

    @classmethod
    def from_dict(cls, d: dict) -> "PatternConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown pattern keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "parts":
                v = [p.to_dict() for p in v]
            elif f.name == "rects":
                v = [list(r) for r in v]
            out[f.name] = v
        return out


# ---------------------------------------------------------------------------
# degradation patterns


def _random_walk_blobs(shape, start_mask, target, blobs, rng):
    """Grow seeded random-walk blobs until exactly ``target`` pixels are masked."""
    h, w = shape
    mask = start_mask.copy()
    total = int(mask.sum())
    brush = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
    moves = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])
    blobs = max(blobs, 1)
    b = 0
    while total < target:
        quota = total + max(1, (target - total) // (blobs - b)) if b < blobs else target
        r, c = int(rng.integers(h)), int(rng.integers(w))
        stale = 0
        while total < quota and stale < 64:
            grew = False
            for dr, dc in brush:
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and not mask[rr, cc]:
                    mask[rr, cc] = True
                    total += 1
                    grew = True
                    if total >= quota:
                        break
            stale = 0 if grew else stale + 1
            step = moves[rng.integers(4)]
            r = min(max(r + int(step[0]), 0), h - 1)
            c = min(max(c + int(step[1]), 0), w - 1)
        b += 1
    return mask


def hole_mask(shape, cfg: PatternConfig) -> np.ndarray:
    """Boolean mask of pixels removed by a hole pattern (independent of the data)."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    for top, left, rh, rw in cfg.rects:
        mask[max(top, 0):max(top + rh, 0), max(left, 0):max(left + rw, 0)] = True
    if cfg.coverage is not None:
        if cfg.coverage >= 1.0:
            raise ConfigError("hole coverage must be below 100%")
        target = int(round(cfg.coverage * h * w))
        if target > mask.sum():
            mask = _random_walk_blobs(shape, mask, target, cfg.blobs, _rng(cfg.seed))
    return mask


def apply_hole(d: DepthMap, cfg: PatternConfig) -> DepthMap:
    if cfg.kind != "hole":
        raise ConfigError(f"apply_hole got a {cfg.kind!r} config")
    return d.with_valid(~hole_mask(d.shape, cfg))


def nearest_rank(sorted_values, pct) -> float:
    """Nearest-rank percentile: element ``ceil(pct * N / 100)`` (1-based), at least the first."""
    n = len(sorted_values)
    rank = math.ceil(Fraction(pct) * n / 100)
    return sorted_values[max(rank, 1) - 1]


def apply_range(d: DepthMap, lo_pct: float = 20.0, hi_pct: float = 80.0) -> DepthMap:
    """Keep only pixels whose depth lies within the [lo_pct, hi_pct] nearest-rank band."""
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ConfigError(f"need 0 <= lo_pct < hi_pct <= 100, got {lo_pct}, {hi_pct}")
    vals = np.sort(d.values[d.valid])
    if vals.size == 0:
        raise EmptyInput("range pattern needs at least one valid pixel")
    p_lo = nearest_rank(vals, lo_pct)
    p_hi = nearest_rank(vals, hi_pct)
    return d.with_valid((d.values >= p_lo) & (d.values <= p_hi))


def apply_sparse_random(d: DepthMap, count: int | None = None, fraction: float | None = None,
                        seed: int = 0) -> DepthMap:
    """Keep a seeded uniform sample of the valid pixels.

    ``count`` larger than the number of valid pixels is clamped to it.
    ``fraction`` is relative to the valid pixels and rounded to the nearest
    integer count.
    """
    if (count is None) == (fraction is None):
        raise ConfigError("give exactly one of count / fraction")
    idx = np.flatnonzero(d.valid)
    if count is None:
        count = int(round(fraction * idx.size))
    k = min(int(count), idx.size)
    chosen = _rng(seed).choice(idx, size=k, replace=False)
    keep = np.zeros(d.values.size, dtype=bool)
    keep[chosen] = True
    return d.with_valid(keep.reshape(d.shape))


def lidar_rows(height: int, lines: int) -> list[int]:
    return [i * height // lines for i in range(lines)]


def apply_sparse_lidar(d: DepthMap, lines: int = 64) -> DepthMap:
    """Emulate a line scanner: rows ``floor(i * H / lines)`` survive, all others are dropped."""
    h = d.shape[0]
    if not 1 <= lines <= h:
        raise ConfigError(f"lines must be in [1, {h}], got {lines}")
    keep = np.zeros(d.shape, dtype=bool)
    keep[lidar_rows(h, lines)] = True
    return d.with_valid(keep)


def apply_mixed(d: DepthMap, parts) -> DepthMap:
    """Intersect the valid sets each part produces on the source map."""
    valid = d.valid.copy()
    for part in parts:
        valid &= apply_pattern(d, part).valid
    return d.with_valid(valid)


def apply_pattern(d: DepthMap, cfg: PatternConfig) -> DepthMap:
    if cfg.kind == "hole":
        return apply_hole(d, cfg)
    if cfg.kind == "range":
        return apply_range(d, cfg.lo_pct, cfg.hi_pct)
    if cfg.kind == "sparse_random":
        return apply_sparse_random(d, cfg.count, cfg.fraction, cfg.seed)
    if cfg.kind == "sparse_lidar":
        return apply_sparse_lidar(d, cfg.lines)
    return apply_mixed(d, cfg.parts)


def sample_training_pattern(seed: int) -> PatternConfig:
    """Fair coin between random sampling and hole sampling, as used for training."""
    rng = _rng(seed)
    pick_random = rng.random() < 0.5
    sub_seed = int(rng.integers(2 ** 63))
    if pick_random:
        lo, hi = TRAIN_FRACTION_RANGE
        fraction = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return PatternConfig("sparse_random", seed=sub_seed, fraction=fraction)
    coverage = float(rng.uniform(*TRAIN_HOLE_COVERAGE))
    return PatternConfig("hole", seed=sub_seed, coverage=coverage, blobs=int(rng.integers(1, 5)))
