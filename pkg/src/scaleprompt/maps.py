"""Image-plane containers: metric depth, relative (normalized disparity) maps, RGB."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel metric depth in meters plus a validity mask.

    Invalid pixels always hold 0.0. Also used for disparity maps, which
    obey the same positivity rule.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeError(f"values {values.shape} / valid {valid.shape} mismatch")
        valid &= np.isfinite(values) & (values > 0)
        values[~valid] = 0.0
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def with_valid(self, valid) -> "DepthMap":
        """Restrict validity; values at surviving pixels are untouched."""
        return DepthMap(self.values, self.valid & np.asarray(valid, dtype=bool))


@dataclass(frozen=True, eq=False)
class RelativeMap:
    """Unitless relative-domain map (normalized disparity) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ShapeError(f"values {values.shape} / valid {valid.shape} mismatch")
        valid &= np.isfinite(values)
        values[~valid] = 0.0
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def dense(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class RgbImage:
    """H x W x 3 float image with channels clamped to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"expected H x W x 3, got {px.shape}")
        px = np.clip(np.nan_to_num(px, nan=0.0), 0.0, 1.0)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self):
        return self.pixels.shape[:2]
