"""Named float64 parameter tensors with a fixed order.

The order in which tensors are added is the serialization order and the
layout of the flat vector used by the gradient-free optimizer.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError


class ParamSet:
    def __init__(self, tensors=None):
        self._t: dict[str, np.ndarray] = {}
        for name, arr in (tensors or {}).items():
            self[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __setitem__(self, name: str, arr):
        self._t[name] = np.array(arr, dtype=np.float64)

    def __contains__(self, name):
        return name in self._t

    def __len__(self):
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self):
        return list(self._t)

    @property
    def size(self) -> int:
        return sum(a.size for a in self._t.values())

    def flatten(self) -> np.ndarray:
        if not self._t:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._t.values()])

    def unflatten(self, vec) -> "ParamSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"expected a flat vector of {self.size}, got {vec.shape}")
        out, pos = ParamSet(), 0
        for name, a in self._t.items():
            out[name] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self._t.items()})

    def equals(self, other: "ParamSet") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(a, other[k]) and a.shape == other[k].shape for k, a in self._t.items())


def uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def fan_in_uniform(rng, fan_in, shape):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default."""
    return rng.uniform(-1.0, 1.0, size=shape) / math.sqrt(fan_in)
