"""Seed derivation and small Monte Carlo helpers shared by every module."""

from __future__ import annotations

import zlib
from typing import NamedTuple

import numpy as np


class Estimate(NamedTuple):
    """A Monte Carlo estimate with its standard error (0.0 for exact values)."""

    value: float
    stderr: float


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("seed keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """Deterministic child seed for ``(seed, *keys)``; string keys are hashed stably."""
    ss = np.random.SeedSequence(entropy=_key(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def mean_with_stderr(values: np.ndarray) -> Estimate:
    values = np.asarray(values, dtype=float)
    m = values.size
    if m == 0:
        raise ValueError("cannot average an empty sample")
    mean = float(values.mean())
    if m == 1:
        return Estimate(mean, float("nan"))
    return Estimate(mean, float(values.std(ddof=1) / np.sqrt(m)))
