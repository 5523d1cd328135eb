"""Deterministic random streams derived from one base seed.

Every stochastic component (initialization, dropout, shuffling, fold
assignment, partition resampling, synthetic data) draws from a generator
derived from the run's base seed plus a tuple of tags, e.g.
``derive_rng(seed, "shuffle", epoch)``. The tags are folded into a
``SeedSequence`` over a counter-based bit generator (Philox), so any
experiment replays bit for bit from (seed, tag tuple) alone, independent
of global RNG state.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_material(keys) -> list[int]:
    material = []
    for key in keys:
        if isinstance(key, (bool, float)):
            raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")
        if isinstance(key, (int, np.integer)):
            material.append(int(key) & 0xFFFFFFFF)
        elif isinstance(key, str):
            material.append(zlib.crc32(key.encode("utf-8")))
        else:
            raise TypeError(f"rng keys must be int or str, got {type(key).__name__}")
    return material


def derive_rng(*keys) -> np.random.Generator:
    """Generator keyed by (seed, tags...). Same keys, same stream, always."""
    if not keys:
        raise ValueError("derive_rng requires at least one key")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_key_material(keys))))


def derive_seed(*keys) -> int:
    """A 32-bit seed keyed by (seed, tags...), for handing to nested runs."""
    return int(np.random.SeedSequence(_key_material(keys)).generate_state(1)[0])


def truncated_normal(shape, std: float, rng: np.random.Generator, trunc: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until within +/- trunc*std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > trunc * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > trunc * std
    return out
