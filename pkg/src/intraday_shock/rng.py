"""Deterministic random-number streams.

All randomness in the package derives from a 64-bit master seed through
numpy ``SeedSequence`` spawn keys on top of the counter-based Philox
generator, so batches are reproducible across platforms, process counts and
thread counts:

* path ``i`` of a per-path batch uses ``SeedSequence(master_seed, spawn_key=(0, i))``
* chunk ``k`` of a vectorized batch kernel uses ``spawn_key=(1, k)``
* auxiliary draws (e.g. test scaffolding) use ``spawn_key=(2, tag)``

Streams with distinct spawn keys are independent, and the derivation has no
sequential state: stream ``i`` can be built without building streams
``0..i-1``.
"""
from __future__ import annotations

import numpy as np

__all__ = ["path_rng", "batch_rng", "aux_rng"]


def _generator(master_seed: int, spawn_key: tuple[int, ...]) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent stream for one Monte Carlo path."""
    return _generator(master_seed, (0, int(path_index)))


def batch_rng(master_seed: int, chunk: int = 0) -> np.random.Generator:
    """Stream for one fixed-size chunk of a vectorized batch kernel."""
    return _generator(master_seed, (1, int(chunk)))


def aux_rng(master_seed: int, tag: int = 0) -> np.random.Generator:
    """Stream for auxiliary draws that must not perturb path streams."""
    return _generator(master_seed, (2, int(tag)))
