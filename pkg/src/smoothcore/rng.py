"""Deterministic random-number plumbing.

Every stochastic routine in this package takes an explicit
``numpy.random.Generator``.  Generators are built on the Philox
counter-based bit generator, keyed by a 64-bit seed, so results never
depend on how work is scheduled across processes: two replicates with
different derived seeds produce independent streams no matter which
worker runs them, and the same seed always reproduces the same stream
bit for bit.

Seed derivation folds integer labels (master seed, horizon, particle
count, method id, replicate index) through the SplitMix64 finalizer.
The constants are fixed here so other implementations can reproduce the
exact streams:

    increment  0x9E3779B97F4A7C15
    multiplier 0xBF58476D1CE4E5B9  (after xor-shift by 30)
    multiplier 0x94D049BB133111EB  (after xor-shift by 27)
    final xor-shift by 31

with ``acc_0 = 0`` and ``acc_{k+1} = mix64(acc_k + increment + c_k)``
where ``c_k`` is the k-th component reduced mod 2**64.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_INCREMENT = 0x9E3779B97F4A7C15
_MULT1 = 0xBF58476D1CE4E5B9
_MULT2 = 0x94D049BB133111EB


def mix64(value: int) -> int:
    """Avalanche a 64-bit integer with the SplitMix64 finalizer."""
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * _MULT1) & _MASK64
    z = ((z ^ (z >> 27)) * _MULT2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*components: int) -> int:
    """Fold integer components into one well-mixed 64-bit seed.

    Order matters: ``derive_seed(a, b) != derive_seed(b, a)`` in
    general, which is what keeps the (T, N, method, replicate)
    substreams distinct.
    """
    acc = 0
    for c in components:
        acc = mix64((acc + _INCREMENT + (int(c) & _MASK64)) & _MASK64)
    return acc


def make_rng(seed: int) -> np.random.Generator:
    """Return a counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
