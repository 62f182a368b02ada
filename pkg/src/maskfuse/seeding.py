"""Deterministic seed derivation and counter-based uniform hashing.

Every stochastic step in the engine draws from an explicit integer seed so
results reproduce exactly across runs, platforms, and thread counts. Stream
seeds are derived from a root seed plus string/integer tags; per-vertex labels
come from a stateless splitmix64-style finalizer so they depend only on
(seed, id), never on iteration order.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def derive_seed(*parts: int | str) -> int:
    """Derive a 64-bit stream seed from a root seed and tags.

    Stable across processes and platforms (no reliance on PYTHONHASHSEED).
    """
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def _finalize(z: np.ndarray) -> np.ndarray:
    # modular 64-bit arithmetic; wraparound is intended
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def hash_u64(seed: int, values: np.ndarray) -> np.ndarray:
    """Stateless 64-bit hash of integer values under a seed."""
    v = np.asarray(values, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _finalize(np.uint64(seed & _MASK64) * _GOLDEN + _GOLDEN)
        return _finalize(base ^ (v * _GOLDEN + _GOLDEN))


def uniform_unit(seed: int, values: np.ndarray) -> np.ndarray:
    """Uniform floats in [0, 1) keyed on (seed, value), 53-bit resolution."""
    h = hash_u64(seed, values)
    return (h >> np.uint64(11)).astype(np.float64) * (2.0**-53)


def rng_for(*parts: int | str) -> np.random.Generator:
    """A numpy Generator seeded from derived parts."""
    return np.random.default_rng(derive_seed(*parts))
