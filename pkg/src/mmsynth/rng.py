"""Counter-based random number generation with an exactly documented stream.

Algorithm
---------
The generator is SplitMix64 used in counter mode.  With the 64-bit golden
constant PHI = 0x9E3779B97F4A7C15 and the SplitMix64 finalizer

    fin(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
            z ^= z >> 27; z *= 0x94D049BB133111EB
            return z ^ (z >> 31)

the raw 64-bit word at counter ``i`` of the stream keyed by ``seed`` is

    raw(seed, i) = fin(seed + (i + 1) * PHI)    (mod 2**64)

which is the i-th output of the standard sequential SplitMix64 seeded with
``seed``.  Derived quantities:

* uniform double in [0, 1):   u(seed, i)   = (raw(seed, i) >> 11) * 2**-53
* standard normal:            z(seed, i)   = sqrt(-2 ln u1) * cos(2 pi u2)
  via Box-Muller on the uniform stream, with u1 = ((raw(seed, 2i) >> 11) + 1)
  * 2**-53 in (0, 1] (so the log is finite) and u2 = u(seed, 2i + 1).
  Only the cosine branch is used; every normal consumes two raw words.
* child seeds: ``derive_seed`` folds indices through the same finalizer,
  see its docstring.

Everything is a pure function of (seed, counter), so streams can be
evaluated out of order and vectorized over counters and over seeds at once.
Determinism is per-seed on a given platform; the algorithm is stated so the
stream contract itself is unambiguous.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

_MASK = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def _fin(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer, vectorized over uint64 arrays (wrapping multiply).
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def _raw(seed, counters) -> np.ndarray:
    seed = np.asarray(seed, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _fin(seed + (counters + np.uint64(1)) * np.uint64(_PHI))


def uniforms(seed, counters) -> np.ndarray:
    """Uniform doubles in [0, 1) at the given counters; broadcasts seed/counters."""
    return np.asarray((_raw(seed, counters) >> np.uint64(11)), dtype=np.float64) * 2.0**-53


def normals(seed, counters) -> np.ndarray:
    """Standard normal draws at the given counters (Box-Muller, cosine branch)."""
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        r1 = _raw(seed, counters * np.uint64(2))
        r2 = _raw(seed, counters * np.uint64(2) + np.uint64(1))
    u1 = (np.asarray(r1 >> np.uint64(11), dtype=np.float64) + 1.0) * 2.0**-53
    u2 = np.asarray(r2 >> np.uint64(11), dtype=np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("shape must be nonempty")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    return shape


def randn(shape, seed: int) -> np.ndarray:
    """i.i.d. standard normal array; identical output for identical (shape, seed)."""
    shape = _check_shape(shape)
    n = math.prod(shape)
    return normals(seed, np.arange(n, dtype=np.uint64)).reshape(shape)


def rand(shape, seed: int) -> np.ndarray:
    """i.i.d. uniform [0, 1) array."""
    shape = _check_shape(shape)
    n = math.prod(shape)
    return uniforms(seed, np.arange(n, dtype=np.uint64)).reshape(shape)


def derive_seed(seed: int, *indices: int) -> int:
    """Deterministically derive a child seed from a parent seed and indices.

    Each index is folded as  s <- fin(fin(s + PHI) ^ fin((k + 1) * PHI)),
    all mod 2**64, using the SplitMix64 finalizer above.  Distinct index
    tuples give independent-looking streams.
    """
    s = seed & _MASK

    def fin(z: int) -> int:
        z ^= z >> 30
        z = (z * _M1) & _MASK
        z ^= z >> 27
        z = (z * _M2) & _MASK
        return z ^ (z >> 31)

    for k in indices:
        s = fin((s + _PHI) & _MASK)
        s = fin(s ^ fin(((int(k) + 1) * _PHI) & _MASK))
    return s


def uniform_ints(seed: int, n: int, bound: int) -> np.ndarray:
    """`n` integers uniform on [0, bound), as floor(u * bound).

    The floor construction carries a modulo bias of order bound * 2**-53,
    negligible for the desk-scale bounds used here.
    """
    if bound < 1:
        raise ShapeError(f"bound must be >= 1, got {bound}")
    u = uniforms(seed, np.arange(n, dtype=np.uint64))
    return np.minimum((u * bound).astype(np.int64), bound - 1)
