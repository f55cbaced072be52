"""Vectorized Philox4x64-10 counter-based generator.

Output for a given ``(key, counter)`` matches ``numpy.random.Philox``, so the
block for path ``p`` at step ``s`` is a pure function of ``(seed, p, s)``
and simulation results do not depend on evaluation order.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10"

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)


def _mulhilo(a: np.uint64, b: np.ndarray):
    lo = a * b
    a_lo, a_hi = a & _MASK32, a >> _S32
    b_lo, b_hi = b & _MASK32, b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _MASK32) + (p2 & _MASK32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, lo


def philox4x64(counter, key, rounds: int = 10):
    """Apply Philox to broadcastable uint64 arrays.

    ``counter`` has trailing dimension 4 and ``key`` trailing dimension 2.
    Returns an array of shape ``counter.shape``.
    """
    ctr = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    x0, x1, x2, x3 = (ctr[..., i].copy() for i in range(4))
    k0 = np.broadcast_to(key[..., 0], x0.shape).copy()
    k1 = np.broadcast_to(key[..., 1], x0.shape).copy()
    with np.errstate(over="ignore"):
        for r in range(rounds):
            if r:
                k0 += _W0
                k1 += _W1
            hi0, lo0 = _mulhilo(_M0, x0)
            hi1, lo1 = _mulhilo(_M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return np.stack([x0, x1, x2, x3], axis=-1)


def to_unit(bits: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in ``[0, 1)`` using the top 53 bits."""
    return (bits >> _S11).astype(np.float64) * (1.0 / 9007199254740992.0)


def path_uniforms(seed: int, paths: np.ndarray, step: int) -> np.ndarray:
    """Four uniforms per path for one simulation step.

    The key is ``(seed, path index)``, one independent stream per path; the
    counter is ``(step, 0, 0, 0)``.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    key = np.stack([np.full(paths.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)), paths], axis=-1)
    ctr = np.zeros(paths.shape + (4,), dtype=np.uint64)
    ctr[..., 0] = np.uint64(step)
    return to_unit(philox4x64(ctr, key))
