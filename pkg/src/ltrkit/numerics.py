"""Stable softmax family, the seeded generator and a finite-difference oracle.

All matrices are 2-D float64 numpy arrays in row-major (batch x class) layout.

The generator is numpy's PCG64 (PCG-XSL-RR 128/64) seeded through
``SeedSequence([seed, stream])``.  Only raw 64-bit outputs are consumed;
uniforms, normals and permutations are derived here so the streams do not
depend on numpy's distribution code:

* uniform:     ``(raw >> 11) * 2**-53`` in ``[0, 1)``
* normal:      Box-Muller on pairs of uniforms, ``u1`` mapped to ``(0, 1]``
* permutation: stable argsort of ``n`` raw keys
"""

from __future__ import annotations

import hashlib
import json
from typing import Callable

import numpy as np

_TWO_POW_M53 = 2.0**-53


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got shape {a.shape}")
    return a


def _check_finite(z: np.ndarray, name: str) -> None:
    # one cheap reduction on the common path; locate the row only on failure
    if np.isfinite(z.sum()):
        return
    bad = ~np.isfinite(z).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name}: non-finite value in row {row}")


def log_softmax(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    _check_finite(z, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = as_matrix(logits, "logits")
    _check_finite(z, "logits")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one entry at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """``max|a - n| / max(max|a|, max|n|)``, the scale-aware gradient error.

    Entry-wise ratios are meaningless for entries near zero (e.g. softmax
    tails at large logit scale), so the error is normalised by the largest
    gradient magnitude in the matrix.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


class SeededRNG:
    """Deterministic generator over PCG64 raw output; single owner."""

    algorithm = "PCG64/SeedSequence"

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bitgen = np.random.PCG64(np.random.SeedSequence([self.seed, self.stream]))

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bitgen.random_raw(n), dtype=np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argsort(self.raw(n), kind="stable").astype(np.int64)

    def state_digest(self) -> str:
        state = json.dumps(self._bitgen.state, sort_keys=True, default=int)
        return hashlib.sha256(state.encode()).hexdigest()


def seeded_rng(seed: int, stream: int = 0) -> SeededRNG:
    return SeededRNG(seed, stream)
