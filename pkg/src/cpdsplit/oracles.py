"""Brute-force matrix-exponential oracles for the closed-form kernels.

These share nothing with the Rodrigues evaluation in :mod:`cpdsplit.fields`
except the hat map; they are plain Taylor series with scaling and squaring.
"""
from __future__ import annotations

import numpy as np

from .fields import hat


def expm_taylor(A: np.ndarray, terms: int = 30) -> np.ndarray:
    """Matrix exponential by a truncated Taylor series with scaling and squaring."""
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, ord=np.inf)
    squarings = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0.5 else 0
    B = A / 2.0 ** squarings
    n = A.shape[0]
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, terms + 1):
        term = term @ B / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def phi_matrices(omega, t: float):
    """Return ``exp(tW)``, ``phi1(tW)`` and ``phi2(tW)`` for ``W = hat(omega)``.

    Uses the block identity ``exp([[tW, tI, 0], [0, 0, tI], [0, 0, 0]])`` whose
    first block row is ``[exp(tW), t phi1(tW), t^2 phi2(tW)]``.
    """
    W = hat(omega)
    M = np.zeros((9, 9))
    M[:3, :3] = t * W
    M[:3, 3:6] = t * np.eye(3)
    M[3:6, 6:9] = t * np.eye(3)
    big = expm_taylor(M)
    E = big[:3, :3]
    if t == 0:
        return E, np.eye(3), 0.5 * np.eye(3)
    return E, big[:3, 3:6] / t, big[:3, 6:9] / (t * t)
