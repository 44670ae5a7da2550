"""Dense symmetric eigen-solvers and rank-1 factorization.

All routines work on small dense matrices (block sizes up to 64 nodes) and
return deterministic results: eigenvalues ascending, eigenvector signs fixed
so that each vector's dominant entry is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WEIGHT_FLOOR = 1e-4

# entries within this relative distance of the column maximum count as ties
_SIGN_TIE_RTOL = 1e-8


class InvalidInputError(ValueError):
    pass


class InvalidWeightError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class EigenPair:
    values: np.ndarray
    vectors: np.ndarray

    def __iter__(self):
        # allows ``values, vectors = sym_eig(a)``
        yield self.values
        yield self.vectors


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the entry of largest magnitude is positive.

    Ties (up to a relative 1e-8) resolve to the lowest row index, which keeps
    the choice stable under round-off.
    """
    v = np.array(vectors, dtype=float, copy=True)
    mag = np.abs(v)
    peak = mag.max(axis=0)
    is_peak = mag >= peak * (1.0 - _SIGN_TIE_RTOL)
    first = np.argmax(is_peak, axis=0)
    signs = np.sign(v[first, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def _as_symmetric(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    # single stored triangle: mirror the lower one
    return np.tril(a) + np.tril(a, -1).T


def sym_eig(a) -> EigenPair:
    """Eigendecomposition of a real symmetric matrix, ascending eigenvalues."""
    a = _as_symmetric(a)
    values, vectors = np.linalg.eigh(a)
    return EigenPair(values, fix_signs(vectors))


def gen_eig_diag(l, q) -> EigenPair:
    """Solve ``L u = lambda diag(q) u`` for positive ``q``.

    The problem is whitened to ``Q^-1/2 L Q^-1/2 v = lambda v`` and mapped
    back with ``u = Q^-1/2 v``, so the returned vectors satisfy
    ``U.T @ diag(q) @ U = I``.
    """
    l = _as_symmetric(l)
    q = np.asarray(q, dtype=float).ravel()
    if q.shape[0] != l.shape[0]:
        raise InvalidWeightError(f"weight vector has length {q.shape[0]}, expected {l.shape[0]}")
    if not np.all(np.isfinite(q)) or np.any(q <= 0):
        raise InvalidWeightError("weights must be finite and strictly positive")
    s = 1.0 / np.sqrt(q)
    values, v = np.linalg.eigh(s[:, None] * l * s[None, :])
    return EigenPair(values, fix_signs(s[:, None] * v))


def rank1_nonneg(m, floor: float = WEIGHT_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Best Frobenius rank-1 approximation ``u v^T`` of a nonnegative matrix.

    The leading singular value is split evenly between the factors. Both
    factors are made nonnegative (Perron-Frobenius) and clamped to ``floor``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError("expected a 2-D matrix")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise InvalidInputError("matrix must be finite and nonnegative")
    if not np.any(m > 0):
        raise DegenerateInputError("all-zero matrix has no rank-1 factorization")
    left, sv, right_t = np.linalg.svd(m)
    scale = np.sqrt(sv[0])
    u = np.abs(left[:, 0]) * scale
    v = np.abs(right_t[0]) * scale
    return np.maximum(u, floor), np.maximum(v, floor)
