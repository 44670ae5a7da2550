"""Irregularity-aware graph Fourier transforms (IAGFT) on image blocks.

A basis for the pair ``(L, Q = diag(q))`` has columns ``U`` solving
``L u = lambda Q u`` with ``U^T Q U = I``. The forward transform is
``F = U^T Q`` and the inverse is ``U``. Coefficients are always listed in
scan order (ascending graph frequency).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import CglMatrix, SeparablePair, kron_sum_factors
from .spectral import fix_signs, gen_eig_diag, rank1_nonneg, sym_eig


def separable_scan_order(eig_col, eig_row) -> np.ndarray:
    """Raster indices ``i*side + j`` sorted by ``eig_col[i] + eig_row[j]``.

    Ties (to 1e-9) are broken by ``i + j`` and then by ``i``.
    """
    eig_col = np.asarray(eig_col, dtype=float)
    eig_row = np.asarray(eig_row, dtype=float)
    side = eig_col.shape[0]
    i, j = np.divmod(np.arange(side * side), side)
    total = eig_col[i] + eig_row[j]
    scale = max(1.0, float(np.abs(total).max()))
    key = np.round(total / scale, 9)
    return np.lexsort((i, i + j, key))


@dataclass(frozen=True, eq=False)
class IagftBasis:
    u: np.ndarray
    q: np.ndarray
    eigenvalues: np.ndarray
    forward_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "forward_matrix", self.u.T * self.q[None, :])

    @property
    def n(self) -> int:
        return self.u.shape[0]

    def inverse_matrix(self) -> np.ndarray:
        return self.u


def build_iagft(l: CglMatrix, q=None) -> IagftBasis:
    """Basis of the ``(L, diag(q))``-GFT.

    Kronecker-sum Laplacians (e.g. the DCT grid) with constant weights have
    degenerate spectra; there the basis is assembled from the factor
    eigenvectors so it is unique and matches the separable DCT exactly.
    """
    lap = l.laplacian if isinstance(l, CglMatrix) else np.asarray(l, dtype=float)
    n = lap.shape[0]
    q = np.ones(n) if q is None else np.asarray(q, dtype=float).ravel()
    factors = None
    if isinstance(l, CglMatrix) and q.shape[0] == n and np.all(q == q[0]) and q[0] > 0:
        factors = kron_sum_factors(l)
    if factors is None:
        values, u = gen_eig_diag(lap, q)
        return IagftBasis(u, q, values)
    l_col, l_row = factors
    col = sym_eig(l_col.laplacian)
    row = sym_eig(l_row.laplacian)
    order = separable_scan_order(col.values, row.values)
    values = np.add.outer(col.values, row.values).ravel()[order] / q[0]
    u = np.kron(col.vectors, row.vectors)[:, order] / np.sqrt(q[0])
    return IagftBasis(fix_signs(u), q, values)


def forward(b, block) -> np.ndarray:
    x = np.asarray(block, dtype=float).ravel()
    fm = b.forward_matrix if isinstance(b, IagftBasis) else b.forward_matrix()
    if x.shape[0] != fm.shape[1]:
        raise ValueError(f"block has {x.shape[0]} samples, basis expects {fm.shape[1]}")
    return fm @ x


def inverse(b, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float).ravel()
    return b.inverse_matrix() @ c


@dataclass(frozen=True, eq=False)
class SeparableBasis:
    """Rank-1 separable IAGFT: ``C = U_col^T Q_col X Q_row U_row``."""

    u_row: np.ndarray
    u_col: np.ndarray
    q_row: np.ndarray
    q_col: np.ndarray
    eig_row: np.ndarray
    eig_col: np.ndarray
    rank1_error: float = 0.0

    @property
    def side(self) -> int:
        return self.u_row.shape[0]

    @property
    def n(self) -> int:
        return self.side ** 2

    @property
    def order(self) -> np.ndarray:
        return separable_scan_order(self.eig_col, self.eig_row)

    @property
    def left(self) -> np.ndarray:
        return self.u_col.T * self.q_col[None, :]

    @property
    def right(self) -> np.ndarray:
        return self.q_row[:, None] * self.u_row

    def forward_matrix(self) -> np.ndarray:
        return np.kron(self.left, self.right.T)[self.order]

    def inverse_matrix(self) -> np.ndarray:
        return np.kron(self.u_col, self.u_row)[:, self.order]


@dataclass(frozen=True, eq=False)
class RowColBasis:
    """Row transforms with per-row weights, then one weighted column transform.

    Row ``r`` uses the weights ``w[r, :] / rho[r]`` and the column stage uses
    ``rho`` (the row means), so the product of the two stage weights is the
    exact block weight and the generalized Parseval identity holds.
    """

    u_rows: np.ndarray  # (side, side, side): basis of row r is u_rows[r]
    row_weights: np.ndarray  # (side, side)
    u_col: np.ndarray
    col_weights: np.ndarray
    eig_rows: np.ndarray  # (side, side)
    eig_col: np.ndarray

    @property
    def side(self) -> int:
        return self.u_col.shape[0]

    @property
    def n(self) -> int:
        return self.side ** 2

    @property
    def order(self) -> np.ndarray:
        return separable_scan_order(self.eig_col, self.eig_rows.mean(axis=0))

    @property
    def row_forward(self) -> np.ndarray:
        return np.transpose(self.u_rows, (0, 2, 1)) * self.row_weights[:, None, :]

    @property
    def col_forward(self) -> np.ndarray:
        return self.u_col.T * self.col_weights[None, :]

    def forward_matrix(self) -> np.ndarray:
        eye = np.eye(self.n)
        cols = [forward_separable(self, e.reshape(self.side, self.side)).ravel() for e in eye]
        return np.array(cols).T[self.order]

    def inverse_matrix(self) -> np.ndarray:
        eye = np.eye(self.n)
        cols = [inverse_separable(self, e.reshape(self.side, self.side)).ravel() for e in eye]
        return np.array(cols).T[:, self.order]


def build_separable(pair: SeparablePair, q_block, mode: str = "rank1"):
    """Separable IAGFT for a block weight matrix ``q_block`` (side x side)."""
    w = np.asarray(q_block, dtype=float)
    side = pair.side
    if w.shape != (side, side):
        w = w.reshape(side, side)
    if np.any(w <= 0):
        raise ValueError("block weights must be strictly positive")
    if mode == "rank1":
        q_col, q_row = rank1_nonneg(w)
        err = float(np.linalg.norm(w - np.outer(q_col, q_row)))
        col = gen_eig_diag(pair.m_col.laplacian, q_col)
        row = gen_eig_diag(pair.m_row.laplacian, q_row)
        return SeparableBasis(row.vectors, col.vectors, q_row, q_col,
                              row.values, col.values, err)
    if mode == "rowcol":
        rho = w.mean(axis=1)
        alpha = w / rho[:, None]
        rows = [gen_eig_diag(pair.m_row.laplacian, alpha[r]) for r in range(side)]
        col = gen_eig_diag(pair.m_col.laplacian, rho)
        return RowColBasis(np.array([r.vectors for r in rows]), alpha, col.vectors, rho,
                           np.array([r.values for r in rows]), col.values)
    raise ValueError(f"unknown separable mode {mode!r}")


def forward_separable(b, block) -> np.ndarray:
    """Coefficient matrix in natural ``(i, j)`` layout; ``.ravel()[b.order]`` scans it."""
    x = np.asarray(block, dtype=float)
    if x.shape != (b.side, b.side):
        raise ValueError(f"block shape {x.shape}, expected {(b.side, b.side)}")
    if isinstance(b, SeparableBasis):
        return b.left @ x @ b.right
    y = np.einsum("rkc,rc->rk", b.row_forward, x)
    return b.col_forward @ y


def inverse_separable(b, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    if isinstance(b, SeparableBasis):
        return b.u_col @ c @ b.u_row.T
    y = b.u_col @ c
    return np.einsum("rck,rk->rc", b.u_rows, y)
