"""Combinatorial graph Laplacians, topology masks and reference graphs.

Nodes of a block graph are numbered in raster order: pixel ``(r, c)`` of a
``side x side`` block is node ``r * side + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9
PSD_TOL = -1e-8

TOPOLOGY_KINDS = ("full", "grid8", "grid4", "path")


class InvalidGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Edge constraint family.

    ``ndim=2`` describes a ``side x side`` pixel block (``full``, ``grid8``,
    ``grid4``); ``ndim=1`` describes a line of ``side`` nodes (``full`` or
    ``path``), used for the factors of separable transforms.
    """

    kind: str
    side: int
    ndim: int = 2

    def __post_init__(self):
        if self.kind not in TOPOLOGY_KINDS:
            raise InvalidGraphError(f"unknown topology {self.kind!r}")
        if self.kind == "path":
            object.__setattr__(self, "ndim", 1)
        if self.kind in ("grid4", "grid8") and self.ndim != 2:
            raise InvalidGraphError(f"{self.kind} is a 2-D topology")
        if self.side < 2:
            raise InvalidGraphError("side must be at least 2")

    @property
    def n(self) -> int:
        return self.side ** self.ndim

    def factor(self) -> "Topology":
        """1-D topology used for each factor of a separable model."""
        if self.kind == "full":
            return Topology("full", self.side, ndim=1)
        return Topology("path", self.side)


def topology_mask(t: Topology) -> np.ndarray:
    """Symmetric boolean adjacency mask with an empty diagonal."""
    if t.side < 2:
        raise InvalidGraphError("side must be at least 2")
    n = t.n
    if t.kind == "full":
        mask = ~np.eye(n, dtype=bool)
    elif t.kind == "path":
        idx = np.arange(n - 1)
        mask = np.zeros((n, n), dtype=bool)
        mask[idx, idx + 1] = True
    else:
        side = t.side
        r, c = np.divmod(np.arange(n), side)
        dr = np.abs(r[:, None] - r[None, :])
        dc = np.abs(c[:, None] - c[None, :])
        mask = (dr + dc) == 1
        if t.kind == "grid8":
            mask |= (dr == 1) & (dc == 1)
    return mask | mask.T


@dataclass(frozen=True, eq=False)
class CglMatrix:
    laplacian: np.ndarray
    mask: np.ndarray = field(repr=False)
    kind: str | None = None

    def __post_init__(self):
        lap = np.asarray(self.laplacian, dtype=float)
        n = lap.shape[0]
        if lap.shape != (n, n):
            raise InvalidGraphError("Laplacian must be square")
        if not np.array_equal(lap, lap.T):
            raise InvalidGraphError("Laplacian must be exactly symmetric")
        mask = np.asarray(self.mask, dtype=bool)
        off = lap - np.diag(np.diag(lap))
        if np.any(off > 0):
            raise InvalidGraphError("off-diagonal entries must be nonpositive")
        if np.any(off[~mask] != 0):
            raise InvalidGraphError("edge outside the topology mask")
        scale = max(1.0, float(np.abs(lap).max(initial=0.0)))
        if np.any(np.abs(lap.sum(axis=1)) > ROW_SUM_TOL * scale):
            raise InvalidGraphError("rows of a CGL must sum to zero")
        lap.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "laplacian", lap)
        object.__setattr__(self, "mask", mask)

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        w = -self.laplacian.copy()
        np.fill_diagonal(w, 0.0)
        return w

    def packed_weights(self) -> np.ndarray:
        """Upper-triangle edge weights, row by row."""
        iu = np.triu_indices(self.n, k=1)
        return self.adjacency[iu]

    @classmethod
    def from_packed(cls, weights, n: int, mask=None, kind=None) -> "CglMatrix":
        w = np.zeros((n, n))
        w[np.triu_indices(n, k=1)] = weights
        return from_weights(w + w.T, mask=mask, kind=kind)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.laplacian)[0])


@dataclass(frozen=True, eq=False)
class SeparablePair:
    """Factor graphs of a separable model on ``side x side`` blocks.

    ``m_row`` couples pixels within a row, ``m_col`` pixels within a column.
    With raster-order vectorization the full model is
    ``kron(m_col + J, m_row + J)``.
    """

    m_row: CglMatrix
    m_col: CglMatrix

    def __post_init__(self):
        if self.m_row.n != self.m_col.n:
            raise InvalidGraphError("separable factors must have equal size")

    @property
    def side(self) -> int:
        return self.m_row.n


def from_weights(w, mask=None, kind=None) -> CglMatrix:
    """``L = D - W`` for a nonnegative symmetric weight matrix."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InvalidGraphError("weight matrix must be square")
    if np.any(w < 0):
        raise InvalidGraphError("edge weights must be nonnegative")
    if np.any(np.diag(w) != 0):
        raise InvalidGraphError("weight matrix must have a zero diagonal")
    if not np.allclose(w, w.T, rtol=0, atol=1e-12):
        raise InvalidGraphError("weight matrix must be symmetric")
    w = 0.5 * (w + w.T)
    lap = np.diag(w.sum(axis=1)) - w
    if mask is None:
        mask = w > 0
    return CglMatrix(lap, mask, kind)


def path_laplacian(m: int, weight: float = 1.0) -> CglMatrix:
    t = Topology("path", m)
    mask = topology_mask(t)
    return from_weights(weight * mask, mask=mask, kind="path")


def dct_grid_laplacian(side: int) -> CglMatrix:
    """Unit-weight 4-connected grid: the graph whose GFT is the 2-D DCT-II."""
    t = Topology("grid4", side)
    mask = topology_mask(t)
    return from_weights(mask.astype(float), mask=mask, kind="grid4")


def kron_sum_factors(cgl: CglMatrix, atol: float = 1e-12):
    """Return ``(L_col, L_row)`` if ``L = L_col (x) I + I (x) L_row``.

    ``L_col`` couples pixels of the same column (acts on the row index),
    ``L_row`` couples pixels of the same row. Returns ``None`` when the
    Laplacian does not have this structure.
    """
    n = cgl.n
    side = int(round(np.sqrt(n)))
    if side * side != n or side < 2:
        return None
    lap = cgl.laplacian
    w_row = -lap[:side, :side].copy()
    w_col = -lap[::side, ::side].copy()
    np.fill_diagonal(w_row, 0.0)
    np.fill_diagonal(w_col, 0.0)
    if np.any(w_row < 0) or np.any(w_col < 0):
        return None
    l_row = np.diag(w_row.sum(axis=1)) - w_row
    l_col = np.diag(w_col.sum(axis=1)) - w_col
    eye = np.eye(side)
    rebuilt = np.kron(l_col, eye) + np.kron(eye, l_row)
    if not np.allclose(rebuilt, lap, rtol=0, atol=atol):
        return None
    return from_weights(w_col), from_weights(w_row)
