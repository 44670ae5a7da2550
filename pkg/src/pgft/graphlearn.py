"""Per-class covariance estimation and constrained Laplacian learning.

Non-separable model: minimize ``-logdet(L + 11^T/n) + tr(L S)`` over
combinatorial Laplacians supported on a topology mask.

Separable model: minimize ``-logdet(M) + tr(M S)`` with
``M = kron(M_col + J, M_row + J)`` and ``J = 11^T/side``, alternating between
the two factors. Each half-step is again a CGL problem of size ``side``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graphs import (CglMatrix, SeparablePair, Topology, from_weights,
                     path_laplacian, topology_mask)

log = logging.getLogger(__name__)

COND_LIMIT = 1e10


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ClassCovariance:
    s: np.ndarray
    count: int


def class_covariance(blocks, labels, class_id: int) -> ClassCovariance:
    """Sample covariance of the blocks of one class around their own means."""
    blocks = np.asarray(blocks, dtype=float)
    sel = blocks[np.asarray(labels).ravel() == class_id]
    k = sel.shape[0]
    if k < 2:
        raise InsufficientDataError(f"class {class_id} has {k} blocks, need at least 2")
    centered = sel - sel.mean(axis=1, keepdims=True)
    s = centered.T @ centered / (k - 1)
    s = 0.5 * (s + s.T)
    n = s.shape[0]
    tr = np.trace(s)
    if tr > 0:
        # the constant direction is null by construction; judge the rest
        ev = np.linalg.eigvalsh(s + (tr / n) * np.ones((n, n)) / n)
        if ev[0] <= 0 or ev[-1] / ev[0] > COND_LIMIT:
            s = s + 1e-6 * tr / n * np.eye(n)
    return ClassCovariance(s, k)


def _logdet_pd(a: np.ndarray) -> float:
    try:
        c = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return -np.inf
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def cgl_objective(lap, s) -> float:
    """``-logdet(L + 11^T/n) + tr(L S)``; ``+inf`` for disconnected graphs."""
    lap = lap.laplacian if isinstance(lap, CglMatrix) else np.asarray(lap, dtype=float)
    n = lap.shape[0]
    return -_logdet_pd(lap + 1.0 / n) + float(np.sum(lap * s))


@njit(cache=True)
def _cd_sweep(w, ei, ej, c, sigma, g):
    # exact minimization over one edge weight at a time; sigma = (L + J)^-1
    n = sigma.shape[0]
    for e in range(w.shape[0]):
        i = ei[e]
        j = ej[e]
        r = sigma[i, i] + sigma[j, j] - 2.0 * sigma[i, j]
        delta = 1.0 / c[e] - 1.0 / r
        if delta < -w[e]:
            delta = -w[e]
        if delta == 0.0:
            continue
        w[e] += delta
        coef = delta / (1.0 + delta * r)
        for a in range(n):
            g[a] = sigma[a, i] - sigma[a, j]
        for a in range(n):
            ga = coef * g[a]
            for b in range(n):
                sigma[a, b] -= ga * g[b]


def _assemble(w, ei, ej, n, mask, kind) -> CglMatrix:
    adj = np.zeros((n, n))
    adj[ei, ej] = w
    adj[ej, ei] = w
    return from_weights(adj, mask=mask, kind=kind)


def _initial_weights(s, ei, ej, c) -> np.ndarray:
    n = s.shape[0]
    load = 1e-3 * max(np.trace(s) / n, 1e-12)
    prec = np.linalg.inv(s + np.ones((n, n)) / n + load * np.eye(n))
    w = np.maximum(-prec[ei, ej], 0.0)
    # keep the start connected: every allowed edge gets a small weight
    floor = 1e-3 * (w.mean() if w.any() else 1.0 / c.mean())
    return np.maximum(w, floor)


def learn_cgl(s, topo: Topology, tol: float = 1e-7, max_iter: int = 500,
              init: CglMatrix | None = None, history: list | None = None) -> CglMatrix:
    """Fit a CGL supported on ``topo`` by block-coordinate descent.

    Blocks are single edges; each update is the closed-form minimizer of the
    objective along that edge weight, clipped at zero, so every iterate is a
    valid CGL and the objective never increases. ``history`` (if given)
    receives the objective after initialization and after every sweep.
    """
    s = s.s if isinstance(s, ClassCovariance) else np.asarray(s, dtype=float)
    n = s.shape[0]
    if topo.n != n:
        raise ValueError(f"topology has {topo.n} nodes, covariance is {n}x{n}")
    if not np.all(np.isfinite(s)):
        raise ValueError("covariance has non-finite entries")
    mask = topology_mask(topo)
    ei, ej = np.nonzero(np.triu(mask, 1))
    c = s[ei, ei] + s[ej, ej] - 2.0 * s[ei, ej]
    if np.any(c <= 0):
        raise ValueError("covariance is not positive definite on the topology edges")
    if init is None:
        w = _initial_weights(s, ei, ej, c)
    else:
        w = init.adjacency[ei, ej].copy()
    ones = np.ones((n, n)) / n
    g = np.empty(n)

    def evaluate(w):
        lap = _assemble(w, ei, ej, n, mask, topo.kind).laplacian
        return lap, cgl_objective(lap, s)

    lap, f = evaluate(w)
    if not np.isfinite(f):
        w = np.maximum(w, 1e-3 / c.mean())
        lap, f = evaluate(w)
    trace = [f]
    for _ in range(max_iter):
        sigma = np.linalg.inv(lap + ones)
        sigma = 0.5 * (sigma + sigma.T)
        _cd_sweep(w, ei, ej, c, sigma, g)
        lap, f_new = evaluate(w)
        trace.append(f_new)
        done = (f - f_new) <= tol * max(1.0, abs(f_new))
        f = f_new
        if done:
            break
    if history is not None:
        history.extend(trace)
    return _assemble(w, ei, ej, n, mask, topo.kind)


def _kron_model(pair_or_factors):
    if isinstance(pair_or_factors, SeparablePair):
        a, b = pair_or_factors.m_col.laplacian, pair_or_factors.m_row.laplacian
    else:
        a, b = pair_or_factors
    side = a.shape[0]
    j = np.ones((side, side)) / side
    return a + j, b + j


def separable_objective(pair: SeparablePair, s) -> float:
    """Objective of the separable model, using the Kronecker log-det identity."""
    s = s.s if isinstance(s, ClassCovariance) else np.asarray(s, dtype=float)
    a, b = _kron_model(pair)
    side = a.shape[0]
    t = s.reshape(side, side, side, side)
    tr = float(np.einsum("ab,acbd,cd->", a, t, b))
    return -side * (_logdet_pd(a) + _logdet_pd(b)) + tr


def separable_objective_dense(pair: SeparablePair, s) -> float:
    """Same objective evaluated on the assembled ``n x n`` matrix."""
    s = s.s if isinstance(s, ClassCovariance) else np.asarray(s, dtype=float)
    a, b = _kron_model(pair)
    m = np.kron(a, b)
    return -_logdet_pd(m) + float(np.sum(m * s))


def _contract_col(t, b):
    # tr(kron(A, B) S) = tr(A @ S_A)
    return np.einsum("acbd,dc->ab", t, b)


def _contract_row(t, a):
    return np.einsum("acbd,ba->cd", t, a)


def learn_separable(s, side: int, tol: float = 1e-7, max_sweeps: int = 50,
                    factor_topology: Topology | None = None,
                    inner_tol: float = 1e-9, inner_max_iter: int = 500,
                    history: list | None = None) -> SeparablePair:
    """Alternating minimization of the separable model.

    With one factor fixed, the objective in the other is a CGL problem of size
    ``side`` with a contracted covariance, solved by ``learn_cgl`` warm-started
    at the current factor. ``history`` receives the objective after
    initialization and after every half-sweep.
    """
    s = s.s if isinstance(s, ClassCovariance) else np.asarray(s, dtype=float)
    if side * side != s.shape[0] or s.shape[0] != s.shape[1]:
        raise ValueError(f"covariance of size {s.shape} does not match {side}x{side} blocks")
    topo = factor_topology or Topology("path", side)
    if topo.n != side:
        raise ValueError("factor topology must have `side` nodes")
    t = s.reshape(side, side, side, side)
    j = np.ones((side, side)) / side

    # start from the within-row and within-column marginal covariances
    s_row = np.einsum("acad->cd", t) / side
    s_col = np.einsum("acbc->ab", t) / side
    m_row = learn_cgl(s_row, topo, tol=inner_tol, max_iter=inner_max_iter)
    m_col = learn_cgl(s_col, topo, tol=inner_tol, max_iter=inner_max_iter)
    pair = SeparablePair(m_row, m_col)
    f = separable_objective(pair, s)
    trace = [f]
    for _ in range(max_sweeps):
        f_start = f
        s_a = _contract_col(t, pair.m_row.laplacian + j) / side
        m_col = learn_cgl(0.5 * (s_a + s_a.T), topo, tol=inner_tol,
                          max_iter=inner_max_iter, init=pair.m_col)
        pair = SeparablePair(pair.m_row, m_col)
        trace.append(separable_objective(pair, s))
        s_b = _contract_row(t, pair.m_col.laplacian + j) / side
        m_row = learn_cgl(0.5 * (s_b + s_b.T), topo, tol=inner_tol,
                          max_iter=inner_max_iter, init=pair.m_row)
        pair = SeparablePair(m_row, pair.m_col)
        f = separable_objective(pair, s)
        trace.append(f)
        if (f_start - f) <= tol * max(1.0, abs(f)):
            break
    if history is not None:
        history.extend(trace)
    return pair


def unit_path_pair(side: int) -> SeparablePair:
    return SeparablePair(path_laplacian(side), path_laplacian(side))


def train_model(images, config=None, saliency_maps=None):
    """Training stage: weights, codebook, segmentation, per-class graphs.

    ``images`` are 2-D uint8 arrays; ``saliency_maps`` (saliency rule only)
    are float maps in [0, 1] of matching size.
    """
    from .images import center_crop
    from .model import TrainConfig, TrainedModel
    from .perceptual import weight_map
    from .tables import delta_for_quality
    from .weightvq import (blockify, extract_block_weights, nearest_codeword,
                           train_codebook)

    config = config or TrainConfig()
    images = list(images)
    if not images:
        raise ValueError("training set is empty")
    side = config.block_side
    n = side * side
    delta = delta_for_quality(config.train_quality, side)
    pixel_blocks, weight_blocks = [], []
    for k, img in enumerate(images):
        img = center_crop(img, side)
        sal = None
        if saliency_maps is not None:
            sal = center_crop(saliency_maps[k], side)
        wm = weight_map(img, config.weight_rule, delta, sal, config.smooth_sigma)
        pixel_blocks.append(blockify(img, side).astype(float))
        weight_blocks.append(extract_block_weights(wm, side))
    x = np.vstack(pixel_blocks)
    qb = np.vstack(weight_blocks)
    codebook = train_codebook(qb, config.n_c, config.seed)
    labels = nearest_codeword(qb, codebook.codewords)

    topo = Topology(config.topology, side)
    separable = config.mode != "nonsep"
    graphs, notes = [], {"counts": [], "fallback": [], "history": []}
    for i in range(config.n_c):
        count = int(np.sum(labels == i))
        notes["counts"].append(count)
        cov = class_covariance(x, labels, i) if count >= 2 * n else None
        if cov is None or np.trace(cov.s) <= 0:
            log.info("class %d: %d blocks, falling back to the DCT graph", i, count)
            notes["fallback"].append(i)
            notes["history"].append([])
            graphs.append(unit_path_pair(side) if separable else _dct_fallback(side))
            continue
        hist: list = []
        if separable:
            g = learn_separable(cov, side, tol=config.tol, max_sweeps=config.max_sweeps,
                                factor_topology=topo.factor(), history=hist)
        else:
            g = learn_cgl(cov, topo, tol=config.tol, max_iter=config.max_iter, history=hist)
        log.info("class %d: %d blocks, objective %.6g -> %.6g in %d steps",
                 i, count, hist[0], hist[-1], len(hist) - 1)
        notes["history"].append(hist)
        graphs.append(g)
    weights = codebook.codewords if config.transform == "iagft" else np.ones((config.n_c, n))
    return TrainedModel(config, codebook, graphs, weights, notes)


def _dct_fallback(side: int) -> CglMatrix:
    from .graphs import dct_grid_laplacian

    return dct_grid_laplacian(side)
