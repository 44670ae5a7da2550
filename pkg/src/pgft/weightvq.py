"""Block-level weight codebook (k-means) and perceptual block classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .perceptual import WeightMap
from .spectral import WEIGHT_FLOOR


@dataclass(frozen=True, eq=False)
class WeightCodebook:
    codewords: np.ndarray  # (n_c, n)

    def __post_init__(self):
        cw = np.atleast_2d(np.asarray(self.codewords, dtype=float))
        if cw.shape[0] < 1 or np.any(cw <= 0):
            raise ValueError("codebook needs at least one strictly positive codeword")
        object.__setattr__(self, "codewords", cw)

    @property
    def n_c(self) -> int:
        return self.codewords.shape[0]

    @property
    def n(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True, eq=False)
class ClassMap:
    labels: np.ndarray  # (blocks_y, blocks_x)

    @property
    def blocks_y(self) -> int:
        return self.labels.shape[0]

    @property
    def blocks_x(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        return isinstance(other, ClassMap) and np.array_equal(self.labels, other.labels)


def blockify(arr, block_side: int) -> np.ndarray:
    """Split a 2-D array into raster-ordered, raster-vectorized blocks."""
    arr = np.asarray(arr)
    h, w = arr.shape
    if h % block_side or w % block_side:
        raise ValueError(f"{h}x{w} is not a multiple of block side {block_side}")
    by, bx = h // block_side, w // block_side
    return (arr.reshape(by, block_side, bx, block_side)
               .transpose(0, 2, 1, 3)
               .reshape(by * bx, block_side * block_side))


def unblockify(blocks, blocks_y: int, blocks_x: int, block_side: int) -> np.ndarray:
    blocks = np.asarray(blocks)
    return (blocks.reshape(blocks_y, blocks_x, block_side, block_side)
                  .transpose(0, 2, 1, 3)
                  .reshape(blocks_y * block_side, blocks_x * block_side))


def extract_block_weights(weights, block_side: int) -> np.ndarray:
    q = weights.weights if isinstance(weights, WeightMap) else weights
    return blockify(np.asarray(q, dtype=float), block_side)


def nearest_codeword(samples: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest codeword; ties go to the lowest index."""
    dist = np.empty((samples.shape[0], codewords.shape[0]))
    for k, c in enumerate(codewords):
        dist[:, k] = np.sum((samples - c) ** 2, axis=1)
    return np.argmin(dist, axis=1)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(x.shape[0], p=d2 / total)
        else:
            idx = rng.integers(x.shape[0])
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers, dtype=float)


def kmeans(samples, k: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 100):
    """Lloyd's algorithm from a k-means++ start.

    Returns ``(centers, labels, inertia_history)``; the history holds the
    within-cluster sum of squares after every assignment step.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (samples, dim) array")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"cannot fit {k} codewords to {x.shape[0]} samples")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, k, rng)
    history = []
    for _ in range(max_iter):
        labels = nearest_codeword(x, centers)
        history.append(float(np.sum((x - centers[labels]) ** 2)))
        new = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    labels = nearest_codeword(x, centers)
    history.append(float(np.sum((x - centers[labels]) ** 2)))
    return centers, labels, history


def train_codebook(samples, n_c: int, seed: int = 0) -> WeightCodebook:
    centers, _, _ = kmeans(samples, n_c, seed)
    # classes ordered by mean weight so label 0 is the least important class
    centers = centers[np.argsort(centers.mean(axis=1), kind="stable")]
    return WeightCodebook(np.maximum(centers, WEIGHT_FLOOR))


def assign_classes(weights, cb: WeightCodebook, block_side: int) -> ClassMap:
    q = weights.weights if isinstance(weights, WeightMap) else np.asarray(weights, dtype=float)
    if block_side * block_side != cb.n:
        raise ValueError(f"codebook is for {cb.n}-pixel blocks, not {block_side}x{block_side}")
    blocks = extract_block_weights(q, block_side)
    labels = nearest_codeword(blocks, cb.codewords)
    h, w = q.shape
    return ClassMap(labels.reshape(h // block_side, w // block_side))
