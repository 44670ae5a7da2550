"""Pixel-wise perceptual weights and the weighted MSE they induce."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy import ndimage

from .spectral import WEIGHT_FLOOR

log = logging.getLogger(__name__)

SSIM_C2 = (0.03 * 255.0) ** 2
SALIENCY_C2 = 4.0


@dataclass(frozen=True)
class Window:
    size: int = 11
    sigma: float = 1.5

    def kernel(self) -> np.ndarray:
        x = np.arange(self.size) - (self.size - 1) / 2.0
        g = np.exp(-0.5 * (x / self.sigma) ** 2)
        return g / g.sum()


@dataclass(frozen=True)
class SsimParams:
    delta: float
    c2: float = SSIM_C2
    window: Window = Window()

    def __post_init__(self):
        if not self.delta > 0 or not self.c2 > 0:
            raise ValueError("delta and c2 must be positive")


@dataclass(frozen=True, eq=False)
class WeightMap:
    weights: np.ndarray
    clamped: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    @property
    def height(self) -> int:
        return self.weights.shape[0]

    @property
    def width(self) -> int:
        return self.weights.shape[1]


@njit(cache=True, parallel=True)
def _moments(padded, g, out_mean, out_sq):
    # separable Gaussian of x and x^2 over a pre-padded image (valid region)
    k = g.shape[0]
    h, w = out_mean.shape
    wp = padded.shape[1]
    for r in prange(h):
        a = np.zeros(wp)
        b = np.zeros(wp)
        for t in range(k):
            gt = g[t]
            for c in range(wp):
                v = padded[r + t, c]
                a[c] += gt * v
                b[c] += gt * v * v
        for c in range(w):
            sa = 0.0
            sb = 0.0
            for t in range(k):
                sa += g[t] * a[c + t]
                sb += g[t] * b[c + t]
            out_mean[r, c] = sa
            out_sq[r, c] = sb


def local_variance(img, window: Window = Window()) -> np.ndarray:
    """Gaussian-weighted local variance with half-sample symmetric borders."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D grayscale image")
    g = window.kernel()
    half = window.size // 2
    # centering keeps constant regions exactly at zero variance
    padded = np.pad(img - img.mean(), half, mode="symmetric")
    mu = np.empty_like(img)
    sq = np.empty_like(img)
    _moments(np.ascontiguousarray(padded), g, mu, sq)
    return np.maximum(sq - mu * mu, 0.0)


def weights_from_gamma(gamma: np.ndarray) -> WeightMap:
    """SSIM-optimal weights for per-pixel noise-to-signal terms ``gamma``.

    ``q_i = (n + sum(gamma)) sqrt(gamma_i) / sum(sqrt(gamma)) - gamma_i``.
    Nonpositive results are clamped to the weight floor and the map is
    rescaled so the weights still sum to ``n``.
    """
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.size
    root = np.sqrt(gamma)
    q = (n + gamma.sum()) * root / root.sum() - gamma
    low = q < WEIGHT_FLOOR
    clamped = int(low.sum())
    if clamped:
        log.info("clamped %d nonpositive perceptual weights", clamped)
        # pin clamped entries, rescale the rest; repeat if rescaling creates new ones
        while True:
            q[low] = WEIGHT_FLOOR
            free = n - WEIGHT_FLOOR * low.sum()
            q[~low] *= free / q[~low].sum()
            newly = (q < WEIGHT_FLOOR) & ~low
            if not newly.any():
                break
            low |= newly
    return WeightMap(q, clamped)


def ssim_weights(img, params: SsimParams) -> WeightMap:
    var = local_variance(img, params.window)
    gamma = params.delta ** 2 / (12.0 * (2.0 * var + params.c2))
    return weights_from_gamma(gamma)


def saliency_weights(saliency_map, delta: float, smooth_sigma: float = 8.0,
                     shape: tuple[int, int] | None = None) -> WeightMap:
    """Weights from an external saliency map with values in [0, 1].

    The map is Gaussian-smoothed and then takes the place of the local
    variance in the SSIM weight rule, with ``c2 = 4``. At the steps of
    practical qualities this gives salient pixels the larger weights.
    """
    s = np.asarray(saliency_map, dtype=float)
    if shape is not None and s.shape != tuple(shape):
        raise ValueError(f"saliency map is {s.shape}, image is {tuple(shape)}")
    if s.ndim != 2 or np.any(s < 0):
        raise ValueError("saliency map must be 2-D and nonnegative")
    if smooth_sigma > 0:
        s = ndimage.gaussian_filter(s, smooth_sigma, mode="reflect")
    s = np.clip(s, 0.0, 1.0)
    gamma = delta ** 2 / (12.0 * (2.0 * s + SALIENCY_C2))
    return weights_from_gamma(gamma)


def wmse(ref, dist, weights) -> float:
    ref = np.asarray(ref, dtype=float)
    dist = np.asarray(dist, dtype=float)
    q = weights.weights if isinstance(weights, WeightMap) else np.asarray(weights, dtype=float)
    if not (ref.shape == dist.shape == q.shape):
        raise ValueError("image and weight shapes differ")
    return float(np.mean(q * (ref - dist) ** 2))


def weight_map(img, rule: str, delta: float, saliency=None,
               smooth_sigma: float = 8.0) -> WeightMap:
    """Dispatch on the weight rule used by training and encoding."""
    if rule == "ssim":
        return ssim_weights(img, SsimParams(delta))
    if rule == "saliency":
        if saliency is None:
            raise ValueError("the saliency rule needs a saliency map")
        return saliency_weights(saliency, delta, smooth_sigma, shape=np.shape(img))
    raise ValueError(f"unknown weight rule {rule!r}")
