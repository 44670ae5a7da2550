"""Image quality metrics and Bjontegaard delta bit-rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .perceptual import Window

DATA_RANGE = 255.0
SSIM_C1 = (0.01 * DATA_RANGE) ** 2
SSIM_C2 = (0.03 * DATA_RANGE) ** 2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MS_SSIM_MIN_SIDE = 176  # 11-tap window at the fifth (1/16) scale
CSV_COLUMNS = ("image", "codec", "quality", "bpp", "psnr", "ssim", "msssim")


def _pair(ref, dist) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(ref, dtype=float)
    b = np.asarray(dist, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image sizes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("expected 2-D grayscale images")
    return a, b


def psnr(ref, dist) -> float:
    a, b = _pair(ref, dist)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def _valid_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.shape[0]
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    h = k // 2
    return out[h:img.shape[0] - (k - 1 - h), h:img.shape[1] - (k - 1 - h)]


def _ssim_terms(a: np.ndarray, b: np.ndarray, window: Window) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term over the valid region."""
    if min(a.shape) < window.size:
        raise ValueError(f"images must be at least {window.size}x{window.size}")
    g = window.kernel()
    mu_a = _valid_filter(a, g)
    mu_b = _valid_filter(b, g)
    var_a = _valid_filter(a * a, g) - mu_a ** 2
    var_b = _valid_filter(b * b, g) - mu_b ** 2
    cov = _valid_filter(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + SSIM_C1) / (mu_a ** 2 + mu_b ** 2 + SSIM_C1)
    cs = (2 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ssim(ref, dist, window: Window = Window()) -> float:
    """Mean SSIM over all fully covered 11x11 Gaussian windows."""
    a, b = _pair(ref, dist)
    if np.array_equal(a, b):
        return 1.0
    return _ssim_terms(a, b, window)[0]


def _downsample(img: np.ndarray) -> np.ndarray:
    # 2x2 box average; odd sides are first extended by mirroring the last row/column
    h, w = img.shape
    img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="symmetric")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(ref, dist, weights=MS_SSIM_WEIGHTS, window: Window = Window()) -> float:
    """Five-scale MS-SSIM: contrast-structure terms at the four finer scales,
    full SSIM at the coarsest, combined as a weighted geometric product."""
    a, b = _pair(ref, dist)
    if min(a.shape) < MS_SSIM_MIN_SIDE:
        raise ValueError(f"MS-SSIM needs images of at least {MS_SSIM_MIN_SIDE}x{MS_SSIM_MIN_SIDE}")
    if np.array_equal(a, b):
        return 1.0
    terms = []
    for scale in range(len(weights)):
        s, cs = _ssim_terms(a, b, window)
        terms.append(max(s if scale == len(weights) - 1 else cs, 0.0))
        a, b = _downsample(a), _downsample(b)
    return float(np.prod(np.power(terms, weights)))


@dataclass
class RdCurve:
    rates: list = field(default_factory=list)  # bits per pixel
    values: list = field(default_factory=list)
    metric: str = "msssim"
    image: str = ""
    codec: str = ""

    def __post_init__(self):
        order = np.argsort(self.rates, kind="stable")
        self.rates = [float(self.rates[i]) for i in order]
        self.values = [float(self.values[i]) for i in order]
        if len(self.rates) != len(self.values):
            raise ValueError("rates and values differ in length")

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.rates, self.values))

    def validate(self) -> None:
        if len(self.rates) < 4:
            raise ValueError(f"BD-rate needs at least 4 points, {self.codec or 'curve'} has "
                             f"{len(self.rates)}")
        if np.any(np.diff(self.rates) <= 0) or min(self.rates) <= 0:
            raise ValueError("rates must be positive and strictly increasing")


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average bit-rate difference (percent) of ``test`` over ``anchor`` at equal quality.

    Log-rate is fitted as a cubic in the metric for both curves and the
    fits are integrated over the overlap of the two metric ranges.
    """
    anchor.validate()
    test.validate()
    va, vt = np.asarray(anchor.values), np.asarray(test.values)
    lo = max(va.min(), vt.min())
    hi = min(va.max(), vt.max())
    if not hi > lo:
        raise ValueError("RD curves do not overlap in quality")
    # fit on the overlap mapped to [-1, 1]; raw metric values near 1 make the
    # cubic badly conditioned
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    pa = np.polyint(np.polyfit((va - mid) / half, np.log(anchor.rates), 3))
    pt = np.polyint(np.polyfit((vt - mid) / half, np.log(test.rates), 3))
    diff = 0.5 * ((np.polyval(pt, 1.0) - np.polyval(pt, -1.0))
                  - (np.polyval(pa, 1.0) - np.polyval(pa, -1.0)))
    return 100.0 * math.expm1(diff)


def write_csv(path, rows) -> None:
    """RD points as CSV; ``rows`` are mappings keyed by the CSV columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})
