"""Grayscale image I/O and preprocessing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def to_gray(arr) -> np.ndarray:
    """8-bit luma with BT.601 weights; alpha is dropped."""
    a = np.asarray(arr)
    if a.ndim == 2:
        gray = a.astype(float)
    elif a.ndim == 3 and a.shape[2] in (3, 4):
        rgb = a[..., :3].astype(float)
        gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    else:
        raise ValueError(f"unsupported image shape {a.shape}")
    if a.dtype == np.uint16:
        gray = gray / 257.0
    elif a.dtype.kind == "f" and gray.max(initial=0) <= 1.0:
        gray = gray * 255.0
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("P", "LA", "PA", "CMYK", "YCbCr", "1"):
            im = im.convert("RGBA" if "A" in im.mode else "RGB")
        return to_gray(np.asarray(im))


def save_gray(path, img) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)


def center_crop(img, block_side: int) -> np.ndarray:
    """Largest centered crop whose sides are multiples of ``block_side``."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    hh, ww = h - h % block_side, w - w % block_side
    if hh == 0 or ww == 0:
        raise ValueError(f"{h}x{w} image is smaller than one {block_side}x{block_side} block")
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[top:top + hh, left:left + ww]


def list_images(directory) -> list[Path]:
    d = Path(directory)
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
