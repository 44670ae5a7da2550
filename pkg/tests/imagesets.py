"""Free natural test images shipped with scikit-image, scikit-learn and matplotlib."""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np

from pgft.images import center_crop, load_gray, to_gray

TRAIN = ("brick", "grass", "camera", "coins", "moon", "chelsea", "rocket", "china",
         "motorcycle_left", "motorcycle_right", "hubble_deep_field")
TEST = ("astronaut", "coffee", "gravel", "ihc", "retina", "cell", "clock", "flower",
        "grace_hopper", "page")


def _search_dirs() -> list[Path]:
    dirs = []
    try:
        import skimage
        dirs.append(Path(skimage.__file__).parent / "data")
    except ImportError:
        pass
    try:
        import sklearn
        dirs.append(Path(sklearn.__file__).parent / "datasets" / "images")
    except ImportError:
        pass
    try:
        import matplotlib
        dirs.append(Path(matplotlib.__file__).parent / "mpl-data" / "sample_data")
    except ImportError:
        pass
    return dirs


@lru_cache(maxsize=None)
def load(name: str, block_side: int = 8) -> np.ndarray:
    for d in _search_dirs():
        for suffix in (".png", ".jpg"):
            p = d / f"{name}{suffix}"
            if p.exists():
                return center_crop(load_gray(p), block_side)
    import skimage.data

    return center_crop(to_gray(getattr(skimage.data, name)()), block_side)


def natural_images(names=TRAIN + TEST) -> list[np.ndarray]:
    return [load(n) for n in names]


def resized(name: str, side: int) -> np.ndarray:
    from PIL import Image

    im = Image.fromarray(load(name))
    return np.asarray(im.resize((side, side), Image.Resampling.LANCZOS))


def synthetic(h: int = 64, w: int = 64, seed: int = 0) -> np.ndarray:
    """Smooth gradient plus a textured quadrant, so both classes occur."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:h, 0:w]
    img = 60 + 1.2 * x + 0.8 * y
    img[h // 2:, w // 2:] += rng.normal(0, 25, (h - h // 2, w - w // 2))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
