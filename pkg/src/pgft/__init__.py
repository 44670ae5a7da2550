"""Perceptual graph-transform image codec.

Learns per-class graph Laplacians from training images, builds
irregularity-aware graph Fourier transforms from them and uses those in a
JPEG-style block codec.
"""

import numba as _numba

# the TBB layer is often too old where it is installed; prefer OpenMP
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .codec import Bitstream, decode, encode
from .graphlearn import train_model
from .model import TrainConfig, TrainedModel

__all__ = ["Bitstream", "TrainConfig", "TrainedModel", "decode", "encode", "train_model"]
__version__ = "0.1.0"
