"""Trained model: weight codebook, per-class graphs and transform weights.

Binary layout (little-endian)::

    "PGFT" | version u16 | block_side u8 | n_c u8 | mode u8 | topology u8
    codebook: n_c u16 | n u32 | n_c*n f64
    per class: graph (kind u8 + packed upper-triangle weights f64;
               separable modes store the row factor then the column factor)
    per class: transform weights, n f64
    config echo: length u32 | UTF-8 JSON
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

from .graphs import (CglMatrix, SeparablePair, Topology, dct_grid_laplacian,
                     path_laplacian, topology_mask)
from .weightvq import WeightCodebook

MAGIC = b"PGFT"
VERSION = 1

MODES = ("nonsep", "sep-rc", "sep-r1")
KIND_CODES = {"full": 0, "grid8": 1, "grid4": 2, "path": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    block_side: int = 8
    n_c: int = 2
    topology: str = "full"
    mode: str = "nonsep"
    weight_rule: str = "ssim"
    transform: str = "iagft"
    seed: int = 0
    train_quality: int = 50
    smooth_sigma: float = 8.0
    tol: float = 1e-7
    max_iter: int = 500
    max_sweeps: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.topology not in ("full", "grid8", "grid4"):
            raise ValueError("topology must be full, grid8 or grid4")
        if self.weight_rule not in ("ssim", "saliency"):
            raise ValueError("weight rule must be ssim or saliency")
        if self.transform not in ("iagft", "gft"):
            raise ValueError("transform must be iagft or gft")
        if not 2 <= self.block_side <= 16:
            raise ValueError("block side must be between 2 and 16")
        if not 1 <= self.n_c <= 255:
            raise ValueError("number of classes must be between 1 and 255")


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(eq=False)
class TrainedModel:
    config: TrainConfig
    codebook: WeightCodebook
    graphs: list  # CglMatrix per class, or SeparablePair in separable modes
    class_weights: np.ndarray  # (n_c, n)
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.class_weights = np.atleast_2d(np.asarray(self.class_weights, dtype=float))
        n = self.config.block_side ** 2
        if self.codebook.n != n or self.class_weights.shape != (self.codebook.n_c, n):
            raise ModelFormatError("codebook/weights do not match the block size")
        if len(self.graphs) != self.codebook.n_c:
            raise ModelFormatError("one graph per class is required")
        want = SeparablePair if self.separable else CglMatrix
        if not all(isinstance(g, want) for g in self.graphs):
            raise ModelFormatError(f"mode {self.config.mode} expects {want.__name__} graphs")
        if np.any(self.class_weights <= 0):
            raise ModelFormatError("transform weights must be positive")

    @property
    def separable(self) -> bool:
        return self.config.mode != "nonsep"

    @property
    def n_c(self) -> int:
        return self.codebook.n_c

    @property
    def block_side(self) -> int:
        return self.config.block_side

    @cached_property
    def bases(self) -> list:
        from .transforms import build_iagft, build_separable

        side = self.block_side
        if not self.separable:
            return [build_iagft(g, q) for g, q in zip(self.graphs, self.class_weights)]
        kind = "rank1" if self.config.mode == "sep-r1" else "rowcol"
        return [build_separable(g, q.reshape(side, side), kind)
                for g, q in zip(self.graphs, self.class_weights)]

    # ---- variants used as comparison points

    @classmethod
    def dct_baseline(cls, block_side: int = 8) -> "TrainedModel":
        """JPEG anchor: one class, DCT grid graph, unit weights."""
        n = block_side ** 2
        cfg = TrainConfig(block_side=block_side, n_c=1, topology="grid4", transform="gft")
        return cls(cfg, WeightCodebook(np.ones((1, n))), [dct_grid_laplacian(block_side)],
                   np.ones((1, n)))

    def with_unit_weights(self) -> "TrainedModel":
        """Plain GFT of the learned graphs (classification unchanged)."""
        return TrainedModel(replace(self.config, transform="gft"), self.codebook,
                            list(self.graphs), np.ones_like(self.class_weights))

    def with_dct_graphs(self) -> "TrainedModel":
        """IAGFT on the fixed DCT graph(s) with the learned class weights."""
        side = self.block_side
        if self.separable:
            graphs = [SeparablePair(path_laplacian(side), path_laplacian(side))] * self.n_c
        else:
            graphs = [dct_grid_laplacian(side)] * self.n_c
        return TrainedModel(replace(self.config, topology="grid4"), self.codebook, graphs,
                            self.class_weights.copy())

    # ---- serialization

    def to_bytes(self) -> bytes:
        cfg = self.config
        out = bytearray(MAGIC)
        out += struct.pack("<HBBBB", VERSION, cfg.block_side, self.n_c, MODES.index(cfg.mode),
                           KIND_CODES[cfg.topology])
        cw = self.codebook.codewords
        out += struct.pack("<HI", cw.shape[0], cw.shape[1])
        out += cw.astype("<f8").tobytes()
        for g in self.graphs:
            for cgl in ((g.m_row, g.m_col) if self.separable else (g,)):
                out += struct.pack("<B", KIND_CODES[cgl.kind or "full"])
                out += cgl.packed_weights().astype("<f8").tobytes()
        out += self.class_weights.astype("<f8").tobytes()
        echo = json.dumps(asdict(cfg), sort_keys=True).encode()
        out += struct.pack("<I", len(echo)) + echo
        return bytes(out)

    @cached_property
    def hash(self) -> int:
        return fnv1a_64(self.to_bytes())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "TrainedModel":
        reader = _Reader(data)
        if reader.take(4) != MAGIC:
            raise ModelFormatError("not a model file (bad magic)")
        version, side, n_c, mode, topo = reader.unpack("<HBBBB")
        if version != VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        if mode >= len(MODES) or topo not in KIND_NAMES:
            raise ModelFormatError("bad mode or topology code")
        cb_n_c, n = reader.unpack("<HI")
        if cb_n_c != n_c or n != side * side:
            raise ModelFormatError("codebook header does not match the model header")
        codewords = reader.floats(n_c * n).reshape(n_c, n)
        separable = MODES[mode] != "nonsep"
        graphs = []
        for _ in range(n_c):
            if separable:
                m_row = reader.cgl(side, one_dim=True)
                m_col = reader.cgl(side, one_dim=True)
                graphs.append(SeparablePair(m_row, m_col))
            else:
                graphs.append(reader.cgl(side, one_dim=False))
        weights = reader.floats(n_c * n).reshape(n_c, n)
        (length,) = reader.unpack("<I")
        try:
            echo = json.loads(reader.take(length).decode())
            cfg = TrainConfig(**echo)
        except (ValueError, TypeError) as exc:
            raise ModelFormatError(f"bad config echo: {exc}") from None
        if reader.remaining:
            raise ModelFormatError("trailing bytes after model")
        if (cfg.block_side, cfg.n_c, cfg.mode) != (side, n_c, MODES[mode]):
            raise ModelFormatError("config echo disagrees with the header")
        try:
            return cls(cfg, WeightCodebook(codewords), graphs, weights)
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from None


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, k: int) -> bytes:
        if k < 0 or self.pos + k > len(self.data):
            raise ModelFormatError(f"model file truncated at byte {self.pos}")
        chunk = bytes(self.data[self.pos:self.pos + k])
        self.pos += k
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)
        if not np.all(np.isfinite(arr)):
            raise ModelFormatError("non-finite value in model file")
        return arr

    def cgl(self, side: int, one_dim: bool) -> CglMatrix:
        (code,) = self.unpack("<B")
        kind = KIND_NAMES.get(code)
        if kind is None:
            raise ModelFormatError(f"bad topology code {code}")
        try:
            topo = Topology(kind, side, ndim=1 if one_dim else 2)
        except ValueError as exc:
            raise ModelFormatError(str(exc)) from None
        n = topo.n
        w = self.floats(n * (n - 1) // 2)
        try:
            return CglMatrix.from_packed(w, n, mask=topology_mask(topo), kind=kind)
        except ValueError as exc:
            raise ModelFormatError(f"invalid graph: {exc}") from None
