"""Block codec: perceptual classification, per-class transform, quantization,
entropy coding and the container format.

Bitstream layout (little-endian)::

    "PGCB" | version u16 | width u32 | height u32 | quality u8 | mode u8 |
    n_c u8 | block_side u8 | model hash u64
    class map:    length u32 | Exp-Golomb order u8 | bit-packed (class, run-1) runs
    coefficients: length u32 | Huffman data, MSB-first, padded with 1-bits
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit, prange

from .entropy import MAX_COEF, EntropyError, decode_coefficients, encode_coefficients
from .model import MODES, TrainedModel
from .perceptual import weight_map
from .tables import delta_for_quality, scaled_table
from .transforms import IagftBasis, RowColBasis, SeparableBasis
from .weightvq import ClassMap, assign_classes, blockify, unblockify

MAGIC = b"PGCB"
VERSION = 1
HEADER = struct.Struct("<4sHIIBBBBQ")
MAX_DIM = 1 << 16
MAX_RUN = 1 << 16
ROUND_SLACK = 1e-9  # keeps exact halves from flipping on round-off
SNAP_RTOL = 1e-9


class CodecError(ValueError):
    pass


class UnsupportedImageError(CodecError):
    pass


class ModelMismatchError(CodecError):
    pass


class BitstreamError(CodecError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"corrupt bitstream at byte {offset}: {message}")
        self.offset = offset


# ---------------------------------------------------------------- quantization


@lru_cache(maxsize=None)
def dct_matrix(side: int) -> np.ndarray:
    """Orthonormal DCT-II, rows are frequencies."""
    k = np.arange(side)[:, None]
    m = np.arange(side)[None, :]
    d = np.sqrt(2.0 / side) * np.cos(np.pi * (2 * m + 1) * k / (2 * side))
    d[0] /= np.sqrt(2.0)
    return d


def project_quant_table(table, basis) -> np.ndarray:
    """Quantization steps for a basis, in its scan order.

    Each step is a convex combination of the DCT table entries, weighted by
    the squared overlap between the forward basis row and each 2-D DCT
    vector. Steps within 1e-9 of an integer are snapped to it so a DCT basis
    reproduces the table exactly.
    """
    t = np.asarray(table, dtype=float)
    side = t.shape[0]
    fm = basis.forward_matrix if isinstance(basis, IagftBasis) else basis.forward_matrix()
    d = dct_matrix(side)
    dct2 = np.kron(d, d)  # row (u*side + v) is the 2-D DCT vector of frequency (u, v)
    overlap = (fm @ dct2.T) ** 2
    w = overlap / overlap.sum(axis=1, keepdims=True)
    steps = w @ t.ravel()
    snapped = np.rint(steps)
    close = np.abs(steps - snapped) <= SNAP_RTOL * steps
    steps = np.where(close, snapped, steps)
    return np.maximum(steps, 1.0)


def dc_gain(basis) -> float:
    """Ratio of a basis' DC response to the unweighted DCT's.

    Scaling the DC step by this factor quantizes every class's DC in the
    same units (a weighted block mean), so DC prediction across class
    boundaries does not jump.
    """
    fm = basis.forward_matrix if isinstance(basis, IagftBasis) else basis.forward_matrix()
    return float(fm[0].sum() / np.sqrt(fm.shape[1]))


def quantize(coeffs, steps) -> np.ndarray:
    """Round half away from zero; magnitudes are clamped to the entropy range."""
    x = np.asarray(coeffs, dtype=float) / np.asarray(steps, dtype=float)
    q = np.sign(x) * np.floor(np.abs(x) + 0.5 + ROUND_SLACK)
    return np.clip(q, -MAX_COEF, MAX_COEF).astype(np.int32)


def dequantize(indices, steps) -> np.ndarray:
    return np.asarray(indices, dtype=float) * np.asarray(steps, dtype=float)


# ---------------------------------------------------------------- block kernels


@njit(cache=True, inline="always")
def _q(v, step):
    x = v / step
    a = np.floor(abs(x) + 0.5 + ROUND_SLACK)
    if a > MAX_COEF:
        a = MAX_COEF
    return np.int32(-a if x < 0 else a)


@njit(cache=True, parallel=True)
def _fwd_dense(blocks, labels, fmat, steps, out):
    nb, n = blocks.shape
    for b in prange(nb):
        c = labels[b]
        for k in range(n):
            acc = 0.0
            for j in range(n):
                acc += fmat[c, k, j] * blocks[b, j]
            out[b, k] = _q(acc, steps[c, k])


@njit(cache=True, parallel=True)
def _inv_dense(coefs, labels, umat, steps, out):
    nb, n = coefs.shape
    for b in prange(nb):
        c = labels[b]
        for j in range(n):
            out[b, j] = 0.0
        for k in range(n):
            v = coefs[b, k] * steps[c, k]
            if v != 0.0:
                for j in range(n):
                    out[b, j] += umat[c, j, k] * v


@njit(cache=True, parallel=True)
def _fwd_rank1(blocks, labels, left, right, order, steps, out):
    nb, n = blocks.shape
    s = left.shape[1]
    for b in prange(nb):
        c = labels[b]
        tmp = np.empty((s, s))
        for r in range(s):
            for k in range(s):
                acc = 0.0
                for m in range(s):
                    acc += blocks[b, r * s + m] * right[c, m, k]
                tmp[r, k] = acc
        coef = np.empty(n)
        for i in range(s):
            for k in range(s):
                acc = 0.0
                for r in range(s):
                    acc += left[c, i, r] * tmp[r, k]
                coef[i * s + k] = acc
        for p in range(n):
            out[b, p] = _q(coef[order[c, p]], steps[c, p])


@njit(cache=True, parallel=True)
def _inv_rank1(coefs, labels, u_col, u_row, order, steps, out):
    nb, n = coefs.shape
    s = u_col.shape[1]
    for b in prange(nb):
        c = labels[b]
        nat = np.zeros(n)
        for p in range(n):
            nat[order[c, p]] = coefs[b, p] * steps[c, p]
        tmp = np.empty((s, s))
        for r in range(s):
            for k in range(s):
                acc = 0.0
                for i in range(s):
                    acc += u_col[c, r, i] * nat[i * s + k]
                tmp[r, k] = acc
        for r in range(s):
            for m in range(s):
                acc = 0.0
                for k in range(s):
                    acc += tmp[r, k] * u_row[c, m, k]
                out[b, r * s + m] = acc


@njit(cache=True, parallel=True)
def _fwd_rowcol(blocks, labels, row_fwd, col_fwd, order, steps, out):
    nb, n = blocks.shape
    s = col_fwd.shape[1]
    for b in prange(nb):
        c = labels[b]
        tmp = np.empty((s, s))
        for r in range(s):
            for k in range(s):
                acc = 0.0
                for m in range(s):
                    acc += row_fwd[c, r, k, m] * blocks[b, r * s + m]
                tmp[r, k] = acc
        coef = np.empty(n)
        for i in range(s):
            for k in range(s):
                acc = 0.0
                for r in range(s):
                    acc += col_fwd[c, i, r] * tmp[r, k]
                coef[i * s + k] = acc
        for p in range(n):
            out[b, p] = _q(coef[order[c, p]], steps[c, p])


@njit(cache=True, parallel=True)
def _inv_rowcol(coefs, labels, u_col, u_rows, order, steps, out):
    nb, n = coefs.shape
    s = u_col.shape[1]
    for b in prange(nb):
        c = labels[b]
        nat = np.zeros(n)
        for p in range(n):
            nat[order[c, p]] = coefs[b, p] * steps[c, p]
        tmp = np.empty((s, s))
        for r in range(s):
            for k in range(s):
                acc = 0.0
                for i in range(s):
                    acc += u_col[c, r, i] * nat[i * s + k]
                tmp[r, k] = acc
        for r in range(s):
            for m in range(s):
                acc = 0.0
                for k in range(s):
                    acc += u_rows[c, r, m, k] * tmp[r, k]
                out[b, r * s + m] = acc


class _Tables:
    """Per-(model, quality) transform matrices and quantization steps."""

    def __init__(self, model: TrainedModel, quality: int):
        side = model.block_side
        table = scaled_table(quality, side)
        bases = model.bases
        self.mode = model.config.mode
        self.steps = np.array([project_quant_table(table, b) for b in bases])
        self.steps[:, 0] *= [dc_gain(b) for b in bases]
        if self.mode == "nonsep":
            self.fmat = np.array([b.forward_matrix for b in bases])
            self.umat = np.array([b.u for b in bases])
            return
        self.order = np.array([b.order for b in bases], dtype=np.int64)
        self.u_col = np.array([b.u_col for b in bases])
        if self.mode == "sep-r1":
            self.left = np.array([b.left for b in bases])
            self.right = np.array([b.right for b in bases])
            self.u_row = np.array([b.u_row for b in bases])
        else:
            self.row_fwd = np.array([b.row_forward for b in bases])
            self.col_fwd = np.array([b.col_forward for b in bases])
            self.u_rows = np.array([b.u_rows for b in bases])

    def forward(self, blocks, labels) -> np.ndarray:
        out = np.empty(blocks.shape, dtype=np.int32)
        if self.mode == "nonsep":
            _fwd_dense(blocks, labels, self.fmat, self.steps, out)
        elif self.mode == "sep-r1":
            _fwd_rank1(blocks, labels, self.left, self.right, self.order, self.steps, out)
        else:
            _fwd_rowcol(blocks, labels, self.row_fwd, self.col_fwd, self.order, self.steps, out)
        return out

    def inverse(self, coefs, labels) -> np.ndarray:
        out = np.empty(coefs.shape, dtype=float)
        if self.mode == "nonsep":
            _inv_dense(coefs, labels, self.umat, self.steps, out)
        elif self.mode == "sep-r1":
            _inv_rank1(coefs, labels, self.u_col, self.u_row, self.order, self.steps, out)
        else:
            _inv_rowcol(coefs, labels, self.u_col, self.u_rows, self.order, self.steps, out)
        return out


def codec_tables(model: TrainedModel, quality: int) -> _Tables:
    cache = model.__dict__.setdefault("_codec_tables", {})
    if quality not in cache:
        cache[quality] = _Tables(model, quality)
    return cache[quality]


# ---------------------------------------------------------------- class map


class _BitWriter:
    def __init__(self):
        self.acc = 0
        self.nbits = 0

    def put(self, value: int, width: int) -> None:
        self.acc = (self.acc << width) | value
        self.nbits += width

    def exp_golomb(self, value: int, k: int) -> None:
        v = value + (1 << k)
        width = v.bit_length()
        self.put(0, width - 1 - k)
        self.put(v, width)

    def getvalue(self) -> bytes:
        pad = -self.nbits % 8
        acc = (self.acc << pad) | ((1 << pad) - 1)
        return acc.to_bytes((self.nbits + pad) // 8, "big")


class _BitReader:
    def __init__(self, data: bytes, offset: int):
        self.value = int.from_bytes(data, "big")
        self.total = 8 * len(data)
        self.pos = 0
        self.offset = offset

    def fail(self, message: str):
        raise BitstreamError(message, self.offset + self.pos // 8)

    def get(self, width: int) -> int:
        if self.pos + width > self.total:
            self.fail("class map ends mid-symbol")
        self.pos += width
        return (self.value >> (self.total - self.pos)) & ((1 << width) - 1)

    def exp_golomb(self, k: int) -> int:
        zeros = 0
        while self.get(1) == 0:
            zeros += 1
            if zeros > 24:
                self.fail("run length code too long")
        v = (1 << (zeros + k)) | self.get(zeros + k)
        return v - (1 << k)


def _runs(labels: np.ndarray) -> list[tuple[int, int]]:
    edges = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [labels.size]))
    out = []
    for s, e in zip(starts, ends):
        run = int(e - s)
        while run > 0:
            chunk = min(run, MAX_RUN)
            out.append((int(labels[s]), chunk))
            run -= chunk
    return out


def _eg_length(values: np.ndarray, k: int) -> int:
    return int(np.sum(2 * np.floor(np.log2(values / 2 ** k + 1)).astype(int) + 1 + k))


def code_class_map(cm: ClassMap, n_c: int | None = None) -> bytes:
    """Raster run-length code of a class map.

    One byte gives the Exp-Golomb order ``k`` (chosen per map to minimize
    size); then each run is the class in ``bit_length(n_c - 1)`` bits and
    ``run - 1`` as an order-``k`` Exp-Golomb code. Runs longer than 2**16
    are split.
    """
    labels = np.asarray(cm.labels).ravel()
    if labels.size == 0:
        return b""
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("class labels must fit in one byte")
    n_c = int(labels.max()) + 1 if n_c is None else n_c
    class_bits = (n_c - 1).bit_length()
    runs = _runs(labels)
    values = np.array([r - 1 for _, r in runs], dtype=float)
    k = min(range(16), key=lambda kk: _eg_length(values, kk))
    w = _BitWriter()
    for cls, run in runs:
        w.put(cls, class_bits)
        w.exp_golomb(run - 1, k)
    return bytes([k]) + w.getvalue()


def decode_class_map(data: bytes, blocks_y: int, blocks_x: int, n_c: int,
                     offset: int = 0) -> ClassMap:
    total = blocks_y * blocks_x
    if not data:
        raise BitstreamError("empty class map", offset)
    k = data[0]
    if k > 15:
        raise BitstreamError(f"bad run code order {k}", offset)
    class_bits = (n_c - 1).bit_length()
    reader = _BitReader(data[1:], offset + 1)
    labels = np.empty(total, dtype=np.int64)
    pos = 0
    while pos < total:
        cls = reader.get(class_bits)
        if cls >= n_c:
            reader.fail(f"class {cls} out of range")
        run = reader.exp_golomb(k) + 1
        if run > MAX_RUN or pos + run > total:
            reader.fail("class map covers more blocks than the image")
        labels[pos:pos + run] = cls
        pos += run
    if (reader.pos + 7) // 8 != len(data) - 1:
        reader.fail("unused bytes after the class map")
    return ClassMap(labels.reshape(blocks_y, blocks_x))


# ---------------------------------------------------------------- container


@dataclass(frozen=True, eq=False)
class Bitstream:
    width: int
    height: int
    quality: int
    mode: str
    n_c: int
    block_side: int
    model_hash: int
    class_map: bytes
    coefficients: bytes

    @property
    def blocks_y(self) -> int:
        return self.height // self.block_side

    @property
    def blocks_x(self) -> int:
        return self.width // self.block_side

    def to_bytes(self) -> bytes:
        head = HEADER.pack(MAGIC, VERSION, self.width, self.height, self.quality,
                           MODES.index(self.mode), self.n_c, self.block_side, self.model_hash)
        return b"".join((head, struct.pack("<I", len(self.class_map)), self.class_map,
                         struct.pack("<I", len(self.coefficients)), self.coefficients))

    def __len__(self) -> int:
        return HEADER.size + 8 + len(self.class_map) + len(self.coefficients)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        data = bytes(data)
        if len(data) < HEADER.size:
            raise BitstreamError("truncated header", len(data))
        magic, version, width, height, quality, mode, n_c, side, mhash = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError("bad magic", 0)
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}", 4)
        if mode >= len(MODES):
            raise BitstreamError(f"bad mode code {mode}", 19)
        if not 1 <= quality <= 100:
            raise BitstreamError(f"quality {quality} out of range", 18)
        if n_c < 1 or not 2 <= side <= 16:
            raise BitstreamError("bad class count or block side", 20)
        if not (0 < width <= MAX_DIM and 0 < height <= MAX_DIM) or width % side or height % side:
            raise BitstreamError(f"bad dimensions {width}x{height}", 6)
        pos = HEADER.size
        segments = []
        for name in ("class map", "coefficient"):
            if pos + 4 > len(data):
                raise BitstreamError(f"truncated {name} length", pos)
            (length,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + length > len(data):
                raise BitstreamError(f"{name} segment runs past the end", pos)
            segments.append((pos, data[pos:pos + length]))
            pos += length
        if pos != len(data):
            raise BitstreamError("trailing bytes after the last segment", pos)
        bs = cls(width, height, quality, MODES[mode], n_c, side, mhash,
                 segments[0][1], segments[1][1])
        object.__setattr__(bs, "_offsets", (segments[0][0], segments[1][0]))
        return bs

    def segment_offsets(self) -> tuple[int, int]:
        off = getattr(self, "_offsets", None)
        if off is None:
            first = HEADER.size + 4
            off = (first, first + len(self.class_map) + 4)
        return off


# ---------------------------------------------------------------- encode / decode


@dataclass(frozen=True, eq=False)
class Encoded:
    """Intermediate products of one encode, for inspection and tests."""

    bitstream: Bitstream
    class_map: ClassMap
    coefficients: np.ndarray  # (blocks, n) quantized, scan order


def _check_model(model: TrainedModel, image_shape) -> None:
    side = model.block_side
    h, w = image_shape
    if h % side or w % side or h == 0 or w == 0:
        raise UnsupportedImageError(
            f"{h}x{w} image is not a positive multiple of the {side}x{side} block size")
    if h > MAX_DIM or w > MAX_DIM:
        raise UnsupportedImageError(f"images are limited to {MAX_DIM} pixels per side")


def classify(img, model: TrainedModel, quality: int, saliency=None,
             step_from: str = "quality") -> ClassMap:
    """Nearest-codeword class per block.

    The weight rule needs a quantization step: by default the one of the
    coding ``quality``; ``step_from="training"`` uses the step the codebook
    was trained at instead.
    """
    side = model.block_side
    by, bx = img.shape[0] // side, img.shape[1] // side
    if model.n_c == 1:
        return ClassMap(np.zeros((by, bx), dtype=np.int64))
    cfg = model.config
    if step_from not in ("quality", "training"):
        raise ValueError("step_from must be 'quality' or 'training'")
    q = quality if step_from == "quality" else cfg.train_quality
    wm = weight_map(img, cfg.weight_rule, delta_for_quality(q, side), saliency,
                    cfg.smooth_sigma)
    return assign_classes(wm, model.codebook, side)


def encode_detailed(img, model: TrainedModel, quality: int, saliency=None,
                    class_map: ClassMap | None = None, step_from: str = "quality") -> Encoded:
    img = np.asarray(img)
    if img.ndim != 2:
        raise UnsupportedImageError("expected a 2-D grayscale image")
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality must be in 1..100, got {quality}")
    quality = int(quality)
    _check_model(model, img.shape)
    side = model.block_side
    cm = class_map if class_map is not None else classify(img, model, quality, saliency, step_from)
    labels = np.ascontiguousarray(cm.labels.ravel(), dtype=np.int64)
    blocks = np.ascontiguousarray(blockify(img, side), dtype=float) - 128.0
    coefs = codec_tables(model, quality).forward(blocks, labels)
    bs = Bitstream(img.shape[1], img.shape[0], quality, model.config.mode, model.n_c, side,
                   model.hash, code_class_map(cm, model.n_c), encode_coefficients(coefs))
    return Encoded(bs, cm, coefs)


def encode(img, model: TrainedModel, quality: int, saliency=None,
           step_from: str = "quality") -> Bitstream:
    return encode_detailed(img, model, quality, saliency, step_from=step_from).bitstream


def parse(bs, model: TrainedModel) -> tuple[ClassMap, np.ndarray]:
    """Recover the class map and quantized coefficients from a bitstream."""
    if not isinstance(bs, Bitstream):
        bs = Bitstream.from_bytes(bs)
    if bs.model_hash != model.hash:
        raise ModelMismatchError(
            f"bitstream was made with model {bs.model_hash:016x}, not {model.hash:016x}")
    if (bs.mode, bs.n_c, bs.block_side) != (model.config.mode, model.n_c, model.block_side):
        raise ModelMismatchError("bitstream header does not match the model configuration")
    cm_off, coef_off = bs.segment_offsets()
    cm = decode_class_map(bs.class_map, bs.blocks_y, bs.blocks_x, bs.n_c, cm_off)
    nblocks = bs.blocks_y * bs.blocks_x
    # every block costs at least two bits, so this bounds the allocation below
    if 2 * nblocks > 8 * len(bs.coefficients):
        raise BitstreamError("coefficient segment too short for the image size",
                             coef_off + len(bs.coefficients))
    try:
        coefs = decode_coefficients(bs.coefficients, nblocks, bs.block_side ** 2)
    except EntropyError as exc:
        raise BitstreamError(str(exc).rsplit(" (", 1)[0], coef_off + exc.offset) from None
    return cm, coefs


def decode(bs, model: TrainedModel) -> np.ndarray:
    if not isinstance(bs, Bitstream):
        bs = Bitstream.from_bytes(bs)
    cm, coefs = parse(bs, model)
    labels = np.ascontiguousarray(cm.labels.ravel(), dtype=np.int64)
    pixels = codec_tables(model, bs.quality).inverse(coefs, labels) + 128.0
    img = unblockify(pixels, bs.blocks_y, bs.blocks_x, bs.block_side)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def bits_per_pixel(bs: Bitstream) -> float:
    return 8.0 * len(bs) / (bs.width * bs.height)
