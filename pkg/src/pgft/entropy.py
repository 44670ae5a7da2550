"""Baseline-JPEG style entropy layer over generalized scan order.

DC coefficients are coded as differences along the raster block order with
(category, bits) symbols; AC coefficients use (run, size) symbols with ZRL
and EOB. Both use the Annex K luminance Huffman tables. Bits are packed
MSB-first and the last byte is padded with ones. No byte stuffing is done:
segment lengths are carried by the container.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .tables import AC_LUMA_BITS, AC_LUMA_VALS, DC_LUMA_BITS, DC_LUMA_VALS, huffman_codes

MAX_COEF = 1023  # largest magnitude representable with 10-bit AC categories

OK = 0
ERR_OVERRUN = 1
ERR_BAD_CODE = 2
ERR_INDEX = 3
ERR_TRAILING = 4

ERROR_TEXT = {
    ERR_OVERRUN: "coefficient data ends mid-symbol",
    ERR_BAD_CODE: "invalid Huffman code",
    ERR_INDEX: "run length runs past the end of a block",
    ERR_TRAILING: "unused bytes after the last block",
}


def _encode_table(bits, vals, size):
    code = np.zeros(size, dtype=np.int64)
    length = np.zeros(size, dtype=np.int64)
    for sym, (c, l) in huffman_codes(bits, vals).items():
        code[sym] = c
        length[sym] = l
    return code, length


def _lookup_table(bits, vals):
    """16-bit prefix lookup: symbol and code length (0 marks an invalid prefix)."""
    sym = np.zeros(1 << 16, dtype=np.int64)
    length = np.zeros(1 << 16, dtype=np.int64)
    for s, (c, l) in huffman_codes(bits, vals).items():
        lo = c << (16 - l)
        hi = (c + 1) << (16 - l)
        sym[lo:hi] = s
        length[lo:hi] = l
    return sym, length


DC_CODE, DC_LEN = _encode_table(DC_LUMA_BITS, DC_LUMA_VALS, 12)
AC_CODE, AC_LEN = _encode_table(AC_LUMA_BITS, AC_LUMA_VALS, 256)
DC_LUT_SYM, DC_LUT_LEN = _lookup_table(DC_LUMA_BITS, DC_LUMA_VALS)
AC_LUT_SYM, AC_LUT_LEN = _lookup_table(AC_LUMA_BITS, AC_LUMA_VALS)


@njit(cache=True)
def _category(v):
    a = -v if v < 0 else v
    s = 0
    while a:
        a >>= 1
        s += 1
    return s


@njit(cache=True)
def _encode(coefs, dc_code, dc_len, ac_code, ac_len, out):
    nblocks, n = coefs.shape
    pos = 0
    acc = np.int64(0)
    nacc = 0
    pred = 0
    for b in range(nblocks):
        for k in range(n):
            v = np.int64(coefs[b, k])
            if k == 0:
                diff = v - pred
                pred = v
                size = _category(diff)
                code = dc_code[size]
                clen = dc_len[size]
                value = diff
            else:
                if v == 0:
                    continue
                # run of zeros since the previous nonzero coefficient
                run = 0
                j = k - 1
                while j > 0 and coefs[b, j] == 0:
                    run += 1
                    j -= 1
                while run > 15:
                    acc = (acc << ac_len[0xF0]) | ac_code[0xF0]
                    nacc += ac_len[0xF0]
                    while nacc >= 8:
                        out[pos] = (acc >> (nacc - 8)) & 0xFF
                        pos += 1
                        nacc -= 8
                    acc &= (np.int64(1) << nacc) - 1
                    run -= 16
                size = _category(v)
                sym = (run << 4) | size
                code = ac_code[sym]
                clen = ac_len[sym]
                value = v
            acc = (acc << clen) | code
            nacc += clen
            if size:
                bits = value if value > 0 else value + (np.int64(1) << size) - 1
                acc = (acc << size) | bits
                nacc += size
            while nacc >= 8:
                out[pos] = (acc >> (nacc - 8)) & 0xFF
                pos += 1
                nacc -= 8
            acc &= (np.int64(1) << nacc) - 1
        if coefs[b, n - 1] == 0 and n > 1:
            acc = (acc << ac_len[0]) | ac_code[0]
            nacc += ac_len[0]
            while nacc >= 8:
                out[pos] = (acc >> (nacc - 8)) & 0xFF
                pos += 1
                nacc -= 8
            acc &= (np.int64(1) << nacc) - 1
    if nacc:
        pad = 8 - nacc
        out[pos] = ((acc << pad) | ((1 << pad) - 1)) & 0xFF
        pos += 1
    return pos


def encode_coefficients(coefs) -> bytes:
    """Entropy-code quantized coefficients, shape (blocks, n), scan order."""
    coefs = np.ascontiguousarray(coefs, dtype=np.int32)
    if coefs.size and np.abs(coefs).max() > MAX_COEF:
        raise ValueError(f"coefficients must lie in [-{MAX_COEF}, {MAX_COEF}]")
    nblocks, n = coefs.shape
    out = np.empty(nblocks * (4 * n + 8) + 8, dtype=np.uint8)
    size = _encode(coefs, DC_CODE, DC_LEN, AC_CODE, AC_LEN, out)
    return out[:size].tobytes()


@njit(cache=True)
def _peek16(data, bitpos):
    nbytes = data.shape[0]
    byte = bitpos >> 3
    word = 0
    for t in range(3):
        idx = byte + t
        v = 0xFF
        if idx < nbytes:
            v = data[idx]
        word = (word << 8) | v
    return (word >> (8 - (bitpos & 7))) & 0xFFFF


@njit(cache=True)
def _receive(data, bitpos, size):
    # `size` <= 11 bits, read MSB-first
    word = _peek16(data, bitpos)
    bits = word >> (16 - size)
    if bits < (1 << (size - 1)):
        return bits - (1 << size) + 1
    return bits


@njit(cache=True)
def _decode(data, nblocks, n, dc_sym, dc_len, ac_sym, ac_len, out):
    total = data.shape[0] * 8
    pos = 0
    pred = 0
    for b in range(nblocks):
        word = _peek16(data, pos)
        clen = dc_len[word]
        if clen == 0:
            return ERR_BAD_CODE, pos
        size = dc_sym[word]
        pos += clen
        diff = 0
        if size:
            diff = _receive(data, pos, size)
            pos += size
        if pos > total:
            return ERR_OVERRUN, pos
        pred += diff
        out[b, 0] = pred
        k = 1
        while k < n:
            word = _peek16(data, pos)
            clen = ac_len[word]
            if clen == 0:
                return ERR_BAD_CODE, pos
            sym = ac_sym[word]
            pos += clen
            run = sym >> 4
            size = sym & 15
            if size == 0:
                if run == 15:
                    k += 16
                    if k > n:
                        return ERR_INDEX, pos
                    if pos > total:
                        return ERR_OVERRUN, pos
                    continue
                if pos > total:
                    return ERR_OVERRUN, pos
                break  # EOB
            k += run
            if k >= n:
                return ERR_INDEX, pos
            out[b, k] = _receive(data, pos, size)
            pos += size
            if pos > total:
                return ERR_OVERRUN, pos
            k += 1
    if (pos + 7) // 8 != data.shape[0]:
        return ERR_TRAILING, pos
    return OK, pos


class EntropyError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


def decode_coefficients(payload: bytes, nblocks: int, n: int) -> np.ndarray:
    data = np.frombuffer(payload, dtype=np.uint8)
    out = np.zeros((nblocks, n), dtype=np.int32)
    status, bitpos = _decode(data, nblocks, n, DC_LUT_SYM, DC_LUT_LEN, AC_LUT_SYM, AC_LUT_LEN, out)
    if status != OK:
        raise EntropyError(ERROR_TEXT[status], int(bitpos) // 8)
    return out
