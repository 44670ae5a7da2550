import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.fft import dctn

from pgft.codec import (Bitstream, BitstreamError, ModelMismatchError, UnsupportedImageError,
                        bits_per_pixel, code_class_map, codec_tables, decode, decode_class_map,
                        dequantize, encode, encode_detailed, parse, project_quant_table,
                        quantize)
from pgft.graphs import dct_grid_laplacian
from pgft.metrics import psnr
from pgft.model import TrainedModel
from pgft.tables import scaled_table
from pgft.transforms import IagftBasis, build_iagft
from pgft.weightvq import ClassMap, blockify

import imagesets

MODES = ("nonsep", "sep-rc", "sep-r1")


@pytest.fixture(scope="module")
def dct_model():
    return TrainedModel.dct_baseline()


def _dct_alignment(basis):
    """(raster DCT position, sign) of every basis vector."""
    d = dctn(np.eye(64).reshape(64, 8, 8), axes=(1, 2), norm="ortho").reshape(64, 64)
    # row k of d is the response of all 64 frequencies to pixel k, i.e. column k of the DCT matrix
    proj = basis.forward_matrix @ d
    pos = np.abs(proj).argmax(axis=1)
    sign = np.sign(proj[np.arange(64), pos])
    return pos, sign


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5 + 1e-9)


def test_projection_of_dct_is_identity():
    b = build_iagft(dct_grid_laplacian(8))
    t = scaled_table(50)
    pos, _ = _dct_alignment(b)
    np.testing.assert_array_equal(project_quant_table(t, b), t.ravel()[pos])


def test_projection_permuted_basis():
    b = build_iagft(dct_grid_laplacian(8))
    perm = np.random.default_rng(3).permutation(64)
    permuted = IagftBasis(b.u[:, perm], b.q, b.eigenvalues[perm])
    t = scaled_table(30)
    pos, _ = _dct_alignment(b)
    np.testing.assert_array_equal(project_quant_table(t, permuted), t.ravel()[pos][perm])


def test_projection_flat_table(models):
    for b in models["nonsep"].bases + models["sep-rc"].bases:
        np.testing.assert_allclose(project_quant_table(np.full((8, 8), 7.0), b), 7.0, rtol=1e-12)


def test_quantize_examples(rng):
    assert quantize([0.0], [5.0])[0] == 0
    assert quantize([5.0, -5.0, 2.5, -2.5], [5.0] * 4).tolist() == [1, -1, 1, -1]
    steps = rng.uniform(1, 50, 1000)
    c = rng.normal(0, 200, 1000)
    err = np.abs(dequantize(quantize(c, steps), steps) - c)
    assert np.all(err <= steps / 2 + 1e-9)


def test_quantize_clamps():
    assert quantize([1e9], [1.0])[0] == 1023


def test_dct_baseline_matches_transform_oracle(dct_model):
    b = dct_model.bases[0]
    pos, sign = _dct_alignment(b)
    t = scaled_table(50).ravel()
    for name in ("camera", "astronaut", "coins"):
        img = imagesets.load(name)
        enc = encode_detailed(img, dct_model, 50)
        blocks = blockify(img, 8).astype(float) - 128.0
        ref = dctn(blocks.reshape(-1, 8, 8), axes=(1, 2), norm="ortho").reshape(-1, 64)
        expected = _round_half_away(sign * ref[:, pos] / t[pos]).astype(np.int32)
        np.testing.assert_array_equal(enc.coefficients, expected)


def test_constant_image(dct_model, models):
    img = np.full((32, 48), 173, dtype=np.uint8)
    for model in (dct_model, models["nonsep"], models["sep-r1"]):
        enc = encode_detailed(img, model, 50)
        assert np.all(enc.coefficients[:, 1:] == 0)
        assert np.all(enc.coefficients[:, 0] == enc.coefficients[0, 0])
        out = decode(enc.bitstream, model)
        assert np.ptp(out) == 0
        assert abs(int(out[0, 0]) - 173) <= codec_tables(model, 50).steps[:, 0].max() / 8


@pytest.mark.parametrize("mode", MODES)
def test_deterministic(models, mode):
    img = imagesets.load("coins")
    assert encode(img, models[mode], 40).to_bytes() == encode(img, models[mode], 40).to_bytes()


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("quality", [10, 50, 95])
def test_coefficient_round_trip(models, mode, quality):
    img = imagesets.load("astronaut")[:256, :256]
    enc = encode_detailed(img, models[mode], quality)
    data = enc.bitstream.to_bytes()
    cm, coefs = parse(data, models[mode])
    assert cm == enc.class_map
    assert np.array_equal(coefs, enc.coefficients)
    assert len(data) == len(enc.bitstream)


@pytest.mark.parametrize("mode", MODES)
def test_high_quality_psnr(models, mode):
    for name in ("camera", "coffee"):
        img = imagesets.load(name)
        out = decode(encode(img, models[mode], 100), models[mode])
        assert psnr(img, out) > 50


def test_rate_monotone_in_quality(models):
    model = models["nonsep"]
    for name in ("camera", "coins", "astronaut", "coffee", "page"):
        img = imagesets.load(name)
        sizes = [len(encode(img, model, q)) for q in (100, 80, 60, 40, 20, 10)]
        assert all(a > b for a, b in zip(sizes, sizes[1:])), (name, sizes)


def test_training_step_classification(models):
    img = imagesets.load("coffee")
    model = models["nonsep"]
    a = encode_detailed(img, model, 20, step_from="training")
    b = encode_detailed(img, model, 50)
    c = encode_detailed(img, model, 50, step_from="training")
    assert a.class_map == c.class_map
    assert np.array_equal(decode(a.bitstream, model).shape, img.shape)
    assert b.class_map == c.class_map  # the models train at quality 50
    with pytest.raises(ValueError):
        encode(img, model, 50, step_from="pixels")


def test_unsupported_images(dct_model):
    with pytest.raises(UnsupportedImageError):
        encode(np.zeros((30, 32), dtype=np.uint8), dct_model, 50)
    with pytest.raises(UnsupportedImageError):
        encode(np.zeros((32, 32, 3), dtype=np.uint8), dct_model, 50)
    with pytest.raises(ValueError):
        encode(np.zeros((32, 32), dtype=np.uint8), dct_model, 0)


def test_model_mismatch(dct_model, models):
    bs = encode(imagesets.load("coins")[:64, :64], models["nonsep"], 50)
    with pytest.raises(ModelMismatchError):
        decode(bs, dct_model)
    with pytest.raises(ModelMismatchError):
        decode(bs, models["nonsep"].with_unit_weights())


def test_class_map_single_run():
    data = code_class_map(ClassMap(np.zeros((4, 5), dtype=int)), 2)
    # order byte, then one class bit and the Exp-Golomb code of 19
    assert len(data) <= 3
    assert decode_class_map(data, 4, 5, 2) == ClassMap(np.zeros((4, 5), dtype=int))


def test_class_map_alternating():
    labels = (np.arange(20) % 2).reshape(4, 5)
    data = code_class_map(ClassMap(labels), 2)
    # every run has length one: class bit + a single '1' bit at order 0
    assert data[0] == 0 and len(data) == 1 + 40 // 8
    assert decode_class_map(data, 4, 5, 2) == ClassMap(labels)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 6), st.integers(0, 2**31))
def test_class_map_round_trip(h, w, n_c, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_c, (h, w))
    # runs of varied length
    labels = np.sort(labels, axis=1) if seed % 2 else labels
    cm = ClassMap(labels)
    assert decode_class_map(code_class_map(cm, n_c), h, w, n_c) == cm


def test_long_class_runs_split():
    labels = np.zeros((300, 300), dtype=int)
    labels[-1, -1] = 1
    cm = ClassMap(labels)
    assert decode_class_map(code_class_map(cm, 2), 300, 300, 2) == cm


def test_class_map_errors():
    cm = code_class_map(ClassMap(np.zeros((2, 2), dtype=int)), 2)
    with pytest.raises(BitstreamError):
        decode_class_map(cm, 3, 3, 2)
    with pytest.raises(BitstreamError):
        decode_class_map(b"", 2, 2, 2)
    with pytest.raises(BitstreamError):
        decode_class_map(bytes([20]) + cm[1:], 2, 2, 2)
    with pytest.raises(BitstreamError):
        decode_class_map(cm + b"\x00", 2, 2, 2)


def test_header_fields(models):
    img = imagesets.load("coins")[:64, :96]
    bs = encode(img, models["sep-rc"], 33)
    back = Bitstream.from_bytes(bs.to_bytes())
    assert (back.width, back.height, back.quality, back.mode, back.n_c, back.block_side) == \
        (96, 64, 33, "sep-rc", 2, 8)
    assert back.model_hash == models["sep-rc"].hash
    assert bits_per_pixel(bs) == pytest.approx(8 * len(bs.to_bytes()) / (64 * 96))


def _fuzz(data: bytes, model, rng, cases: int) -> dict:
    outcomes = {"ok": 0, "error": 0}
    for k in range(cases):
        bad = bytearray(data)
        kind = k % 4
        if kind == 0:
            bad = bad[:rng.integers(0, len(bad))]
        elif kind == 1:
            for _ in range(rng.integers(1, 4)):
                bad[rng.integers(len(bad))] = rng.integers(256)
        elif kind == 2:
            pos = rng.integers(len(bad))
            bad[pos] ^= 1 << rng.integers(8)
        else:
            start = rng.integers(len(bad))
            bad[start:start + rng.integers(1, 8)] = bytes(rng.integers(0, 256, 4).tolist())
        try:
            out = decode(bytes(bad), model)
            assert out.dtype == np.uint8
            outcomes["ok"] += 1
        except (BitstreamError, ModelMismatchError) as exc:
            assert "byte" in str(exc) or isinstance(exc, ModelMismatchError)
            outcomes["error"] += 1
    return outcomes


@pytest.mark.parametrize("mode", MODES)
def test_decoder_fuzz(models, mode):
    img = imagesets.load("camera")[:64, :64]
    data = encode(img, models[mode], 50).to_bytes()
    outcomes = _fuzz(data, models[mode], np.random.default_rng(11), 400)
    assert outcomes["error"] > 0


def test_error_offsets(models):
    model = models["nonsep"]
    data = encode(imagesets.load("camera")[:64, :64], model, 50).to_bytes()
    with pytest.raises(BitstreamError, match="byte 0"):
        decode(b"JUNK" + data[4:], model)
    with pytest.raises(BitstreamError):
        decode(data[:10], model)
    with pytest.raises(BitstreamError):
        decode(data + b"\x00", model)
