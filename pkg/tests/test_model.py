import numpy as np
import pytest

from pgft.model import ModelFormatError, TrainConfig, TrainedModel, fnv1a_64


@pytest.mark.parametrize("mode", ["nonsep", "sep-rc", "sep-r1"])
def test_bytes_round_trip(models, mode, tmp_path):
    model = models[mode]
    path = tmp_path / "m.pgft"
    model.save(path)
    back = TrainedModel.load(path)
    assert back.to_bytes() == model.to_bytes()
    assert back.hash == model.hash
    assert back.config == model.config


def test_fnv_reference_values():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C


def test_truncated_and_corrupt(models):
    data = models["nonsep"].to_bytes()
    for cut in (0, 3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(ModelFormatError):
            TrainedModel.from_bytes(data[:cut])
    with pytest.raises(ModelFormatError):
        TrainedModel.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ModelFormatError):
        TrainedModel.from_bytes(data + b"\0")
    bad = bytearray(data)
    bad[4] = 9  # version
    with pytest.raises(ModelFormatError):
        TrainedModel.from_bytes(bytes(bad))


def test_random_corruption_never_crashes(models):
    data = models["sep-r1"].to_bytes()
    rng = np.random.default_rng(5)
    for _ in range(300):
        bad = bytearray(data)
        for pos in rng.integers(0, len(bad), rng.integers(1, 4)):
            bad[pos] = rng.integers(0, 256)
        try:
            TrainedModel.from_bytes(bytes(bad))
        except ModelFormatError:
            pass


def test_dct_baseline():
    m = TrainedModel.dct_baseline()
    assert m.n_c == 1 and m.config.topology == "grid4"
    assert np.all(m.class_weights == 1)


def test_variants(models):
    m = models["nonsep"]
    gft = m.with_unit_weights()
    assert np.all(gft.class_weights == 1) and gft.hash != m.hash
    dctg = m.with_dct_graphs()
    assert np.array_equal(dctg.class_weights, m.class_weights)
    assert dctg.graphs[0].kind == "grid4"
    sep = models["sep-rc"].with_dct_graphs()
    assert sep.graphs[0].m_row.kind == "path"


@pytest.mark.parametrize("kwargs", [
    {"mode": "sep"}, {"topology": "ring"}, {"weight_rule": "vif"}, {"transform": "klt"},
    {"block_side": 1}, {"n_c": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)
