import numpy as np
import pytest

from pgft.graphs import SeparablePair, Topology, dct_grid_laplacian, from_weights, path_laplacian, topology_mask
from pgft.graphlearn import (InsufficientDataError, _logdet_pd, cgl_objective, class_covariance,
                             learn_cgl, learn_separable, separable_objective,
                             separable_objective_dense, train_model)
from pgft.model import TrainConfig

from conftest import random_cgl


def _grid4_truth(side, rng):
    mask = topology_mask(Topology("grid4", side))
    w = np.triu(rng.uniform(0.5, 2.0, mask.shape) * mask, 1)
    return from_weights(w + w.T, mask=mask).laplacian


def test_constant_blocks_zero_covariance():
    blocks = np.repeat(np.arange(5.0)[:, None], 4, axis=1)
    cov = class_covariance(blocks, np.zeros(5), 0)
    assert np.all(cov.s == 0) and cov.count == 5


def test_two_block_hand_case():
    cov = class_covariance([[1.0, 3.0], [2.0, 2.0]], [0, 0], 0)
    np.testing.assert_allclose(cov.s, [[1, -1], [-1, 1]], atol=1e-15)


def test_duplicated_blocks_recompute(rng):
    x = rng.normal(0, 1, (6, 4))
    once = class_covariance(x, np.zeros(6), 0).s
    twice = class_covariance(np.vstack([x, x]), np.zeros(12), 0).s
    # same scatter, counted twice, with the unbiased 1/(K-1) normalization
    np.testing.assert_allclose(twice, once * 2 * 5 / 11, rtol=1e-12)


def test_covariance_selects_class(rng):
    x = rng.normal(0, 1, (10, 4))
    labels = np.array([0, 1] * 5)
    cov = class_covariance(x, labels, 1)
    sel = x[1::2] - x[1::2].mean(axis=1, keepdims=True)
    np.testing.assert_allclose(cov.s, sel.T @ sel / 4, rtol=1e-12)
    with pytest.raises(InsufficientDataError):
        class_covariance(x, labels, 2)


def test_ill_conditioned_covariance_is_regularized():
    x = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    cov = class_covariance(x, [0, 0, 0], 0)
    assert np.linalg.eigvalsh(cov.s + np.ones((4, 4)) / 4).min() > 0


@pytest.mark.parametrize("s", [[[2.0, 0.5], [0.5, 1.0]], [[1.0, -0.3], [-0.3, 4.0]]])
def test_two_node_closed_form(s):
    s = np.array(s)
    lap = learn_cgl(s, Topology("full", 2, ndim=1), tol=1e-14)
    w = -lap.laplacian[0, 1]
    assert w == pytest.approx(1 / (s[0, 0] + s[1, 1] - 2 * s[0, 1]), rel=1e-9)


def test_grid4_recovery(rng):
    truth = _grid4_truth(4, rng)
    s = np.linalg.inv(truth + np.ones((16, 16)) / 16)
    hist = []
    lap = learn_cgl(s, Topology("grid4", 4), tol=1e-12, max_iter=5000, history=hist)
    err = np.linalg.norm(lap.laplacian - truth) / np.linalg.norm(truth)
    assert err < 1e-3
    assert np.all(np.diff(hist) <= 1e-12)


def test_topology_zeros_exact(rng):
    x = rng.normal(0, 1, (400, 16))
    cov = class_covariance(x, np.zeros(400), 0)
    lap = learn_cgl(cov, Topology("grid4", 4))
    mask = topology_mask(Topology("grid4", 4))
    off = lap.laplacian[~mask & ~np.eye(16, dtype=bool)]
    assert np.all(off == 0)
    assert np.all(np.abs(lap.laplacian.sum(axis=1)) < 1e-9)


def test_objective_not_above_initialization(rng):
    x = rng.normal(0, 1, (300, 9)) @ rng.normal(0, 1, (9, 9))
    cov = class_covariance(x, np.zeros(300), 0)
    hist = []
    learn_cgl(cov, Topology("full", 3), history=hist)
    assert hist[-1] <= hist[0]
    assert np.all(np.diff(hist) <= 1e-12)


def test_learn_cgl_errors():
    with pytest.raises(ValueError):
        learn_cgl(np.eye(4), Topology("full", 3))
    with pytest.raises(ValueError):
        learn_cgl(np.zeros((4, 4)), Topology("full", 2))


def test_kronecker_logdet_identity(rng):
    for side in (2, 3, 4):
        a = random_cgl(side, rng) + np.ones((side, side)) / side
        b = random_cgl(side, rng) + np.ones((side, side)) / side
        lhs = _logdet_pd(np.kron(a, b))
        rhs = side * _logdet_pd(a) + side * _logdet_pd(b)
        assert abs(lhs - rhs) <= 1e-9


def test_separable_objective_evaluators_agree(rng):
    for side in (2, 3, 4):
        pair = SeparablePair(from_weights(_sym(rng, side)), from_weights(_sym(rng, side)))
        x = rng.normal(0, 1, (50, side * side))
        s = np.cov(x.T)
        assert separable_objective(pair, s) == pytest.approx(
            separable_objective_dense(pair, s), abs=1e-10)


def _sym(rng, side):
    w = np.triu(rng.uniform(0.1, 1.5, (side, side)), 1)
    return w + w.T


def test_separable_exact_model(rng):
    side = 4
    wa = np.diag(rng.uniform(0.5, 2, side - 1), 1)
    wb = np.diag(rng.uniform(0.5, 2, side - 1), 1)
    truth = SeparablePair(from_weights(wb + wb.T, kind="path"), from_weights(wa + wa.T, kind="path"))
    j = np.ones((side, side)) / side
    s = np.linalg.inv(np.kron(truth.m_col.laplacian + j, truth.m_row.laplacian + j))
    hist = []
    got = learn_separable(s, side, tol=1e-12, max_sweeps=200, history=hist)
    assert separable_objective(got, s) - separable_objective(truth, s) < 1e-3
    assert np.all(np.diff(hist) <= 1e-12)


def test_half_sweeps_non_increasing(rng):
    x = rng.normal(0, 1, (500, 16)) @ rng.normal(0, 1, (16, 16))
    cov = class_covariance(x, np.zeros(500), 0)
    hist = []
    learn_separable(cov, 4, history=hist)
    assert len(hist) >= 3
    assert np.all(np.diff(hist) <= 1e-12)


def test_two_by_two_brute_force(rng):
    x = rng.normal(0, 1, (400, 4)) @ rng.normal(0, 1, (4, 4))
    cov = class_covariance(x, np.zeros(400), 0)
    pair = learn_separable(cov, 2, tol=1e-14, max_sweeps=500)
    # for 2 nodes each factor is a*P + J with logdet log(2a); the trace is bilinear
    p = np.array([[1.0, -1.0], [-1.0, 1.0]])
    j = np.full((2, 2), 0.5)
    t = {(u, v): np.sum(np.kron(x1, x2) * cov.s)
         for u, x1 in (("p", p), ("j", j)) for v, x2 in (("p", p), ("j", j))}
    a, b = np.meshgrid(np.linspace(0.005, 8, 1600), np.linspace(0.005, 8, 1600), indexing="ij")
    f = (-2 * np.log(2 * a) - 2 * np.log(2 * b) + a * b * t["p", "p"] + a * t["p", "j"]
         + b * t["j", "p"] + t["j", "j"])
    best = f.min()
    assert abs(separable_objective(pair, cov) - best) < 1e-2


def test_separable_shape_error():
    with pytest.raises(ValueError):
        learn_separable(np.eye(6), 2)


def test_train_constant_image_falls_back():
    img = np.full((64, 64), 90, dtype=np.uint8)
    model = train_model([img], TrainConfig(n_c=1))
    assert model.notes["fallback"] == [0]
    np.testing.assert_array_equal(model.graphs[0].laplacian, dct_grid_laplacian(8).laplacian)


def test_train_empty_set():
    with pytest.raises(ValueError):
        train_model([])


def test_train_deterministic(small_images):
    cfg = TrainConfig(n_c=2, topology="grid8")
    a = train_model(small_images, cfg).to_bytes()
    b = train_model(small_images, cfg).to_bytes()
    assert a == b


def test_important_class_more_correlated(models):
    # class 1 has the larger codeword, i.e. the perceptually important blocks
    model = models["nonsep"]
    w = [g.adjacency.sum() for g in model.graphs]
    assert w[1] > w[0]
