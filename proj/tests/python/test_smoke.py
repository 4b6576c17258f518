"""End-to-end smoke tests for the galupath python module."""

import numpy as np
import pytest

import galupath as g


def unit_rows(n, d, seed):
    rng = np.random.default_rng(seed)
    x = np.abs(rng.normal(size=(n, d))) + 0.1
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_path_counts():
    fc = g.ArchSpec(kind="FC", d_in=2, w=3, d=3)
    assert g.count_paths(fc) == 18
    conv = g.ArchSpec(kind="CONV_GAP", d_in=4, w=3, d_cv=2, w_cv=2, d_fc=1)
    assert g.count_paths(conv) == 144
    assert g.count_bundles(conv) == 36
    res = g.ArchSpec(kind="RESNET", d_in=1, w=2, b=1, d_blk=1)
    assert g.count_paths(res) == 6


def test_structural_ops():
    assert g.circ_add(3, 2, 4) == 1
    assert np.array_equal(g.rotate(np.array([1.0, 2, 3, 4]), 1), [2, 3, 4, 1])
    z = np.array([[1.0, 2, 3, 4]])
    k = np.ones((2, 1, 1))
    assert np.allclose(g.conv1d_circular(z, k), [[3, 5, 7, 5]])
    assert np.allclose(g.global_average_pool(z), [2.5])
    assert np.allclose(g.max_pool_1d(z, 2), [[2, 4]])


def test_dual_identity():
    spec = g.ArchSpec(kind="FC", d_in=3, w=4, d=4)
    model = g.make_model(spec, family="DGN", seed=11, gating="HARD")
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.normal(size=3)
        direct = model.forward(x)[0]
        dual = model.output_via_paths(x)
        assert abs(direct - dual) <= 1e-10


def test_feature_value_split():
    spec = g.ArchSpec(kind="FC", d_in=2, w=3, d=3)
    model = g.make_model(spec, family="DLGN", seed=3, gating="HARD")
    x = np.array([0.4, -1.2])
    phi = model.npf(x)
    v = model.npv()
    assert phi.shape == v.shape == (g.count_paths(spec),)
    assert abs(float(phi @ v) - model.forward(x)[0]) <= 1e-10


def test_product_kernel_matches_bruteforce():
    spec = g.ArchSpec(kind="FC", d_in=4, w=3, d=3)
    gating = g.make_gating_net(spec, family="DGN", seed=5)
    x = unit_rows(6, 4, seed=1)
    brute = g.npk_bruteforce(gating, x)
    closed = g.npk_closed(gating, x)
    assert np.allclose(brute, closed, atol=1e-10)
    assert np.allclose(closed, closed.T)


def test_conv_kernel_rotation_invariance():
    spec = g.ArchSpec(kind="CONV_GAP", d_in=5, w=2, d_cv=1, w_cv=2, d_fc=2)
    gating = g.make_gating_net(spec, family="DGN", seed=6)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5))
    base = g.npk_closed(gating, x)
    for s in range(5):
        rot = np.stack([g.rotate(x[0], s), g.rotate(x[1], s)])
        assert np.allclose(g.npk_closed(gating, rot), base, atol=1e-10)


def test_ntk_scope_and_symmetry():
    spec = g.ArchSpec(kind="FC", d_in=3, w=6, d=3)
    model = g.make_model(spec, family="DGN", seed=9, gating="HARD")
    x = unit_rows(4, 3, seed=3)
    value_scope = g.empirical_ntk(model, x, scope="value")
    all_scope = g.empirical_ntk(model, x, scope="all")
    assert np.array_equal(value_scope, all_scope)
    assert np.array_equal(value_scope, value_scope.T)


def test_limit_constants():
    lc = g.limit_constants(g.ArchSpec(kind="FC", d_in=2, w=4, d=3), 1.0)
    assert lc["sigma"] == pytest.approx(0.5)
    assert lc["fc_const"] == pytest.approx(3 * 0.5**4)


def test_determinism():
    spec = g.ArchSpec(kind="FC", d_in=3, w=4, d=3)
    a = g.make_model(spec, family="DGN", seed=21, gating="HARD")
    b = g.make_model(spec, family="DGN", seed=21, gating="HARD")
    assert a.value_hash() == b.value_hash()
    x = np.array([1.0, -2.0, 0.5])
    assert a.forward(x)[0] == b.forward(x)[0]


def test_gen_synthetic_and_training():
    x, y = g.gen_synthetic("BLOBS", n=384, d_in=6, classes=2, noise=0.5, seed=4)
    assert x.shape == (384, 6)
    assert set(np.unique(y)) == {0, 1}
    assert abs(int((y == 1).sum()) - 192) <= 1

    spec = g.ArchSpec(kind="FC", d_in=6, w=12, d=3, out_dim=2)
    model = g.make_model(spec, family="DGN", seed=4, gating="SOFT")
    trained, metrics = g.train_model(
        model, x[:256], y[:256], x[256:], y[256:], epochs=20, seed=4
    )
    assert metrics["test_accuracy"] >= 0.9
    assert trained.value_hash() != model.value_hash()


def test_kernel_ridge():
    k = np.eye(3)
    y = np.array([1.0, -2.0, 0.5])
    pred = g.kernel_ridge_predict(k, y, k, 1e-10)
    assert np.allclose(pred, y, atol=1e-5)
