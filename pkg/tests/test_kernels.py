import numpy as np
import pytest

from fleetopt import _pykernels as py
from fleetopt import kernels

from oracles import matern52_reference

ck = pytest.importorskip("fleetopt._ckernels", reason="compiled kernels not built")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_sq_dists_agree(rng):
    a, b = rng.normal(size=(30, 4)), rng.normal(size=(11, 4))
    np.testing.assert_allclose(ck.sq_dists(a, b), py.sq_dists(a, b), rtol=1e-13, atol=1e-13)


def test_assign_nearest_agrees_and_breaks_ties_low(rng):
    pts = rng.normal(size=(100, 3))
    cents = rng.normal(size=(6, 3))
    lc, dc = ck.assign_nearest(pts, cents)
    lp, dp = py.assign_nearest(pts, cents)
    np.testing.assert_array_equal(lc, lp)
    np.testing.assert_allclose(dc, dp, rtol=1e-13)
    dup = np.array([[0.0, 0.0], [0.0, 0.0]])
    for mod in (ck, py):
        labels, _ = mod.assign_nearest(np.array([[1.0, 1.0]]), dup)
        assert labels[0] == 0


def test_matern_matches_reference(rng):
    x1, x2 = rng.uniform(size=(7, 3)), rng.uniform(size=(5, 3))
    ls = np.array([0.3, 1.2, 0.7])
    ref = matern52_reference(x1, x2, ls, 1.7)
    for mod in (ck, py):
        np.testing.assert_allclose(mod.matern52(x1, x2, ls, 1.7), ref, rtol=1e-12)


def test_nlml_agrees(rng):
    x = rng.uniform(size=(25, 3))
    y = rng.normal(size=25)
    ls = np.array([0.5, 0.4, 2.0])
    c = ck.gp_nlml(x, y, ls, 1.3, 1e-3)
    p = py.gp_nlml(x, y, ls, 1.3, 1e-3)
    assert abs(c - p) <= 1e-10 * abs(p)


def test_nlml_infinite_when_not_positive_definite():
    x = np.zeros((3, 1))
    y = np.ones(3)
    for mod in (ck, py):
        assert mod.gp_nlml(x, y, np.array([1.0]), 1.0, 0.0) == np.inf


def test_mc_ei_agrees(rng):
    mean, std, z = rng.normal(size=64), rng.uniform(0, 1, 64), rng.normal(size=128)
    np.testing.assert_allclose(ck.mc_expected_improvement(mean, std, z, 0.1),
                               py.mc_expected_improvement(mean, std, z, 0.1), rtol=1e-12, atol=1e-15)


def test_lengthscale_gradient_agrees_and_matches_finite_differences(rng):
    x = rng.uniform(size=(9, 3))
    w = rng.normal(size=(9, 9))
    ls = np.array([0.3, 0.8, 1.5])
    g = ck.matern52_ls_grad(x, ls, 1.7, w)
    np.testing.assert_allclose(g, py.matern52_ls_grad(x, ls, 1.7, w), rtol=1e-12)
    h = 1e-6
    for k in range(3):
        up, dn = ls.copy(), ls.copy()
        up[k] *= np.exp(h)
        dn[k] *= np.exp(-h)
        fd = (np.sum(w * matern52_reference(x, x, up, 1.7)) - np.sum(w * matern52_reference(x, x, dn, 1.7))) / (2 * h)
        assert abs(fd - g[k]) < 1e-6 * max(1.0, abs(g[k]))
