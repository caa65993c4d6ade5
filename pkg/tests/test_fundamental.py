import math

import numpy as np
import pytest

from conftest import cone_samples, timelike_samples
from oracles import stencil_hessian
from lfgeom import ZOO_NAMES, classify, eval_L, metric_tensor, norm_F, zoo_model
from lfgeom.errors import NotCausal
from lfgeom.fundamental import LIGHTLIKE_BAND, classify_batch, inner, metric_batch, orthonormal_frame


def test_minkowski_metric():
    m = zoo_model("minkowski")
    for v in ([1.0, 0.0], [0.3, -2.0], [1.0, 1.0]):
        assert np.array_equal(metric_tensor(m, [0.5, 0.5], v).entries, np.diag([-1.0, 1.0]))


def test_flat_finsler_metric_against_stencil():
    m = zoo_model("flat_finsler", {"epsilon": 0.01})
    x, v = np.zeros(2), np.array([1.0, 0.1])
    g = metric_tensor(m, x, v).entries
    H = stencil_hessian(lambda u: eval_L(m, x, u), v)
    assert np.max(np.abs(g - H)) <= 1e-5


def test_minkowski_inner_orthogonal():
    m = zoo_model("minkowski")
    assert inner(m, [0, 0], [1, 0.3], [1, 0], [0, 1]) == 0.0


@pytest.mark.parametrize("v,kind,orient", [
    ([1.0, 0.0], "timelike", "future"),
    ([1.0, 1.0], "lightlike", "future"),
    ([0.0, 1.0], "spacelike", "n/a"),
    ([-1.0, 0.5], "timelike", "past"),
    ([0.0, 0.0], "zero", "n/a"),
])
def test_minkowski_classify(v, kind, orient):
    c = classify(zoo_model("minkowski"), [0.0, 0.0], v)
    assert (c.kind, c.orientation) == (kind, orient)


def test_minkowski_F():
    m = zoo_model("minkowski")
    assert norm_F(m, [0, 0], [2.0, 1.0]) == pytest.approx(math.sqrt(3), abs=1e-15)
    assert norm_F(m, [0, 0], [1.0, 1.0]) == 0.0
    with pytest.raises(NotCausal):
        norm_F(m, [0, 0], [0.0, 1.0])


def test_lightlike_band_edge():
    m = zoo_model("minkowski")
    d = 1e-13
    assert classify(m, [0, 0], [1.0, 1.0 - d]).kind == "lightlike"
    assert classify(m, [0, 0], [1.0, 1.0 - 1e-9]).kind == "timelike"
    assert LIGHTLIKE_BAND == 1e-12


@pytest.mark.parametrize("name", ZOO_NAMES)
def test_euler_identity_and_zero_homogeneity(zoo, name):
    m = zoo[name]
    rng = np.random.default_rng(5)
    X, V = cone_samples(m, rng, 1000)
    g = metric_batch(m, X, V)
    gvv = np.einsum("bi,bij,bj->b", V, g, V)
    L = m.lagrangian(X, V)
    assert np.all(np.abs(gvv - 2 * L) <= 1e-8 * np.maximum(np.abs(L), 1e-300) + 1e-14)
    for c in (0.5, 2.0, 7.0):
        gc = metric_batch(m, X, c * V)
        assert np.max(np.abs(gc - g) / (1 + np.abs(g))) <= 1e-8
    assert np.max(np.abs(g - np.swapaxes(g, 1, 2))) <= 1e-9


@pytest.mark.parametrize("name", ZOO_NAMES)
def test_reverse_cauchy_schwarz(zoo, name):
    m = zoo[name]
    rng = np.random.default_rng(6)
    X, V = timelike_samples(m, rng, 1000)
    W = rng.normal(size=V.shape)
    g = metric_batch(m, X, V)
    F2 = -np.einsum("bi,bij,bj->b", V, g, V)
    gww = np.einsum("bi,bij,bj->b", W, g, W)
    gvw = np.einsum("bi,bij,bj->b", V, g, W)
    q = F2 * gww + gvw**2
    scale = F2 * np.abs(gww) + gvw**2 + 1.0
    assert np.all(q >= -1e-9 * scale)


@pytest.mark.parametrize("name", ZOO_NAMES)
def test_orthonormal_frame(zoo, name):
    m = zoo[name]
    x = 0.5 * (m.chart_min + m.chart_max) + 0.1
    E = orthonormal_frame(m, x)
    g = metric_batch(m, x, E[:, 0])[0]
    assert np.allclose(E.T @ g @ E, np.diag([-1.0] + [1.0] * (m.dim - 1)), atol=1e-12)
    codes, fut = classify_batch(m, x, E[:, 0])
    assert codes[0] == -1 and fut[0]


def test_classify_scale_invariant_examples():
    m = zoo_model("de_sitter")
    rng = np.random.default_rng(7)
    X, V = cone_samples(m, rng, 200)
    c1, f1 = classify_batch(m, X, V)
    for s in (1e-3, 0.5, 40.0):
        c2, f2 = classify_batch(m, X, s * V)
        assert np.array_equal(c1, c2) and np.array_equal(f1, f2)
