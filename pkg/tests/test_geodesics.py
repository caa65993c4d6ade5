import math

import numpy as np
import pytest

from conftest import timelike_samples
from lfgeom import exp_map, integrate_geodesic, parallel_transport, solve_bvp, time_separation, zoo_model
from lfgeom import ode
from lfgeom.errors import LeftChart, NoConvergence, PointOutsideChart
from lfgeom.fundamental import classify, classify_batch, metric_batch
from lfgeom.geodesics import exp_batch, path_length, solve_bvp_batch, time_separation_batch


# -- integrator ---------------------------------------------------------------

def test_dp5_harmonic_oscillator():
    f = lambda t, Y: np.stack([Y[:, 1], -Y[:, 0]], axis=1)
    y0 = np.array([[1.0, 0.0], [0.0, 2.0]])
    sol = ode.integrate(f, y0, 0.0, 3.0, stops=[1.0, 2.0])
    assert np.all(sol.status == ode.OK)
    assert 1.0 in sol.t and 2.0 in sol.t
    exact = np.stack([np.cos(sol.t), 2 * np.sin(sol.t)], axis=1)
    assert np.max(np.abs(sol.y[:, :, 0] - exact)) <= 1e-9


def test_dp5_backwards_and_guard():
    f = lambda t, Y: np.ones_like(Y)
    guard = lambda t, Y: np.where(Y[:, 0] > 0.5, ode.LEFT_CHART, ode.OK)
    sol = ode.integrate(f, np.array([[0.0], [-5.0]]), 0.0, 1.0, guard=guard)
    assert list(sol.status) == [ode.LEFT_CHART, ode.OK]
    back = ode.integrate(f, np.array([[0.0]]), 0.0, -1.0)
    assert back.y[-1, 0, 0] == pytest.approx(-1.0, abs=1e-12)


def test_hermite_reproduces_cubic():
    T = np.array([0.0, 0.4, 1.0])
    p = lambda t: 2 * t**3 - t + 1
    dp = lambda t: 6 * t**2 - 1
    ts = np.linspace(0, 1, 13)
    val, der = ode.hermite(ts, T, p(T), dp(T))
    assert np.allclose(val, p(ts), atol=1e-14) and np.allclose(der, dp(ts), atol=1e-13)


# -- Minkowski examples -----------------------------------------------------

def test_minkowski_straight_line():
    m = zoo_model("minkowski")
    path = integrate_geodesic(m, [0.0, 0.0], [1.0, 0.0])
    ts = np.linspace(0, 1, 9)
    assert np.allclose(path.position(ts), np.stack([ts, 0 * ts], axis=1), atol=1e-14)


def test_minkowski_exp_and_bvp():
    m = zoo_model("minkowski")
    assert np.allclose(exp_map(m, [0.5, -1.0], [0.3, 2.0]), [0.8, 1.0], atol=1e-14)
    v, _ = solve_bvp(m, [0.0, 0.0], [2.0, 1.0])
    assert np.allclose(v, [2.0, 1.0], atol=1e-12)
    v0, p0 = solve_bvp(m, [1.0, 1.0], [1.0, 1.0])
    assert not np.any(v0) and p0.constant


def test_minkowski_tau():
    m = zoo_model("minkowski")
    assert time_separation(m, [0, 0], [2, 1]) == pytest.approx(math.sqrt(3), abs=1e-9)
    assert time_separation(m, [0, 0], [1, 2]) == 0.0
    assert time_separation(m, [0, 0], [-2, 1]) == 0.0
    assert time_separation(m, [0, 0], [1, 1]) == pytest.approx(0.0, abs=1e-6)


def test_minkowski_parallel_transport_constant():
    m = zoo_model("minkowski")
    path = integrate_geodesic(m, [0.0, 0.0], [1.0, 0.3], stops=np.linspace(0, 1, 5))
    W = parallel_transport(m, path, [0.2, 0.7])
    assert np.allclose(W, [0.2, 0.7], atol=1e-14)


def test_errors():
    m = zoo_model("de_sitter")
    with pytest.raises(LeftChart):
        integrate_geodesic(m, [0.5, 0.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(PointOutsideChart):
        solve_bvp(m, [0, 0, 0], [0.9, 0, 0])
    with pytest.raises(NoConvergence):
        solve_bvp(m, [0.58, -0.58, 0.0], [0.58, 0.58, 0.0])  # connecting curve leaves the chart


# -- de Sitter ----------------------------------------------------------------

def _ds_path(m):
    return integrate_geodesic(m, [-0.3, 0.05, -0.1], [0.5, 0.15, 0.1], stops=np.linspace(0, 1, 17))


def test_de_sitter_L_conservation():
    m = zoo_model("de_sitter")
    path = _ds_path(m)
    L = m.lagrangian(path.knot_positions(), path.knot_velocities())
    assert np.max(np.abs(L - L[0])) <= 1e-8 * abs(L[0])


def test_de_sitter_geodesic_residual():
    m = zoo_model("de_sitter")
    path = _ds_path(m)
    ts = np.linspace(0.05, 0.95, 7)
    h = 1e-4
    acc = (path.velocity(ts + h) - path.velocity(ts - h)) / (2 * h)
    from lfgeom.connection import spray_batch
    G = spray_batch(m, path.position(ts), path.velocity(ts))
    assert np.max(np.abs(acc + G)) <= 1e-6


def test_de_sitter_exp_rotation_equivariance():
    m = zoo_model("de_sitter")
    x = np.array([-0.2, 0.0, 0.0])
    v = np.array([0.5, 0.2, -0.1])
    for th in (0.3, 1.1, 2.5):
        Q = np.eye(3)
        Q[1:, 1:] = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
        assert np.allclose(exp_map(m, x, Q @ v), Q @ exp_map(m, x, v), atol=1e-7)


def test_de_sitter_bvp_residual_by_reintegration():
    m = zoo_model("de_sitter")
    x, y = np.array([-0.3, 0.1, 0.0]), np.array([0.2, -0.05, 0.15])
    v, _ = solve_bvp(m, x, y)
    assert np.max(np.abs(exp_map(m, x, v) - y)) <= 1e-9


def test_de_sitter_transport_compatibility():
    m = zoo_model("de_sitter")
    path = _ds_path(m)
    A = parallel_transport(m, path, [1.0, 0.2, 0.0])
    B = parallel_transport(m, path, [0.1, -0.5, 0.8])
    g = metric_batch(m, path.knot_positions(), path.knot_velocities())
    ip = np.einsum("bi,bij,bj->b", A, g, B)
    assert np.max(np.abs(ip - ip[0])) <= 1e-6


def test_de_sitter_tau_orientation():
    m = zoo_model("de_sitter")
    x, y = np.array([-0.3, 0.0, 0.1]), np.array([0.2, 0.1, 0.0])
    t_xy = time_separation(m, x, y)
    assert t_xy > 0.1
    assert time_separation(m, y, x) == 0.0
    v, _ = solve_bvp(m, x, y)
    c = classify(m, x, v)
    assert c.causal and c.orientation == "future"
    assert path_length(integrate_geodesic(m, x, v)) == pytest.approx(t_xy, rel=1e-10)


def test_reverse_triangle_along_maximizer():
    m = zoo_model("de_sitter")
    x, y = np.array([-0.3, 0.0, 0.1]), np.array([0.25, 0.1, -0.05])
    v, path = solve_bvp(m, x, y)
    txy = time_separation(m, x, y)
    for s in (0.25, 0.5, 0.8):
        z = path.position(s)
        tot = time_separation(m, x, z) + time_separation(m, z, y)
        assert tot == pytest.approx(txy, abs=1e-7)
    z = path.position(0.5) + np.array([0.0, 0.05, 0.0])
    assert time_separation(m, x, z) + time_separation(m, z, y) <= txy + 1e-7


def test_affine_reparametrisation():
    m = zoo_model("product_sphere")
    x = np.array([0.0, 0.1, -0.1])
    v = np.array([0.4, 0.1, 0.2])
    T = 0.8
    a = integrate_geodesic(m, x, v, (0.0, T)).endpoint()
    for c in (0.5, 2.0):
        b = integrate_geodesic(m, x, c * v, (0.0, T / c)).endpoint()
        assert np.max(np.abs(a - b)) <= 1e-8


@pytest.mark.parametrize("name", ["de_sitter", "product_sphere", "perturbed_finsler"])
def test_batch_bvp_inverts_exp(zoo, name):
    m = zoo[name]
    rng = np.random.default_rng(13)
    X, V = timelike_samples(m, rng, 20, frac=0.3)
    V *= 0.15
    Y, st = exp_batch(m, X, V)
    assert np.all(st == ode.OK)
    r = solve_bvp_batch(m, X, Y)
    assert np.all(r.ok)
    assert np.max(np.abs(r.velocity - V)) <= 1e-7


def test_tau_positive_implies_future_causal_velocity():
    m = zoo_model("product_hyperbolic")
    rng = np.random.default_rng(14)
    X = rng.uniform(-0.3, 0.3, size=(30, 3))
    Y = rng.uniform(-0.3, 0.3, size=(30, 3))
    tb = time_separation_batch(m, X, Y)
    pos = tb.tau > 0
    assert pos.any() and (~pos).any()
    codes, fut = classify_batch(m, X[pos], tb.velocity[pos])
    assert np.all(codes <= 0) and np.all(fut)
