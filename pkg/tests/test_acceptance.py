"""The twelve acceptance criteria at their stated tolerances.

Each test prints (and records for the terminal summary) one line of the form
``#k <name>: PASS|FAIL <detail>``.
"""
import json
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, BERWALD, QUADRATIC, cone_samples, timelike_samples
from oracles import oracle_christoffel, oracle_sectional
from lfgeom import (
    ZOO_NAMES,
    DiscreteMeasure,
    GroundSpace,
    berwald_deviation,
    check_sqrt_var_convexity,
    integrate_geodesic,
    time_separation,
    variance,
    verify_theorem_1_1,
    w2_distance,
    w2_geodesic,
    zoo_model,
)
from lfgeom import ode
from lfgeom.cli import run
from lfgeom.connection import connection_batch
from lfgeom.curvature import flag_batch, jacobi_batch
from lfgeom.fundamental import metric_batch
from lfgeom.geodesics import exp_batch, integrate_geodesics, solve_bvp_batch
from lfgeom.verify import Budget, CONDITIONS, FAIL, PASS, _grid_rows, _run_transport_scan
from lfgeom.rng import substream

MODELS = {n: zoo_model(n) for n in ZOO_NAMES}


def record(k, name, ok, detail):
    line = f"#{k} {name}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _desk_samples(m, rng, count, frac=0.3, speed=0.25, timelike=False):
    """Points near the chart centre and desk-scale directions (in-cone for cone models)."""
    width = float(np.min(m.chart_max - m.chart_min))
    if timelike or m.cone_c is not None:
        X, V = timelike_samples(m, rng, count, frac)
    else:
        X, _ = timelike_samples(m, rng, count, frac)
        V = rng.normal(size=X.shape)
    V = speed * width * V / np.linalg.norm(V, axis=1, keepdims=True)
    return X, V


def test_01_euler_homogeneity():
    worst = 0.0
    for name, m in MODELS.items():
        X, V = cone_samples(m, np.random.default_rng(101), 1000)
        g = metric_batch(m, X, V)
        L = m.lagrangian(X, V)
        e1 = np.abs(np.einsum("bi,bij,bj->b", V, g, V) - 2 * L) / np.abs(L)
        worst = max(worst, float(e1.max()))
        for c in (0.3, 2.0, 9.0):
            e2 = np.abs(metric_batch(m, X, c * V) - g) / np.max(np.abs(g), axis=(1, 2))[:, None, None]
            worst = max(worst, float(e2.max()))
    record(1, "Euler/homogeneity", worst <= 1e-8, f"max rel err {worst:.2e} (tol 1e-8, 6 models x 1000)")


def test_02_quadratic_cross_check():
    worst = 0.0
    for name in QUADRATIC:
        m = MODELS[name]
        rng = np.random.default_rng(102)
        X, V = timelike_samples(m, rng, 200)
        W = rng.normal(size=V.shape)
        _, _, _, chern = connection_batch(m, X, V)
        K, _, den = flag_batch(m, X, V, W)
        for b in range(200):
            worst = max(worst, float(np.max(np.abs(chern[b] - oracle_christoffel(name, m.dim, X[b])))))
            worst = max(worst, abs(K[b] - oracle_sectional(name, m.dim, X[b], V[b], W[b])))
    record(2, "quadratic cross-check", worst <= 1e-4, f"max |diff| Gamma,K {worst:.2e} (tol 1e-4, 4 models x 200)")


def test_03_flat_exactness():
    worst = 0.0
    for name in ("minkowski", "flat_finsler"):
        m = MODELS[name]
        rng = np.random.default_rng(103)
        X, V = timelike_samples(m, rng, 100, frac=0.3)
        W = rng.normal(size=V.shape)
        _, G, _, chern = connection_batch(m, X, V)
        _, num, _ = flag_batch(m, X, V, W)
        worst = max(worst, float(np.max(np.abs(chern))), float(np.max(np.abs(num))))
        for x, v in zip(X[:10], V[:10]):
            v = 0.3 * v / np.linalg.norm(v)
            p = integrate_geodesic(m, x, v)
            ts = p.knots
            worst = max(worst, float(np.max(np.abs(p.knot_positions() - (x + ts[:, None] * v)))))
    taus = [time_separation(MODELS["minkowski"], [0, 0], [2, 1]),
            time_separation(zoo_model("flat_finsler", {"epsilon": 0.0, "chart_min": -5, "chart_max": 5}), [0, 0], [2, 1])]
    terr = max(abs(t - math.sqrt(3)) for t in taus)
    ok = worst <= 1e-12 and terr <= 1e-9
    record(3, "flat exactness", ok, f"max |Gamma|,|R|,line err {worst:.1e}; tau err {terr:.1e} (tol 1e-9)")


def test_04_de_sitter_constant_curvature():
    m = MODELS["de_sitter"]
    rng = np.random.default_rng(104)
    X, V = timelike_samples(m, rng, 200)
    W = rng.normal(size=V.shape)
    K, _, _ = flag_batch(m, X, V, W)
    err = float(np.max(np.abs(K - 1.0)))
    record(4, "de Sitter K=+1", err <= 1e-4 and np.all(K > 0), f"max |K-1| {err:.2e} over 200 timelike flags")


def test_05_theorem_matrix():
    expect = {"minkowski": PASS, "de_sitter": PASS, "product_hyperbolic": PASS, "flat_finsler": PASS,
              "product_sphere": FAIL}
    lines, ok = [], True
    for name, want in expect.items():
        rep = verify_theorem_1_1(MODELS[name], Budget(), seed=42)
        verdicts = rep.verdicts
        good = rep.agree and verdicts[0] == want and len(verdicts) == len(CONDITIONS)
        if want == FAIL:
            good &= all(r.witness is not None for r in rep.reports.values())
        ok &= good
        lines.append(f"{name}={'/'.join(v[0] for v in verdicts)}")
    record(5, "theorem matrix", ok, " ".join(lines))


def test_06_berwald_detector():
    devs = {}
    for name in BERWALD:
        m = MODELS[name]
        devs[name] = max(berwald_deviation(m, x, 16, 0)[0]
                         for x in m.sample_points(np.random.default_rng(106), 4, margin=0.1))
    pf = berwald_deviation(MODELS["perturbed_finsler"], [0.0, 0.5], 16, 0)[0]
    ok = max(devs.values()) <= 1e-7 and pf >= 1e-4
    record(6, "Berwald detector", ok, f"max Berwald dev {max(devs.values()):.1e}; perturbed at x1=0.5 {pf:.2e}")


def test_07_parallel_L_constancy():
    worst = 0.0
    for name in BERWALD:
        verdict, neg_dev, _, details = _run_transport_scan(MODELS[name], substream(107, "parallel"),
                                                          Budget(transport_paths=50))
        assert details["paths"] == 50
        worst = max(worst, -neg_dev)
    record(7, "parallel L constancy", worst <= 1e-6, f"max |L(V)-L(V0)| {worst:.2e} (tol 1e-6, 5 models x 50)")


def test_08_jacobi_vs_variation():
    worst = 0.0
    s = 1e-4
    ts = np.linspace(0, 1, 9)
    for name, m in MODELS.items():
        rng = np.random.default_rng(108)
        X, V = _desk_samples(m, rng, 20, timelike=True)
        W = 0.2 * V + 0.1 * float(np.min(m.chart_max - m.chart_min)) * rng.normal(size=V.shape)
        if m.cone_c is not None:
            W[:, 1:] *= 0.2
        n = m.dim
        sol = jacobi_batch(m, X, V, np.zeros_like(V), W, stops=ts)
        var = integrate_geodesics(m, np.vstack([X, X]), np.vstack([V + s * W, V - s * W]), stops=ts)
        assert np.all(sol.status == ode.OK) and np.all(var.status == ode.OK)
        J = _grid_rows(sol, ts)[:, :, 2 * n:3 * n]
        P = _grid_rows(var, ts)[:, :, :n]
        fd = (P[:, :20] - P[:, 20:]) / (2 * s)
        worst = max(worst, float(np.max(np.abs(J - fd))))
    record(8, "Jacobi vs variation", worst <= 1e-5, f"max knot deviation {worst:.2e} (tol 1e-5, 6 models x 20)")


def test_09_bvp_inversion():
    worst, counts = 0.0, []
    for name, m in MODELS.items():
        rng = np.random.default_rng(109)
        X, V = _desk_samples(m, rng, 140, speed=0.15)
        Y, st = exp_batch(m, X, V)
        keep = np.flatnonzero((st == ode.OK) & m.in_chart(Y))[:100]
        counts.append(len(keep))
        r = solve_bvp_batch(m, X[keep], Y[keep])
        assert np.all(r.ok)
        worst = max(worst, float(np.max(np.abs(r.velocity - V[keep]))))
    ok = worst <= 1e-7 and min(counts) == 100
    record(9, "BVP inversion", ok, f"max |v - v*| {worst:.2e} (tol 1e-7, 6 models x {min(counts)})")


def test_10_reverse_cauchy_schwarz():
    worst = np.inf
    for name, m in MODELS.items():
        rng = np.random.default_rng(110)
        X, V = timelike_samples(m, rng, 1000)
        W = rng.normal(size=V.shape)
        g = metric_batch(m, X, V)
        F2 = -np.einsum("bi,bij,bj->b", V, g, V)
        gww = np.einsum("bi,bij,bj->b", W, g, W)
        gvw = np.einsum("bi,bij,bj->b", V, g, W)
        q = (F2 * gww + gvw**2) / (F2 * np.abs(gww) + gvw**2 + 1.0)
        worst = min(worst, float(q.min()))
    record(10, "reverse Cauchy-Schwarz", worst >= -1e-9, f"min scaled quantity {worst:.2e} (>= -1e-9, 6 models x 1000)")


def test_11_transport_suite():
    rng = np.random.default_rng(111)
    E2, P3 = GroundSpace(2), GroundSpace(2, "p", 3.0)

    def meas(m=None):
        m = m or int(rng.integers(2, 6))
        w = rng.random(m) + 0.1
        return DiscreteMeasure(rng.normal(size=(m, 2)), w / w.sum())

    sym, tri = 0.0, np.inf
    for space in (E2, P3):
        for _ in range(50):
            a, b, c = meas(), meas(), meas()
            dab = w2_distance(space, a, b)[0]
            sym = max(sym, abs(dab - w2_distance(space, b, a)[0]))
            tri = min(tri, w2_distance(space, a, c)[0] + w2_distance(space, c, b)[0] - dab)
    var_err = 0.0
    for space in (E2, P3):
        for _ in range(20):
            P = rng.normal(size=(4, 2))
            mu = DiscreteMeasure(P[:2], np.array([0.5, 0.5]))
            nu = DiscreteMeasure(P[2:], np.array([0.5, 0.5]))
            for t in np.linspace(0, 1, 5):
                mt = w2_geodesic(space, mu, nu, t, np.diag([0.5, 0.5]))
                d = space.dist((1 - t) * P[0] + t * P[2], (1 - t) * P[1] + t * P[3])
                var_err = max(var_err, abs(variance(space, mt).value - 0.25 * d * d))
    conv = []
    for space in (E2, P3):
        for _ in range(20):
            conv.append(check_sqrt_var_convexity(space, meas(4), meas(4), grid_size=9).verdict == PASS)
    ok = sym <= 1e-9 and tri >= -1e-9 and var_err <= 1e-10 and all(conv)
    record(11, "transport suite", ok,
           f"sym {sym:.1e}, triangle slack {tri:.2e}, two-Dirac var err {var_err:.1e}, convex {sum(conv)}/40")


def test_12_determinism(tmp_path, capsys):
    budget = json.dumps({"concavity_pairs": 4, "grid": 9, "flags": 100})
    outs = []
    for k in range(2):
        p = tmp_path / f"r{k}.json"
        run(["verify", "concavity", "--model", "product_sphere", "--seed", "42", "--budget", budget, "--out", str(p)])
        outs.append(p.read_bytes())
    for k in range(2):
        p = tmp_path / f"a{k}.json"
        run(["verify", "berwald", "--model", "perturbed_finsler", "--seed", "9", "--out", str(p)])
        outs.append(p.read_bytes())
    capsys.readouterr()
    ok = outs[0] == outs[1] and outs[2] == outs[3]
    record(12, "determinism", ok, f"byte-identical reports ({len(outs[0])} and {len(outs[2])} bytes)")
