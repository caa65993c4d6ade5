"""Verification harness: flag curvature sign, local (timelike) concavity of
the time separation, convexity of future/past capsules, and constancy of
L under parallel transport.

Every scan draws from a labelled substream of one seed, evaluates all of its
candidates in large batches, and returns a :class:`Report` whose witness
carries the exact inputs needed to re-run the failing case.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .connection import berwald_deviation, is_berwald
from .curvature import flag_batch, jacobi_batch
from .errors import EndpointConditionViolated, NotTimelike, SamplingExhausted, BadConfig
from .fundamental import classify_batch, orthonormal_frame
from .geodesics import (
    GeodesicPath,
    integrate_geodesics,
    parallel_transport,
    parallel_transport_batch,
    solve_bvp_batch,
    time_separation_batch,
)
from .models import SpacetimeModel, reverse_model
from .rng import substream

PASS, FAIL = "pass", "fail"
CONC_REL_TOL = 1e-6
FLAG_TOL = 1e-6
EQUAL_TOL = 1e-12
SCAN_BVP_TARGET = 1e-10  # endpoint residual for scan-internal shooting


def concavity_tolerance(values):
    vals = np.asarray(values, float)
    top = float(np.max(vals[np.isfinite(vals)])) if np.any(np.isfinite(vals)) else 0.0
    return CONC_REL_TOL * (1.0 + top)


@dataclass
class Budget:
    flags: int = 400
    concavity_pairs: int = 12
    grid: int = 17
    capsule_pairs: int = 4
    capsule_random_pairs: int = 4
    capsule_s_grid: int = 5
    capsule_t_grid: int = 9
    capsule_draws: int = 10_000
    transport_paths: int = 8
    berwald_points: int = 4

    @classmethod
    def thorough(cls):
        """The larger sampling sizes used for thorough offline runs."""
        return cls(flags=2000, concavity_pairs=64, grid=33, capsule_pairs=32, capsule_random_pairs=32,
                   capsule_s_grid=17, capsule_t_grid=17, transport_paths=50, berwald_points=16)

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise BadConfig(f"unknown budget keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class Report:
    check: str
    verdict: str
    worst_deficit: float
    witness: dict | None
    seed: int | None
    runtime_ms: float | None = None
    details: dict = field(default_factory=dict)

    def to_json(self, timing=False):
        out = {"check": self.check, "verdict": self.verdict, "worst_deficit": _clean(self.worst_deficit),
               "witness": _clean(self.witness), "seed": self.seed,
               "runtime_ms": None if not timing or self.runtime_ms is None else round(self.runtime_ms, 3)}
        return out


def _clean(obj):
    """JSON-friendly copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# sampling helpers


def _desk(model):
    lo, hi = model.chart_min, model.chart_max
    center = 0.5 * (lo + hi)
    hw = 0.5 * (hi - lo)
    scale = min(0.35 * float(np.min(hw)), 1.0)
    return center, hw, scale


def _sample_points(model, rng, count, frac=0.25):
    center, hw, _ = _desk(model)
    return center + frac * hw * rng.uniform(-1, 1, size=(count, model.dim))


def _frames(model, X):
    return np.array([orthonormal_frame(model, x) for x in X])


def _spatial_ball(rng, count, k, radius):
    u = rng.normal(size=(count, k))
    u /= np.linalg.norm(u, axis=1, keepdims=True) + 1e-300
    return u * (radius * rng.random(count) ** (1.0 / max(k, 1)))[:, None]


def _timelike_components(model, rng, count, future=True, max_tilt=0.6):
    n = model.dim
    if model.cone_c is not None:
        max_tilt = min(max_tilt, 0.9 / math.sqrt(model.cone_c))
    comps = np.empty((count, n))
    comps[:, 0] = 1.0 if future else np.where(rng.random(count) < 0.5, 1.0, -1.0)
    comps[:, 1:] = _spatial_ball(rng, count, n - 1, max_tilt)
    return comps


def _future_timelike(model, X, E, comps, margin=0.05):
    """Frame components to vectors; mask of rows that are future timelike (with
    a margin) and inside the validity cone."""
    V = np.einsum("bij,bj->bi", E, comps)
    codes, fut = classify_batch(model, X, V)
    L = model.lagrangian(X, V)
    ok = (codes == -1) & fut & (L < -margin * 0.5 * np.sum(V**2, axis=1)) & model.in_cone(V)
    return V, ok


def _grid_rows(sol, ts):
    idx = np.array([int(np.argmin(np.abs(sol.t - t))) for t in ts])
    return sol.y[idx]  # (G, B, d)


# ---------------------------------------------------------------------------
# concavity


@dataclass
class ConcavityReport:
    grid: np.ndarray
    values: np.ndarray
    worst_deficit: float
    verdict: str
    witness: dict | None
    skipped: list = field(default_factory=list)


def concavity_deficits(ts, vals, valid, tol):
    """Worst midpoint slack over consecutive valid triples and the chord slack
    against the endpoints.  Returns (worst, witness-dict)."""
    ts = np.asarray(ts, float)
    vals = np.asarray(vals, float)
    valid = np.asarray(valid, bool)
    worst = np.inf
    wit = None
    for i in range(1, len(ts) - 1):
        if valid[i - 1] and valid[i] and valid[i + 1]:
            d = vals[i] - 0.5 * (vals[i - 1] + vals[i + 1])
            if d < worst:
                worst, wit = d, {"kind": "triple", "t": ts[i - 1:i + 2].tolist(), "values": vals[i - 1:i + 2].tolist()}
    if valid[0] and valid[-1]:
        t01 = (ts - ts[0]) / (ts[-1] - ts[0])
        chord = vals - ((1 - t01) * vals[0] + t01 * vals[-1])
        chord[~valid] = np.inf
        j = int(np.argmin(chord))
        if chord[j] < worst:
            worst, wit = float(chord[j]), {"kind": "chord", "t": float(ts[j]), "value": float(vals[j]),
                                           "endpoints": [float(vals[0]), float(vals[-1])]}
    if not np.isfinite(worst):
        worst = 0.0
    return float(worst), wit


def _path_is_timelike(model, path):
    if path.constant:
        return True
    X = path.knot_positions()
    V = path.knot_velocities()
    codes, _ = classify_batch(model, X, V)
    return bool(np.all(codes == -1))


def check_concavity_pair(model: SpacetimeModel, eta: GeodesicPath, xi: GeodesicPath, grid_size=33,
                         timelike_only=False, tol=None) -> ConcavityReport:
    """Concavity of ``t -> tau(eta(t), xi(t))`` on a uniform grid of [0, 1]."""
    if grid_size < 3:
        raise BadConfig("grid_size must be >= 3")
    if timelike_only:
        for nm, p in (("eta", eta), ("xi", xi)):
            if not _path_is_timelike(model, p):
                raise NotTimelike(f"{nm} is not a timelike geodesic")
    ts = np.linspace(0.0, 1.0, grid_size)
    A = np.atleast_2d(eta.position(ts))
    B = np.atleast_2d(xi.position(ts))
    if len(A) == 1:
        A = np.repeat(A, grid_size, axis=0)
    if len(B) == 1:
        B = np.repeat(B, grid_size, axis=0)
    tb = time_separation_batch(model, A, B)
    same = np.max(np.abs(A - B), axis=1) <= EQUAL_TOL
    for k in (0, -1):
        if not tb.ok[k] or not (tb.tau[k] > 0 or same[k]):
            raise EndpointConditionViolated(f"endpoint t={ts[k]:g}: need tau > 0 or coincident points")
    vals = np.where(same, 0.0, tb.tau)
    valid = tb.ok | same
    tol = concavity_tolerance(vals) if tol is None else tol
    worst, wit = concavity_deficits(ts, vals, valid, tol)
    verdict = PASS if worst >= -tol else FAIL
    skipped = ts[~valid].tolist()
    return ConcavityReport(ts, vals, worst, verdict, wit, skipped)


def _concavity_candidates(model, rng, count, timelike_only):
    """Initial data (x, v_off, w, xi_velocity) for candidate pairs.

    eta starts at x with velocity w.  xi starts at y = exp_x(v_off) with the
    parallel transport of w along x -> y, optionally perturbed; a few rows use
    a constant eta or constant xi.
    """
    n = model.dim
    _, _, a = _desk(model)
    X = _sample_points(model, rng, count)
    E = _frames(model, X)
    comps = _timelike_components(model, rng, count, future=True, max_tilt=0.5)
    Voff, ok = _future_timelike(model, X, E, comps)
    Voff *= (a * rng.uniform(0.6, 1.0, count))[:, None]
    if timelike_only or model.cone_c is not None:
        wc = _timelike_components(model, rng, count, future=False, max_tilt=0.7)
    else:
        wc = rng.normal(size=(count, n))
        wc /= np.linalg.norm(wc, axis=1, keepdims=True)
    W = np.einsum("bij,bj->bi", E, wc) * (a * rng.uniform(0.3, 0.8, count))[:, None]
    if timelike_only or model.cone_c is not None:
        c, _ = classify_batch(model, X, W)
        ok &= (c == -1) & model.in_cone(W)
    mode = rng.choice(4, size=count, p=[0.5, 0.3, 0.1, 0.1])  # transported, perturbed, const eta, const xi
    if timelike_only:
        mode = np.where(mode >= 2, 0, mode)
    return X, Voff, W, mode, ok


def _run_concavity_scan(model, rng, budget, timelike_only):
    n = model.dim
    ts = np.linspace(0.0, 1.0, budget.grid)
    need = budget.concavity_pairs
    rows = []
    draws = 0
    while len(rows) < need:
        draws += 1
        if draws > 20:
            raise SamplingExhausted("could not draw enough admissible geodesic pairs")
        m = 3 * need
        X, Voff, W, mode, ok = _concavity_candidates(model, rng, m, timelike_only)
        W = np.where((mode == 2)[:, None], 0.0, W)
        idx = np.flatnonzero(ok)
        if len(idx) == 0:
            continue
        X, Voff, W, mode = X[idx], Voff[idx], W[idx], mode[idx]
        # transport w along x -> y = exp_x(v_off)
        Wt = np.where((mode == 2)[:, None], Voff, W)  # dummy nonzero field for constant-eta rows
        sol = parallel_transport_batch(model, X, Voff, Wt, reference="tangent")
        good = sol.status == ode.OK
        Y = sol.y[-1][:, :n]
        PW = sol.y[-1][:, 2 * n:]
        xi_v = PW.copy()
        pert = mode == 1
        if np.any(pert):
            xi_v[pert] += 0.3 * np.linalg.norm(PW[pert], axis=1, keepdims=True) * rng.normal(size=(pert.sum(), n)) / math.sqrt(n)
        xi_v[mode == 2] = 0.0
        xi_v[mode == 3] = 0.0
        eta_v = W.copy()
        eta_v[mode == 2] = 0.0
        if timelike_only or model.cone_c is not None:
            nz = np.any(xi_v != 0, axis=1)
            c, _ = classify_batch(model, Y, np.where(nz[:, None], xi_v, Voff))
            good &= ~nz | ((c == -1) & model.in_cone(np.where(nz[:, None], xi_v, Voff)))
        idx = np.flatnonzero(good)
        X, Y, eta_v, xi_v, Voff, mode = X[idx], Y[idx], eta_v[idx], xi_v[idx], Voff[idx], mode[idx]
        P = len(idx)
        if P == 0:
            continue
        sol = integrate_geodesics(model, np.vstack([X, Y]), np.vstack([eta_v, xi_v]), stops=ts)
        st = sol.status.reshape(2, P)
        alive = np.all(st == ode.OK, axis=0)
        G = _grid_rows(sol, ts)[:, :, :n]  # (grid, 2P, n)
        A, B = G[:, :P], G[:, P:]
        # endpoint condition
        tb = time_separation_batch(model, A[[0, -1]].reshape(-1, n), B[[0, -1]].reshape(-1, n), quadrature=False)
        same = (np.max(np.abs(A[[0, -1]] - B[[0, -1]]), axis=2) <= EQUAL_TOL).reshape(-1)
        endok = (tb.ok & ((tb.tau > 0) | same)).reshape(2, P)
        alive &= np.all(endok, axis=0)
        for p in np.flatnonzero(alive):
            rows.append((X[p], Y[p], eta_v[p], xi_v[p], Voff[p], int(mode[p]), A[:, p], B[:, p]))
            if len(rows) >= need:
                break
    # evaluate all grid pairs in one batch
    A = np.concatenate([r[6] for r in rows])
    B = np.concatenate([r[7] for r in rows])
    tb = time_separation_batch(model, A, B)
    g = len(ts)
    tau = tb.tau.reshape(len(rows), g)
    okm = tb.ok.reshape(len(rows), g)
    same = (np.max(np.abs(A - B), axis=1) <= EQUAL_TOL).reshape(len(rows), g)
    worst = np.inf
    witness = None
    skipped = 0
    for k, r in enumerate(rows):
        vals = np.where(same[k], 0.0, tau[k])
        valid = okm[k] | same[k]
        skipped += int(np.sum(~valid))
        tol = concavity_tolerance(vals)
        d, wit = concavity_deficits(ts, vals, valid, tol)
        score = d / tol
        if worst == np.inf or score < worst:
            worst = score
            witness = {"eta": {"x": r[0], "v": r[2]}, "xi": {"x": r[1], "v": r[3]}, "v_offset": r[4],
                       "mode": ["transported", "perturbed", "constant_eta", "constant_xi"][r[5]],
                       "grid": ts, "values": vals, "deficit": d, "tolerance": tol, "where": wit}
    verdict = FAIL if worst < -1.0 else PASS
    return verdict, float(witness["deficit"]), witness, {"pairs": len(rows), "skipped_points": skipped}


# ---------------------------------------------------------------------------
# variation concavity


def check_variation_concavity(model: SpacetimeModel, alpha, beta, s_grid=17, t_grid=33, h=1e-4, tol=1e-5):
    """sigma(t, s) = geodesic from alpha(s) to beta(s); V = d sigma / ds by
    central differences; checks V timelike and t -> F(V(t, s)) concave."""
    n = model.dim
    ss = np.linspace(h, 1.0 - h, s_grid) if s_grid > 1 else np.array([0.5])
    ts = np.linspace(0.0, 1.0, t_grid)
    S = np.concatenate([ss - h, ss, ss + h])
    Xa = np.array([np.asarray(alpha(s), float) for s in S])
    Xb = np.array([np.asarray(beta(s), float) for s in S])
    tb = time_separation_batch(model, Xa, Xb, quadrature=False)
    if not np.all(tb.ok):
        raise SamplingExhausted("shooting failed for some s")
    if not np.all(tb.tau > 0):
        raise EndpointConditionViolated("alpha(s) << beta(s) fails for some s")
    sol = integrate_geodesics(model, Xa, tb.velocity, stops=ts)
    G = _grid_rows(sol, ts)[:, :, :n].reshape(t_grid, 3, s_grid, n)
    V = (G[:, 2] - G[:, 0]) / (2 * h)  # (t, s, n)
    base = G[:, 1]
    L = model.lagrangian(base.reshape(-1, n), V.reshape(-1, n)).reshape(t_grid, s_grid)
    timelike = L < 0
    worst = np.inf
    witness = None
    if not np.all(timelike):
        i, j = np.argwhere(~timelike)[0]
        witness = {"kind": "V-not-timelike", "t": float(ts[i]), "s": float(ss[j])}
        return Report("variation", FAIL, float("-inf"), witness, None)
    F = np.sqrt(-2 * L)
    for j in range(s_grid):
        d, wit = concavity_deficits(ts, F[:, j], np.ones(t_grid, bool), tol)
        if d < worst:
            worst, witness = d, {"s": float(ss[j]), "where": wit}
    return Report("variation", PASS if worst >= -tol else FAIL, float(worst), witness if worst < -tol else None, None)


# ---------------------------------------------------------------------------
# capsules


@dataclass
class CapsuleSpec:
    gamma: GeodesicPath
    r: float
    side: str = "future"
    pairs: int = 4
    s_grid: int = 5
    t_grid: int = 9
    max_draws: int = 10_000
    witness_pairs: list = field(default_factory=list)  # explicit (z1, z2) to test as well

    def __post_init__(self):
        if not self.r > 0:
            raise BadConfig("capsule threshold r must be positive")
        if self.side not in ("future", "past"):
            raise BadConfig("side must be 'future' or 'past'")
        if not np.all(self.gamma.model.in_chart(self.gamma.knot_positions())):
            raise BadConfig("gamma leaves the chart")


def _gamma_positions(gammas, gidx, T):
    n = gammas[0].dim
    out = np.empty(T.shape + (n,))
    for g in np.unique(gidx):
        rows = gidx == g
        out[rows] = np.atleast_2d(gammas[g].position(T[rows].ravel())).reshape(T[rows].shape + (n,))
    return out


def membership_multi(model, gammas, gidx, Z, t_grid=9, zooms=2):
    """m(z) = max_t tau(gamma(t), z), each row of ``Z`` paired with
    ``gammas[gidx[row]]``: grid search on the gamma parameter, zoom passes
    around the best node and a parabolic polish."""
    Z = np.atleast_2d(Z)
    gidx = np.asarray(gidx, int)
    P = len(Z)
    if P == 0:
        return np.zeros(0)
    lo = np.array([gammas[g].t0 for g in gidx])
    hi = np.array([gammas[g].t1 for g in gidx])
    const = np.array([gammas[g].constant for g in gidx])

    def evaluate(T):
        k = T.shape[1]
        Xg = _gamma_positions(gammas, gidx, T).reshape(-1, Z.shape[1])
        tb = time_separation_batch(model, Xg, np.repeat(Z, k, axis=0), quadrature=False, target=SCAN_BVP_TARGET)
        return tb.tau.reshape(P, k)

    T = lo[:, None] + (hi - lo)[:, None] * np.linspace(0, 1, t_grid)[None]
    vals = evaluate(T)
    k = np.argmax(vals, axis=1)
    best_v = vals[np.arange(P), k]
    best_t = T[np.arange(P), k]
    width = (hi - lo) / (t_grid - 1)
    for _ in range(zooms):
        T = np.clip(best_t[:, None] + width[:, None] * np.linspace(-1, 1, 5)[None], lo[:, None], hi[:, None])
        vals = evaluate(T)
        k = np.argmax(vals, axis=1)
        upd = vals[np.arange(P), k] > best_v
        best_v = np.where(upd, vals[np.arange(P), k], best_v)
        best_t = np.where(upd, T[np.arange(P), k], best_t)
        width = 0.5 * width
    T = np.clip(best_t[:, None] + width[:, None] * np.array([-1.0, 0.0, 1.0])[None], lo[:, None], hi[:, None])
    vals = evaluate(T)
    fm, f0, fp = vals[:, 0], vals[:, 1], vals[:, 2]
    curv = fm - 2 * f0 + fp
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(curv < 0, 0.5 * (fm - fp) / curv, 0.0)
    Tp = np.clip(best_t + np.clip(shift, -1, 1) * width, lo, hi)[:, None]
    vp = evaluate(Tp)[:, 0]
    out = np.maximum.reduce([best_v, vals.max(axis=1), vp])
    return np.where(const, best_v, out)


def membership(model, gamma: GeodesicPath, Z, t_grid=9, zooms=2):
    Z = np.atleast_2d(Z)
    return membership_multi(model, [gamma], np.zeros(len(Z), int), Z, t_grid, zooms)


def _chord_points(model, Z1, Z2, s_grid):
    """Points alpha(s) on the BVP geodesics from Z1 to Z2."""
    n = model.dim
    ss = np.linspace(0.0, 1.0, s_grid)
    bvp = solve_bvp_batch(model, Z1, Z2)
    sol = integrate_geodesics(model, Z1, bvp.velocity, stops=ss)
    ok = bvp.ok & (sol.status == ode.OK)
    pts = _grid_rows(sol, ss)[:, :, :n]  # (s, P, n)
    return ss, pts, ok


def _sample_members(model, gammas, rs, per_capsule, rng, t_grid, max_draws):
    """Rejection sampling of capsule members: z = exp_{gamma(t)}(u) with u
    future timelike and F(u) in [r, 1.5 r], accepted when m(z) >= r."""
    n = model.dim
    C = len(gammas)
    members = [[] for _ in range(C)]
    draws = 0
    while per_capsule > 0 and any(len(m) < per_capsule for m in members):
        need = np.array([max(per_capsule - len(m), 0) for m in members])
        gidx = np.repeat(np.arange(C), 2 * need)
        k = len(gidx)
        draws += k
        if draws > max_draws:
            break
        tt = np.array([rng.uniform(gammas[g].t0, gammas[g].t1) for g in gidx])
        Xg = _gamma_positions(gammas, gidx, tt[:, None])[:, 0]
        E = _frames(model, Xg)
        U, ok = _future_timelike(model, Xg, E, _timelike_components(model, rng, k, True, 0.5))
        gU = model.jet(Xg, U, ((0, 2),))[(0, 2)]
        rr = np.asarray(rs)[gidx]
        U = U / np.sqrt(np.abs(np.einsum("bi,bij,bj->b", U, gU, U)))[:, None] * (rr * rng.uniform(1.0, 1.5, k))[:, None]
        sol = integrate_geodesics(model, Xg[ok], U[ok])
        keep = sol.status == ode.OK
        Z = sol.y[-1][:, :n][keep]
        gz = gidx[ok][keep]
        mem = membership_multi(model, gammas, gz, Z, t_grid)
        for z, g, mv in zip(Z, gz, mem):
            if mv >= rs[g] and len(members[g]) < per_capsule:
                members[g].append(z)
    return members


def _evaluate_capsule_pairs(model, gammas, rs, cap, Z1, Z2, s_grid, t_grid):
    """Membership deficits along the connecting geodesics.  Returns per-pair
    worst interior deficit relative to min(m(z1), m(z2)), the s-grid, the
    membership table and a connected mask."""
    n = model.dim
    ss, pts, ok = _chord_points(model, Z1, Z2, s_grid)
    S, P = pts.shape[:2]
    gidx = np.repeat(np.asarray(cap)[None], S, axis=0).ravel()
    mem = membership_multi(model, gammas, gidx, pts.reshape(-1, n), t_grid).reshape(S, P)
    base = np.minimum(mem[0], mem[-1])
    deficit = mem - base[None]
    deficit[[0, -1]] = np.inf  # endpoints are members by construction
    deficit[:, ~ok] = np.inf
    return deficit, ss, mem, ok


def check_capsule(model: SpacetimeModel, spec: CapsuleSpec, tol=None, rng=None) -> Report:
    """Convexity of K^{+/-}_{>=r}(gamma): member pairs are drawn by rejection
    sampling (plus any explicit ``witness_pairs``) and the connecting geodesic
    is tested for membership on an s-grid.  ``side = "past"`` runs the same
    test for the reverse structure."""
    m = reverse_model(model) if spec.side == "past" else model
    gam = spec.gamma if spec.side == "future" else _reverse_path(spec.gamma, m)
    rng = np.random.default_rng(0) if rng is None else rng
    r = spec.r
    tol = CONC_REL_TOL * (1.0 + r) if tol is None else tol
    pairs = [tuple(np.asarray(z, float) for z in p) for p in spec.witness_pairs]
    if spec.pairs > 0:
        mem = _sample_members(m, [gam], [r], 2 * spec.pairs, rng, spec.t_grid, spec.max_draws)[0]
        if len(mem) < 2 and not pairs:
            raise SamplingExhausted("capsule has too few members in the chart")
        pairs += [(mem[i], mem[i + 1]) for i in range(0, len(mem) - 1, 2)]
    if not pairs:
        raise SamplingExhausted("no member pairs")
    Z1 = np.array([p[0] for p in pairs])
    Z2 = np.array([p[1] for p in pairs])
    deficit, ss, mem, ok = _evaluate_capsule_pairs(m, [gam], [r], np.zeros(len(pairs), int), Z1, Z2,
                                                    spec.s_grid, spec.t_grid)
    if not np.any(ok):
        raise SamplingExhausted("no member pair could be connected")
    j = np.unravel_index(np.argmin(deficit), deficit.shape)
    worst = float(deficit[j])
    verdict = PASS if worst >= -tol else FAIL
    witness = {"z1": Z1[j[1]], "z2": Z2[j[1]], "s": float(ss[j[0]]), "membership": mem[:, j[1]],
               "r": r, "side": spec.side}
    return Report("capsule", verdict, worst, witness if verdict == FAIL else None, None,
                  details={"pairs": len(pairs), "unconnected": int(np.sum(~ok))})


def _reverse_path(path: GeodesicPath, model):
    """The same point set read as a geodesic of the reverse structure:
    parameter reversed and velocity negated."""
    knots = -path.knots[::-1]
    st = path.states[::-1].copy()
    n = path.dim
    st[:, n:] *= -1
    rates = path.rates[::-1].copy()
    rates[:, :n] *= -1
    return GeodesicPath(knots, st, rates, model, path.constant)


def _capsule_configs(model, rng, count, r_scale=0.5):
    """gamma(t) = exp_x(t u) on [-1, 1], unit future timelike v at x and the
    pair z+- = exp_{eta(r)}(+- s W(r)), with W the parallel transport of u/|u|
    along eta(t) = exp_x(t v).  u is spacelike and g_v-orthogonal to v, or
    timelike in the validity cone for cone models."""
    n = model.dim
    _, _, a = _desk(model)
    X = _sample_points(model, rng, count, frac=0.15)
    E = _frames(model, X)
    V, ok = _future_timelike(model, X, E, _timelike_components(model, rng, count, True, 0.4))
    g = model.jet(X, V, ((0, 2),))[(0, 2)]
    V /= np.sqrt(np.abs(np.einsum("bi,bij,bj->b", V, g, V)))[:, None]
    if model.cone_c is None:
        U = np.einsum("bij,bj->bi", E, np.c_[np.zeros(count), rng.normal(size=(count, n - 1))])
        U += np.einsum("bi,bij,bj->b", U, g, V)[:, None] * V
    else:
        U = np.einsum("bij,bj->bi", E, _timelike_components(model, rng, count, True, 0.3))
        ok &= model.in_cone(U)
    Uhat = U / np.sqrt(np.abs(np.einsum("bi,bij,bj->b", U, g, U)))[:, None]
    r = r_scale * a * rng.uniform(0.6, 1.0, count)
    ell = 0.6 * a
    s = ell * rng.uniform(0.3, 0.7, count)
    sol = parallel_transport_batch(model, X, r[:, None] * V, Uhat)
    ok &= sol.status == ode.OK
    Yr = sol.y[-1][:, :n]
    Wr = sol.y[-1][:, 2 * n:]
    return X, V, ell * Uhat, r, s, Yr, Wr, ok


def _run_capsule_scan(model, rng, budget, side):
    """Capsules around sampled geodesics: one boundary pair per capsule from
    the construction above, with threshold r' = min m(z+-), plus
    rejection-sampled member pairs.  All memberships are evaluated in shared
    batches."""
    m = reverse_model(model) if side == "past" else model
    n = model.dim
    X, V, U, r, s, Yr, Wr, ok = _capsule_configs(m, rng, 3 * budget.capsule_pairs)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        raise SamplingExhausted("no admissible capsule configurations")
    sol = integrate_geodesics(m, X[idx], U[idx], span=(-1.0, 1.0), stops=np.linspace(-1, 1, 17))
    P = len(idx)
    zsol = integrate_geodesics(m, np.vstack([Yr[idx], Yr[idx]]),
                               np.vstack([s[idx, None] * Wr[idx], -s[idx, None] * Wr[idx]]))
    zok = np.all(zsol.status.reshape(2, P) == ode.OK, axis=0)
    Zp, Zm = zsol.y[-1][:P, :n], zsol.y[-1][P:, :n]
    keep = [k for k in range(P) if sol.status[k] == ode.OK and zok[k]
            and np.all(m.in_chart(sol.y[:, k, :n]))][: budget.capsule_pairs]
    if not keep:
        raise SamplingExhausted("no capsule could be tested")
    gammas = [GeodesicPath(sol.t, sol.y[:, k], sol.dy[:, k], m) for k in keep]
    C = len(keep)
    Zm, Zp = Zm[keep], Zp[keep]
    cap = np.arange(C)
    mem = membership_multi(m, gammas, np.r_[cap, cap], np.vstack([Zm, Zp]), budget.capsule_t_grid)
    rs = np.minimum(mem[:C], mem[C:])
    live = rs > 0
    per = max(2 * (budget.capsule_random_pairs // C), 0)
    members = _sample_members(m, gammas, np.where(live, rs, 1.0), per, rng, budget.capsule_t_grid,
                              budget.capsule_draws) if per else [[] for _ in range(C)]
    caps, Z1, Z2, kinds = [], [], [], []
    for c in range(C):
        if not live[c]:
            continue
        caps.append(c), Z1.append(Zm[c]), Z2.append(Zp[c]), kinds.append("boundary")
        mc = members[c]
        for i in range(0, len(mc) - 1, 2):
            caps.append(c), Z1.append(mc[i]), Z2.append(mc[i + 1]), kinds.append("sampled")
    deficit, ss, memtab, cok = _evaluate_capsule_pairs(m, gammas, rs, np.array(caps), np.array(Z1), np.array(Z2),
                                                       budget.capsule_s_grid, budget.capsule_t_grid)
    tol = CONC_REL_TOL * (1.0 + rs[np.array(caps)])
    per_pair = deficit.min(axis=0)
    score = np.where(np.isfinite(per_pair), per_pair / tol, np.inf)
    j = int(np.argmin(score))
    c = caps[j]
    p = idx[keep[c]]
    witness = {"gamma": {"x": X[p], "u": U[p], "span": [-1.0, 1.0]}, "r": float(rs[c]), "side": side,
               "z1": Z1[j], "z2": Z2[j], "pair": kinds[j], "s_grid": ss, "membership": memtab[:, j],
               "deficit": float(per_pair[j]), "tolerance": float(tol[j])}
    verdict = FAIL if score[j] < -1.0 else PASS
    return verdict, float(per_pair[j]), witness, {"capsules": int(live.sum()), "pairs": len(caps),
                                                   "unconnected": int(np.sum(~cok))}

# ---------------------------------------------------------------------------
# flag curvature scan, transport, Berwald


def _run_flag_scan(model, rng, budget):
    n = model.dim
    count = budget.flags
    X = _sample_points(model, rng, count, frac=0.8)
    E = _frames(model, X)
    V, ok = _future_timelike(model, X, E, _timelike_components(model, rng, count, True, 0.8), margin=0.01)
    W = rng.normal(size=(count, n))
    X, V, W = X[ok], V[ok], W[ok]
    K, num, den = flag_batch(model, X, V, W)
    scale = np.sum(V**2, axis=1) * np.sum(W**2, axis=1)
    good = np.abs(den) >= 1e-10 * scale
    K = np.where(good, K, np.inf)
    j = int(np.argmin(K))
    worst = float(K[j])
    verdict = PASS if worst >= -FLAG_TOL else FAIL
    return verdict, worst, {"x": X[j], "v": V[j], "w": W[j], "K": worst}, {"flags": int(np.sum(good))}


def check_parallel_L_constancy(model: SpacetimeModel, path: GeodesicPath, V0, tolerance=1e-6) -> Report:
    V0 = np.asarray(V0, float)
    x0 = path.x0
    codes, _ = classify_batch(model, x0, V0)
    if codes[0] != -1:
        raise NotTimelike("V0 must be timelike")
    Vt = parallel_transport(model, path, V0, reference="tangent")
    L = model.lagrangian(path.knot_positions() if not path.constant else np.repeat(x0[None], len(Vt), 0), Vt)
    L0 = float(model.lagrangian(x0, V0)[0])
    dev = float(np.max(np.abs(L - L0)))
    verdict = PASS if dev <= tolerance else FAIL
    wit = None if verdict == PASS else {"x": x0, "v": path.v0, "V0": V0, "deviation": dev}
    return Report("parallel", verdict, -dev, wit, None, details={"max_deviation": dev})


def _run_transport_scan(model, rng, budget, tolerance=1e-6):
    n = model.dim
    count = budget.transport_paths
    _, _, a = _desk(model)
    X = _sample_points(model, rng, 3 * count, frac=0.3)
    E = _frames(model, X)
    if model.cone_c is None:
        Vc = rng.normal(size=(3 * count, n))
        V = np.einsum("bij,bj->bi", E, Vc / np.linalg.norm(Vc, axis=1, keepdims=True)) * a
        okv = np.ones(3 * count, bool)
    else:
        V, okv = _future_timelike(model, X, E, _timelike_components(model, rng, 3 * count, True, 0.45))
        V *= a
    tilt = 0.8 if model.cone_c is None else 0.45
    W, okw = _future_timelike(model, X, E, _timelike_components(model, rng, 3 * count, True, tilt), margin=0.01)
    idx = np.flatnonzero(okv & okw)
    sol = parallel_transport_batch(model, X[idx], V[idx], W[idx], reference="tangent", stops=np.linspace(0, 1, 9))
    # the first `count` candidates whose geodesic stays in the chart
    rows = np.flatnonzero(sol.status == ode.OK)[:count]
    idx = idx[rows]
    good = np.ones(len(rows), bool)
    Xs = sol.y[:, rows, :n]
    Ws = sol.y[:, rows, 2 * n:]
    K, B = Xs.shape[:2]
    L = model.lagrangian(Xs.reshape(-1, n), Ws.reshape(-1, n)).reshape(K, B)
    dev = np.max(np.abs(L - L[:1]), axis=0)
    dev[~good] = -np.inf
    j = int(np.argmax(dev))
    worst = float(dev[j])
    verdict = PASS if worst <= tolerance else FAIL
    return verdict, -worst, {"x": X[idx[j]], "v": V[idx[j]], "V0": W[idx[j]], "deviation": worst}, {"paths": int(good.sum())}


def berwald_scan(model, rng, budget):
    pts = _sample_points(model, rng, budget.berwald_points, frac=0.8)
    res = [berwald_deviation(model, x, 16, int(rng.integers(2**31))) for x in pts]
    devs = np.array([d for d, _ in res])
    scales = np.array([s for _, s in res])
    flags = np.array([is_berwald(d, s) for d, s in res])
    j = int(np.argmax(devs))
    return bool(np.all(flags)), float(devs[j]), {"x": pts[j], "deviation": float(devs[j]), "gamma_scale": float(scales[j])}


def jacobi_norm_concavity(model, rng, count=20, tol=1e-5):
    """F(J(t)) along timelike geodesics for Jacobi fields with timelike initial data."""
    n = model.dim
    _, _, a = _desk(model)
    X = _sample_points(model, rng, 3 * count, frac=0.3)
    E = _frames(model, X)
    V, ok1 = _future_timelike(model, X, E, _timelike_components(model, rng, 3 * count, True, 0.5))
    J0, ok2 = _future_timelike(model, X, E, _timelike_components(model, rng, 3 * count, True, 0.5))
    idx = np.flatnonzero(ok1 & ok2)[:count]
    DJ0 = 0.1 * rng.normal(size=(len(idx), n))
    ts = np.linspace(0, 1, 17)
    sol = jacobi_batch(model, X[idx], a * V[idx], J0[idx], DJ0, stops=ts)
    Y = _grid_rows(sol, ts)
    worst = np.inf
    for b in range(len(idx)):
        Xs, Js = Y[:, b, :n], Y[:, b, 2 * n:3 * n]
        L = model.lagrangian(Xs, Js)
        valid = L < 0
        F = np.sqrt(np.maximum(-2 * L, 0))
        d, _ = concavity_deficits(ts, F, valid, tol)
        worst = min(worst, d)
    return worst


# ---------------------------------------------------------------------------
# theorem matrix


CONDITIONS = ("flag_curvature", "concavity", "timelike_concavity", "future_capsules", "past_capsules")


@dataclass
class MatrixReport:
    model: str
    seed: int
    reports: dict
    berwald: bool | None
    warnings: list

    @property
    def verdicts(self):
        return tuple(self.reports[c].verdict for c in CONDITIONS if c in self.reports)

    @property
    def agree(self):
        return len(set(self.verdicts)) == 1

    def to_json(self, timing=False):
        return {"check": "all", "model": self.model, "seed": self.seed,
                "verdict": PASS if all(v == PASS for v in self.verdicts) else FAIL,
                "agree": self.agree, "berwald": self.berwald, "warnings": list(self.warnings),
                "conditions": {k: r.to_json(timing) for k, r in self.reports.items()}}


def _timed(check, seed, fn):
    t = time.perf_counter()
    verdict, worst, witness, details = fn()
    ms = 1000 * (time.perf_counter() - t)
    return Report(check, verdict, worst, witness if verdict == FAIL else None, seed, ms, details)


def run_check(model, check, seed=0, budget=None) -> Report:
    """One named scan; each draws from its own labelled substream."""
    budget = budget or Budget()
    rng = substream(seed, check)
    if check == "flag_curvature":
        return _timed(check, seed, lambda: _run_flag_scan(model, rng, budget))
    if check == "concavity":
        return _timed(check, seed, lambda: _run_concavity_scan(model, rng, budget, False))
    if check == "timelike_concavity":
        return _timed(check, seed, lambda: _run_concavity_scan(model, rng, budget, True))
    if check == "future_capsules":
        return _timed(check, seed, lambda: _run_capsule_scan(model, rng, budget, "future"))
    if check == "past_capsules":
        return _timed(check, seed, lambda: _run_capsule_scan(model, rng, budget, "past"))
    if check == "parallel":
        return _timed(check, seed, lambda: _run_transport_scan(model, rng, budget))
    if check == "berwald":
        def fn():
            ok, dev, wit, = berwald_scan(model, rng, budget)
            return (PASS if ok else FAIL), -dev, wit, {}
        return _timed(check, seed, fn)
    raise BadConfig(f"unknown check {check!r}")


def verify_theorem_1_1(model: SpacetimeModel, budget=None, seed=0, conditions=CONDITIONS) -> MatrixReport:
    budget = budget or Budget()
    warns = []
    ok, dev, _ = berwald_scan(model, substream(seed, "berwald"), budget)
    if not ok:
        msg = f"{model.name} is not Berwald (deviation {dev:.3g}); the equivalence hypotheses are unmet"
        warnings.warn(msg, stacklevel=2)
        warns.append(msg)
    reports = {c: run_check(model, c, seed, budget) for c in conditions}
    return MatrixReport(model.name, seed, reports, ok, warns)
