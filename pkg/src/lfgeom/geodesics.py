"""Geodesics, exponential map, two-point shooting, parallel transport and the
chart-local time separation.

Geodesics solve ``x'' + G(x, x') = 0`` with the spray of
:mod:`lfgeom.connection`.  Everything is batched: a single call integrates many
trajectories on one shared step sequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ode
from .connection import CONNECTION_KEYS, SPRAY_KEYS, SprayDerivatives, spray_from_jet
from .errors import (
    GeometryError,
    LeftChart,
    LeftValidityCone,
    NoConvergence,
    StiffFailure,
    ZeroReference,
)
from .fundamental import LIGHTLIKE_BAND, future_pairing
from .models import SpacetimeModel

RTOL = 1e-10
ATOL = 1e-10
MAX_STEP = 1 / 32
BVP_MAX_ITER = 50
BVP_TARGET = 1e-12
BVP_ACCEPT = 1e-9

# Gauss-Legendre nodes on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

_STATUS_ERR = {ode.LEFT_CHART: LeftChart, ode.LEFT_CONE: LeftValidityCone, ode.STIFF: StiffFailure}


def _raise_status(code, what="geodesic", t=None):
    exc = _STATUS_ERR.get(int(code), GeometryError)
    where = "" if t is None or not np.isfinite(t) else f" at t={t:.6g}"
    raise exc(f"{what} failed ({exc.__name__}){where}")


@dataclass(frozen=True)
class GeodesicPath:
    """Dense geodesic.  ``states`` rows are ``(x, v)``; ``rates`` their
    parameter derivatives ``(v, -G)``; both on ``knots``."""

    knots: np.ndarray
    states: np.ndarray
    rates: np.ndarray
    model: SpacetimeModel = field(repr=False)
    constant: bool = False

    @property
    def dim(self):
        return self.model.dim

    @property
    def t0(self):
        return float(self.knots[0])

    @property
    def t1(self):
        return float(self.knots[-1])

    def state(self, t):
        if self.constant:
            t = np.atleast_1d(np.asarray(t, float))
            return np.repeat(self.states[:1], len(t), axis=0)
        return ode.hermite(t, self.knots, self.states, self.rates)[0]

    def position(self, t):
        out = self.state(t)[:, : self.dim]
        return out[0] if np.ndim(t) == 0 else out

    def velocity(self, t):
        out = self.state(t)[:, self.dim:]
        return out[0] if np.ndim(t) == 0 else out

    def endpoint(self):
        return self.states[-1, : self.dim].copy()

    @property
    def x0(self):
        return self.states[0, : self.dim].copy()

    @property
    def v0(self):
        return self.states[0, self.dim:].copy()

    def knot_positions(self):
        return self.states[:, : self.dim]

    def knot_velocities(self):
        return self.states[:, self.dim:]


def constant_path(model, x, span=(0.0, 1.0)):
    x = np.asarray(x, float)
    st = np.concatenate([x, np.zeros_like(x)])
    states = np.stack([st, st])
    return GeodesicPath(np.array(span, float), states, np.zeros_like(states), model, constant=True)


# ---------------------------------------------------------------------------
# batched right-hand sides and guards


def _spray_rows(model, X, V):
    out = np.zeros_like(V)
    nz = np.any(V != 0, axis=1)
    if np.any(nz):
        jet = model.jet(X[nz], V[nz], SPRAY_KEYS)
        out[nz] = spray_from_jet(jet, V[nz])
    return out


def _geodesic_rhs(model):
    n = model.dim

    def f(t, Y):
        X, V = Y[:, :n], Y[:, n:]
        return np.concatenate([V, -_spray_rows(model, X, V)], axis=1)

    return f


def _make_guard(model, vel_slice=None, chart_slice=None):
    n = model.dim
    cs = chart_slice if chart_slice is not None else slice(0, n)
    vs = vel_slice if vel_slice is not None else slice(n, 2 * n)
    use_cone = model.cone_c is not None

    def guard(t, Y):
        code = np.zeros(len(Y), dtype=int)
        code[~model.in_chart(Y[:, cs])] = ode.LEFT_CHART
        if use_cone and vs is not False:
            V = Y[:, vs]
            nz = np.any(V != 0, axis=1)
            bad = nz & ~model.in_cone(V)
            code[(code == 0) & bad] = ode.LEFT_CONE
        return code

    return guard


def integrate_geodesics(model: SpacetimeModel, X, V, span=(0.0, 1.0), stops=None, max_step=MAX_STEP):
    """Batched geodesic integration.  Returns the raw :class:`ode.BatchSolution`
    with state rows ``(x, v)``.

    The initial data is taken at ``t = 0`` when ``span`` straddles zero (the
    solution is then integrated in both directions), otherwise at ``span[0]``.
    """
    X = np.atleast_2d(np.asarray(X, float))
    V = np.atleast_2d(np.asarray(V, float))
    Y0 = np.concatenate([X, V], axis=1)
    f, guard = _geodesic_rhs(model), _make_guard(model)
    t0, t1 = float(span[0]), float(span[1])
    if t0 < 0.0 < t1:
        back = ode.integrate(f, Y0, 0.0, t0, stops=stops, guard=guard, rtol=RTOL, atol=ATOL, max_step=max_step)
        fwd = ode.integrate(f, Y0, 0.0, t1, stops=stops, guard=guard, rtol=RTOL, atol=ATOL, max_step=max_step)
        status = np.maximum(back.status, fwd.status)
        t_fail = np.where(np.isnan(back.t_fail), fwd.t_fail, back.t_fail)
        return ode.BatchSolution(np.concatenate([back.t[::-1], fwd.t[1:]]),
                                 np.concatenate([back.y[::-1], fwd.y[1:]]),
                                 np.concatenate([back.dy[::-1], fwd.dy[1:]]), status, t_fail)
    return ode.integrate(f, Y0, t0, t1, stops=stops, guard=guard, rtol=RTOL, atol=ATOL, max_step=max_step)


def _path_from_batch(model, sol, row):
    return GeodesicPath(sol.t, sol.y[:, row], sol.dy[:, row], model)


def paths_from_batch(model, sol):
    return [_path_from_batch(model, sol, i) for i in range(sol.y.shape[1])]


def integrate_geodesic(model: SpacetimeModel, x, v, span=(0.0, 1.0), stops=None) -> GeodesicPath:
    x = model.check_point(x)
    v = model.check_vector(v, allow_zero=True)
    if not np.any(v):
        return constant_path(model, x, span)
    sol = integrate_geodesics(model, x, v, span, stops=stops)
    if sol.status[0] != ode.OK:
        _raise_status(sol.status[0], "geodesic", sol.t_fail[0])
    return _path_from_batch(model, sol, 0)


def exp_batch(model, X, V):
    """Endpoints at t = 1 plus per-row status codes."""
    sol = integrate_geodesics(model, X, V, (0.0, 1.0))
    n = model.dim
    return sol.y[-1][:, :n], sol.status


def exp_map(model: SpacetimeModel, x, v):
    x = model.check_point(x)
    v = model.check_vector(v, allow_zero=True)
    if not np.any(v):
        return x.copy()
    end, status = exp_batch(model, x[None], v[None])
    if status[0] != ode.OK:
        _raise_status(status[0], "exponential map")
    return end[0]


# ---------------------------------------------------------------------------
# shooting


@dataclass
class BVPResult:
    velocity: np.ndarray  # (B, n)
    residual: np.ndarray  # (B,) max-norm endpoint residual
    ok: np.ndarray  # (B,) bool
    iterations: np.ndarray


def solve_bvp_batch(model: SpacetimeModel, X, Y, V0=None, max_iter=BVP_MAX_ITER, accept=BVP_ACCEPT,
                    target=BVP_TARGET):
    """Damped Newton shooting for ``exp_X(v) = Y`` on a batch of pairs.

    The finite-difference Jacobian columns are integrated in the same batch as
    the base trajectory.  Pairs with ``X == Y`` return ``v = 0``.  Pairs whose
    shooting leaves the chart or the validity cone are reported with
    ``ok = False``.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    P, n = X.shape
    v = (Y - X).copy() if V0 is None else np.array(V0, float)
    res = np.full(P, np.inf)
    ok = np.zeros(P, dtype=bool)
    iters = np.zeros(P, dtype=int)
    same = np.all(X == Y, axis=1)
    v[same] = 0.0
    res[same] = 0.0
    ok[same] = True
    active = ~same
    lam = np.ones(P)
    r_cur = np.zeros((P, n))
    J_cur = np.zeros((P, n, n))
    have = np.zeros(P, dtype=bool)  # r_cur/J_cur valid at v
    cand = v.copy()
    eye = np.eye(n)
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        vc = cand[idx]
        h = 1e-6 * (1.0 + np.max(np.abs(vc), axis=1))
        Vb = np.concatenate([vc[:, None, :], vc[:, None, :] + h[:, None, None] * eye[None]], axis=1)
        Xb = np.repeat(X[idx][:, None, :], n + 1, axis=1)
        end, status = exp_batch(model, Xb.reshape(-1, n), Vb.reshape(-1, n))
        end = end.reshape(len(idx), n + 1, n)
        good = np.all(status.reshape(len(idx), n + 1) == ode.OK, axis=1)
        r_new = end[:, 0] - Y[idx]
        J_new = np.transpose((end[:, 1:] - end[:, :1]) / h[:, None, None], (0, 2, 1))
        nr_new = np.where(good, np.max(np.abs(r_new), axis=1), np.inf)
        for a, p in enumerate(idx):
            iters[p] = it
            improved = good[a] and (not have[p] or nr_new[a] < res[p])
            if improved:
                v[p] = cand[p]
                r_cur[p] = r_new[a]
                J_cur[p] = J_new[a]
                res[p] = nr_new[a]
                have[p] = True
                lam[p] = min(1.0, 2 * lam[p])
            elif have[p]:
                if res[p] <= accept:
                    active[p] = False
                    continue
                lam[p] *= 0.5
            else:
                # initial guess unusable: shrink towards x
                lam[p] *= 0.5
                cand[p] = lam[p] * (Y[p] - X[p])
                if lam[p] < 1e-6:
                    active[p] = False
                continue
            if res[p] <= target or (lam[p] < 1e-8):
                active[p] = False
                continue
            try:
                step = np.linalg.solve(J_cur[p], r_cur[p])
            except np.linalg.LinAlgError:
                active[p] = False
                continue
            cand[p] = v[p] - lam[p] * step
    ok = res <= accept
    return BVPResult(v, res, ok, iters)


def solve_bvp(model: SpacetimeModel, x, y):
    x = model.check_point(x)
    y = model.check_point(y)
    r = solve_bvp_batch(model, x[None], y[None])
    if not r.ok[0]:
        raise NoConvergence(f"shooting from {x.tolist()} to {y.tolist()} stalled (residual {r.residual[0]:.3g})")
    v = r.velocity[0]
    if not np.any(v):
        return v, constant_path(model, x)
    return v, integrate_geodesic(model, x, v)


# ---------------------------------------------------------------------------
# time separation


def _future_causal(model, X, V):
    L = model.lagrangian(X, V)
    band = LIGHTLIKE_BAND * np.sum(V**2, axis=1)
    return (L <= band) & (future_pairing(model, X, V) < 0), L


def path_length(path: GeodesicPath):
    """Gauss-Legendre quadrature of F(velocity) over the knot intervals."""
    if path.constant:
        return 0.0
    T = path.knots
    a, b = T[:-1], T[1:]
    ts = (a[:, None] + (b - a)[:, None] * _GL_X[None]).ravel()
    w = ((b - a)[:, None] * _GL_W[None]).ravel()
    st = path.state(ts)
    n = path.dim
    L = path.model.lagrangian(st[:, :n], st[:, n:])
    return float(np.sum(w * np.sqrt(np.maximum(-2 * L, 0.0))))


def _lengths_batch(model, sol, rows):
    T = sol.t
    a, b = T[:-1], T[1:]
    ts = (a[:, None] + (b - a)[:, None] * _GL_X[None]).ravel()
    w = ((b - a)[:, None] * _GL_W[None]).ravel()
    val, _ = ode.hermite(ts, T, sol.y[:, rows], sol.dy[:, rows])  # (Q, R, 2n)
    n = model.dim
    Q, R = val.shape[:2]
    flat = val.reshape(Q * R, 2 * n)
    L = model.lagrangian(flat[:, :n], flat[:, n:]).reshape(Q, R)
    return np.einsum("q,qr->r", w, np.sqrt(np.maximum(-2 * L, 0.0)))


@dataclass
class TauBatch:
    tau: np.ndarray
    ok: np.ndarray  # BVP converged and the connecting geodesic stayed valid
    velocity: np.ndarray
    causal: np.ndarray  # future-directed causal connecting geodesic


def time_separation_batch(model: SpacetimeModel, X, Y, quadrature=True, target=BVP_TARGET) -> TauBatch:
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    P = len(X)
    bvp = solve_bvp_batch(model, X, Y, target=target)
    tau = np.zeros(P)
    causal = np.zeros(P, dtype=bool)
    nz = bvp.ok & np.any(bvp.velocity != 0, axis=1)
    if np.any(nz):
        fut, L = _future_causal(model, X[nz], bvp.velocity[nz])
        causal[np.flatnonzero(nz)[fut]] = True
    rows = np.flatnonzero(causal)
    if len(rows):
        if quadrature:
            sol = integrate_geodesics(model, X[rows], bvp.velocity[rows])
            tau[rows] = _lengths_batch(model, sol, np.arange(len(rows)))
        else:
            L = model.lagrangian(X[rows], bvp.velocity[rows])
            tau[rows] = np.sqrt(np.maximum(-2 * L, 0.0))
    return TauBatch(tau, bvp.ok, bvp.velocity, causal)


def time_separation(model: SpacetimeModel, x, y) -> float:
    x = model.check_point(x)
    y = model.check_point(y)
    tb = time_separation_batch(model, x[None], y[None])
    if not tb.ok[0]:
        raise NoConvergence(f"no connecting geodesic from {x.tolist()} to {y.tolist()}")
    return float(tb.tau[0])


# ---------------------------------------------------------------------------
# parallel transport


def _chern_rows(model, X, W):
    jet = model.jet(X, W, CONNECTION_KEYS)
    return SprayDerivatives(jet, W, second=False).chern()


def parallel_transport_batch(model, X0, V0, W0, reference="tangent", fixed=None, span=(0.0, 1.0), stops=None):
    """Transport ``W0`` along the geodesics from ``(X0, V0)``; the geodesic is
    re-integrated jointly with the field.  Returns the raw batch solution with
    rows ``(x, v, W)``."""
    n = model.dim
    X0 = np.atleast_2d(np.asarray(X0, float))
    V0 = np.atleast_2d(np.asarray(V0, float))
    W0 = np.atleast_2d(np.asarray(W0, float))

    def f(t, Y):
        X, V, W = Y[:, :n], Y[:, n:2 * n], Y[:, 2 * n:]
        if reference == "tangent":
            R = V
        elif reference == "field":
            R = W
        else:
            R = np.broadcast_to(fixed, V.shape)
        Gam = _chern_rows(model, X, R)
        dW = -np.einsum("bijk,bj,bk->bi", Gam, V, W)
        return np.concatenate([V, -_spray_rows(model, X, V), dW], axis=1)

    vs = slice(n, 2 * n) if reference == "tangent" else (slice(2 * n, 3 * n) if reference == "field" else False)
    guard = _make_guard(model, vel_slice=vs)
    Y0 = np.concatenate([X0, V0, W0], axis=1)
    return ode.integrate(f, Y0, span[0], span[1], stops=stops, guard=guard, rtol=RTOL, atol=ATOL, max_step=MAX_STEP)


def parallel_transport(model: SpacetimeModel, path, V0, reference="tangent"):
    """Parallel field along ``path`` sampled on ``path.knots``.

    ``path`` is a :class:`GeodesicPath` or any object with ``knots``,
    ``position(t)`` and ``velocity(t)`` (a C^1 curve).  ``reference`` is
    ``"tangent"``, ``"field"`` or a fixed nonzero vector.
    """
    V0 = np.asarray(V0, float)
    n = model.dim
    fixed = None
    if not isinstance(reference, str):
        fixed = np.asarray(reference, float)
        if not np.any(fixed):
            raise ZeroReference("fixed reference vector is zero")
        model.check_vector(fixed)
    elif reference not in ("tangent", "field"):
        raise ValueError(f"unknown reference policy {reference!r}")
    if reference == "field" and not np.any(V0):
        raise ZeroReference("field reference requires a nonzero initial vector")
    knots = np.asarray(path.knots, float)
    if isinstance(path, GeodesicPath):
        if path.constant:
            return np.repeat(V0[None], len(knots), axis=0)
        if reference == "tangent" and not np.any(path.v0):
            raise ZeroReference("tangent reference on a constant curve")
        sol = parallel_transport_batch(model, path.x0, path.v0, V0, reference, fixed,
                                       span=(knots[0], knots[-1]), stops=knots)
        if sol.status[0] != ode.OK:
            _raise_status(sol.status[0], "parallel transport", sol.t_fail[0])
        idx = np.searchsorted(sol.t, knots) if knots[-1] >= knots[0] else None
        if idx is None:
            idx = [int(np.argmin(np.abs(sol.t - k))) for k in knots]
        return sol.y[idx, 0, 2 * n:]

    def f(t, Y):
        x = np.asarray(path.position(t), float).reshape(1, n)
        xd = np.asarray(path.velocity(t), float).reshape(1, n)
        if reference == "tangent":
            R = xd
        elif reference == "field":
            R = Y
        else:
            R = fixed[None]
        if not np.any(R):
            raise ZeroReference(f"reference vanishes at t={t:.6g}")
        Gam = _chern_rows(model, x, R)
        return -np.einsum("bijk,bj,bk->bi", Gam, xd, Y)

    sol = ode.integrate(f, V0[None], knots[0], knots[-1], stops=knots, rtol=RTOL, atol=ATOL, max_step=MAX_STEP)
    if sol.status[0] != ode.OK:
        _raise_status(sol.status[0], "parallel transport", sol.t_fail[0])
    idx = [int(np.argmin(np.abs(sol.t - k))) for k in knots]
    return sol.y[idx, 0]
