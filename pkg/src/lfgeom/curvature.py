"""Curvature operator R_v, flag curvature and Jacobi fields."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ode
from .connection import FULL_KEYS, SprayDerivatives, _checked_jet, _guard_condition
from .errors import DegenerateFlag, LeftTimelikeCone, NotTimelike, SignatureViolation, ZeroVector
from .fundamental import classify_batch
from .geodesics import ATOL, MAX_STEP, RTOL, GeodesicPath, _make_guard, _raise_status
from .models import SpacetimeModel

DEGENERATE_TOL = 1e-10
STENCIL_H = 1e-3


def curvature_batch(model, X, V):
    """(R, g) with ``R[b, i, j] = R^i_j(V[b])`` at ``X[b]`` and ``g = g_V``."""
    jet = _checked_jet(model, X, V, FULL_KEYS + ((0, 0),))
    sd = SprayDerivatives(jet, V)
    return sd.curvature(), jet[(0, 2)]


def curvature_R(model: SpacetimeModel, x, v, w):
    x = model.check_point(x)
    v = model.check_vector(v)
    w = np.asarray(w, float)
    jet = _checked_jet(model, x, v, FULL_KEYS)
    _guard_condition(jet[(0, 2)])
    R = SprayDerivatives(jet, v[None]).curvature()[0]
    return R @ w


def flag_batch(model, X, V, W):
    """Batched flag curvature; returns (K, numerator, denominator).  No checks."""
    R, g = curvature_batch(model, X, V)
    RW = np.einsum("bij,bj->bi", R, W)
    num = np.einsum("bi,bij,bj->b", RW, g, W)
    gvv = np.einsum("bi,bij,bj->b", V, g, V)
    gww = np.einsum("bi,bij,bj->b", W, g, W)
    gvw = np.einsum("bi,bij,bj->b", V, g, W)
    den = gvv * gww - gvw**2
    with np.errstate(divide="ignore", invalid="ignore"):
        K = num / den
    return K, num, den


def flag_curvature(model: SpacetimeModel, x, v, w) -> float:
    x = model.check_point(x)
    v = model.check_vector(v)
    w = np.asarray(w, float).reshape(-1)
    if not np.any(w):
        raise ZeroVector("flag direction w is zero")
    codes, fut = classify_batch(model, x, v)
    if not (codes[0] == -1 and fut[0]):
        raise NotTimelike("flagpole must be future-directed timelike")
    K, num, den = flag_batch(model, x[None], v[None], w[None])
    scale = float(np.sum(v**2) * np.sum(w**2))
    if abs(den[0]) < DEGENERATE_TOL * scale:
        raise DegenerateFlag("w is (numerically) parallel to v")
    if den[0] >= 0:
        raise SignatureViolation("flag Gram determinant must be negative for a timelike flagpole")
    return float(K[0])


# ---------------------------------------------------------------------------
# Jacobi fields


@dataclass(frozen=True)
class JacobiSolution:
    along: GeodesicPath
    J: np.ndarray  # (K, n) on along.knots
    DJ: np.ndarray


def _jacobi_rhs(model):
    n = model.dim

    def f(t, Y):
        X, V, J, DJ = Y[:, :n], Y[:, n:2 * n], Y[:, 2 * n:3 * n], Y[:, 3 * n:]
        jet = model.jet(X, V, FULL_KEYS)
        sd = SprayDerivatives(jet, V)
        Gam = sd.chern()
        R = sd.curvature()
        GvJ = np.einsum("bijk,bj,bk->bi", Gam, V, J)
        GvD = np.einsum("bijk,bj,bk->bi", Gam, V, DJ)
        return np.concatenate([V, -sd.G, DJ - GvJ, -np.einsum("bij,bj->bi", R, J) - GvD], axis=1)

    return f


def jacobi_batch(model, X, V, J0, DJ0, span=(0.0, 1.0), stops=None):
    """Integrate geodesics and Jacobi data jointly.  Rows ``(x, v, J, DJ)``,
    with ``DJ`` the covariant derivative referenced to the geodesic velocity."""
    Y0 = np.concatenate([np.atleast_2d(a).astype(float) for a in (X, V, J0, DJ0)], axis=1)
    guard = _make_guard(model)
    return ode.integrate(_jacobi_rhs(model), Y0, span[0], span[1], stops=stops, guard=guard,
                         rtol=RTOL, atol=ATOL, max_step=MAX_STEP)


def jacobi_propagate(model: SpacetimeModel, along: GeodesicPath, J0, DJ0) -> JacobiSolution:
    if along.constant or not np.any(along.v0):
        raise ValueError("Jacobi propagation needs a nonconstant geodesic")
    n = model.dim
    knots = along.knots
    sol = jacobi_batch(model, along.x0, along.v0, J0, DJ0, (knots[0], knots[-1]), stops=knots)
    if sol.status[0] != ode.OK:
        _raise_status(sol.status[0], "Jacobi propagation", sol.t_fail[0])
    idx = [int(np.argmin(np.abs(sol.t - k))) for k in knots]
    Y = sol.y[idx, 0]
    return JacobiSolution(along, Y[:, 2 * n:3 * n], Y[:, 3 * n:])


def jacobi_F_second_derivative(model: SpacetimeModel, x, v, w, h=STENCIL_H) -> float:
    """d^2/dt^2 F(J(t)) at t = 0 for the Jacobi field along the geodesic with
    initial velocity ``w`` and data ``J(0) = v``, ``DJ(0) = 0``."""
    x = model.check_point(x)
    v = model.check_vector(v)
    w = model.check_vector(w)
    n = model.dim
    for vec, nm in ((v, "v"), (w, "w")):
        codes, fut = classify_batch(model, x, vec)
        if codes[0] != -1:
            raise NotTimelike(f"{nm} must be timelike")
    sv = np.linalg.svd(np.stack([v, w]), compute_uv=False)
    if sv[1] < 1e-8 * sv[0]:
        raise DegenerateFlag("v and w must be linearly independent")
    ts = h * np.arange(5)
    sol = jacobi_batch(model, x, w, v, np.zeros(n), (0.0, ts[-1]), stops=ts)
    if sol.status[0] != ode.OK:
        _raise_status(sol.status[0], "Jacobi propagation", sol.t_fail[0])
    idx = [int(np.argmin(np.abs(sol.t - k))) for k in ts]
    Y = sol.y[idx, 0]
    Xs, Js = Y[:, :n], Y[:, 2 * n:3 * n]
    L = model.lagrangian(Xs, Js)
    if np.any(L >= 0) or (model.cone_c is not None and not np.all(model.in_cone(Js))):
        raise LeftTimelikeCone("J left the timelike cone inside the stencil")
    F = np.sqrt(-2 * L)
    return float((35 * F[0] - 104 * F[1] + 114 * F[2] - 56 * F[3] + 11 * F[4]) / (12 * h * h))


def jacobi_contract_value(model, x, v, w) -> float:
    """``g_v(v, R_w(v)) / F(v)``, the closed-form value of the second derivative."""
    x = np.asarray(x, float)
    R_w, _ = curvature_batch(model, x[None], np.asarray(w, float)[None])
    jet = model.jet(x, v, ((0, 0), (0, 2)))
    g = jet[(0, 2)][0]
    F = math.sqrt(-2 * float(jet[(0, 0)][0]))
    return float(v @ g @ (R_w[0] @ v)) / F
