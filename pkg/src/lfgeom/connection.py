"""Formal Christoffel symbols, spray, nonlinear and Chern connections.

All batched routines take a jet (see :mod:`lfgeom.models`) and return arrays
with a leading batch axis.  Index conventions:

    gamma[b, i, j, k] = gamma^i_jk        spray[b, i] = G^i
    nonlinear[b, i, j] = N^i_j            chern[b, i, j, k] = Gamma^i_jk

The spray is taken in Euler-Lagrange form
``G^i = g^il (d2L/dv^l dx^k v^k - dL/dx^l)``, which equals ``gamma^i_jk v^j v^k``
and keeps every derivative of L at order <= 4 (at most two in x) once N and its
derivatives are needed for the curvature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KnotGridTooCoarse, OracleFailure, SingularMetric, ZeroReference
from .models import SpacetimeModel, _random_cone_directions

COND_LIMIT = 1e12

SPRAY_KEYS = ((1, 0), (1, 1), (0, 2))
CONNECTION_KEYS = ((1, 0), (1, 1), (0, 2), (1, 2), (0, 3))
FULL_KEYS = ((1, 0), (1, 1), (0, 2), (1, 2), (0, 3), (2, 0), (2, 1), (2, 2), (1, 3), (0, 4))


@dataclass(frozen=True)
class ConnectionEval:
    gamma: np.ndarray
    spray: np.ndarray
    nonlinear: np.ndarray
    chern: np.ndarray
    at: tuple


def _zero_rows(V):
    return ~np.any(V != 0, axis=1)


def spray_from_jet(jet, V):
    g = jet[(0, 2)]
    b = np.einsum("bkl,bk->bl", jet[(1, 1)], V) - jet[(1, 0)]
    return np.linalg.solve(g, b[..., None])[..., 0]


def spray_batch(model: SpacetimeModel, X, V):
    """G^i(x, v) for a batch; rows with v = 0 give 0."""
    X = np.atleast_2d(X)
    V = np.atleast_2d(V)
    zero = _zero_rows(V)
    if np.any(zero):
        out = np.zeros_like(V)
        nz = ~zero
        if np.any(nz):
            out[nz] = spray_batch(model, X[nz], V[nz])
        return out
    with np.errstate(all="ignore"):
        jet = model.jet(X, V, SPRAY_KEYS)
        return spray_from_jet(jet, V)


class SprayDerivatives:
    """First and second derivatives of the spray, built from a full jet.

    Writing ``g G = b`` with ``b_l = L_{x^k v^l} v^k - L_{x^l}`` and
    differentiating twice gives every quantity needed by the connection and
    curvature without derivatives of L beyond order four.
    """

    def __init__(self, jet, V, second=True):
        self.V = V
        g = jet[(0, 2)]
        self.g = g
        self.ginv = np.linalg.inv(g)
        J10, J11, J12 = jet[(1, 0)], jet[(1, 1)], jet[(1, 2)]
        self.C = jet[(0, 3)]  # C[l, m, j] = d g_lm / dv^j
        self.dgx = np.moveaxis(J12, 1, 3)  # dgx[l, m, k] = d g_lm / dx^k
        gi = self.ginv
        b = np.einsum("bkl,bk->bl", J11, V) - J10
        G = np.einsum("bil,bl->bi", gi, b)
        self.G = G
        db_v = np.einsum("bmlj,bm->blj", J12, V) + np.swapaxes(J11, 1, 2) - J11
        rhs = db_v - np.einsum("blmj,bm->blj", self.C, G)
        self.dG_v = np.einsum("bil,blj->bij", gi, rhs)
        self.N = 0.5 * self.dG_v
        if (2, 1) in jet:
            db_x = np.einsum("bmkl,bm->blk", jet[(2, 1)], V) - jet[(2, 0)]
            rhs = db_x - np.einsum("blmk,bm->blk", self.dgx, G)
            self.dG_x = np.einsum("bil,blk->bik", gi, rhs)
        if second:
            J13, J21, J22, J04 = jet[(1, 3)], jet[(2, 1)], jet[(2, 2)], jet[(0, 4)]
            C, dgx, dGv, dGx = self.C, self.dgx, self.dG_v, self.dG_x
            # d2b_vv[l, j, k] = J13[m,l,j,k] v^m + J12[k,l,j] + J12[j,l,k] - J12[l,j,k]
            d2b_vv = (np.einsum("bmljk,bm->bljk", J13, V) + np.transpose(J12, (0, 2, 3, 1))
                      + np.transpose(J12, (0, 2, 1, 3)) - J12)
            rhs = (d2b_vv
                   - np.einsum("blmj,bmk->bljk", C, dGv)
                   - np.einsum("blmk,bmj->bljk", C, dGv)
                   - np.einsum("blmjk,bm->bljk", J04, G))
            self.d2G_vv = np.einsum("bil,bljk->bijk", gi, rhs)
            # d2b_vx[l, j, k] = J22[m,k,l,j] v^m + J21[j,k,l] - J21[l,k,j]
            d2b_vx = (np.einsum("bmklj,bm->bljk", J22, V)
                      + np.transpose(J21, (0, 3, 1, 2))
                      - np.transpose(J21, (0, 1, 3, 2)))
            d2g_vx = np.transpose(J13, (0, 2, 3, 4, 1))  # [l, m, j, k] = d_x^k d_v^l d_v^m d_v^j L
            rhs = (d2b_vx
                   - np.einsum("blmj,bmk->bljk", C, dGx)
                   - np.einsum("blmk,bmj->bljk", dgx, dGv)
                   - np.einsum("blmjk,bm->bljk", d2g_vx, G))
            self.d2G_vx = np.einsum("bil,bljk->bijk", gi, rhs)

    def gamma(self):
        d = self.dgx
        # gamma^i_jk = 1/2 g^il (d_j g_lk + d_k g_jl - d_l g_jk)
        a = np.transpose(d, (0, 1, 3, 2))  # [l, j, k] = d_j g_lk
        b = np.transpose(d, (0, 2, 1, 3))  # [l, j, k] = d_k g_jl  (d[j,l,k])
        c = np.transpose(d, (0, 3, 1, 2))  # [l, j, k] = d_l g_jk
        return 0.5 * np.einsum("bil,bljk->bijk", self.ginv, a + b - c)

    def chern(self, gamma=None):
        if gamma is None:
            gamma = self.gamma()
        C, N = self.C, self.N
        # C[l,k,m] N^m_j + C[j,l,m] N^m_k - C[j,k,m] N^m_l
        t1 = np.einsum("blkm,bmj->bljk", C, N)
        t2 = np.einsum("bjlm,bmk->bljk", C, N)
        t3 = np.einsum("bjkm,bml->bljk", C, N)
        return gamma - 0.5 * np.einsum("bil,bljk->bijk", self.ginv, t1 + t2 - t3)

    def curvature(self):
        """R^i_j(v) = dG^i/dx^j - (dN^i_j/dx^k v^k - dN^i_j/dv^k G^k + N^i_k N^k_j)."""
        V, G, N = self.V, self.G, self.N
        dNdx_v = 0.5 * np.einsum("bijk,bk->bij", self.d2G_vx, V)
        dNdv_G = 0.5 * np.einsum("bijk,bk->bij", self.d2G_vv, G)
        return self.dG_x - (dNdx_v - dNdv_G + np.einsum("bik,bkj->bij", N, N))


def _checked_jet(model, X, V, keys):
    with np.errstate(all="ignore"):
        jet = model.jet(X, V, keys)
    for k, arr in jet.items():
        if not np.all(np.isfinite(arr)):
            raise OracleFailure(f"non-finite partials in block {k}")
    return jet


def _guard_condition(g):
    cond = np.linalg.cond(g)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularMetric(f"fundamental tensor condition number {np.max(cond):.3g} exceeds {COND_LIMIT:g}")


def connection_batch(model, X, V):
    """(gamma, spray, nonlinear, chern) for a batch of nonzero directions."""
    jet = _checked_jet(model, X, V, CONNECTION_KEYS)
    sd = SprayDerivatives(jet, V, second=False)
    gam = sd.gamma()
    return gam, sd.G, sd.N, sd.chern(gam)


def chern_batch(model, X, V):
    return connection_batch(model, X, V)[3]


def connection_eval(model: SpacetimeModel, x, v) -> ConnectionEval:
    x = model.check_point(x)
    v = model.check_vector(v)
    jet = _checked_jet(model, x, v, CONNECTION_KEYS)
    _guard_condition(jet[(0, 2)])
    sd = SprayDerivatives(jet, v[None], second=False)
    gam = sd.gamma()
    return ConnectionEval(gamma=gam[0], spray=sd.G[0], nonlinear=sd.N[0], chern=sd.chern(gam)[0], at=(x, v))


# ---------------------------------------------------------------------------
# covariant derivative along a curve


def _field_values_and_rates(field, knots):
    if callable(field):
        h = 1e-5 * max(1.0, float(np.max(np.abs(knots))))
        Y = np.array([np.asarray(field(t), float) for t in knots])
        Yp = np.array([np.asarray(field(t + h), float) for t in knots])
        Ym = np.array([np.asarray(field(t - h), float) for t in knots])
        Yp2 = np.array([np.asarray(field(t + 2 * h), float) for t in knots])
        Ym2 = np.array([np.asarray(field(t - 2 * h), float) for t in knots])
        dY = (8 * (Yp - Ym) - (Yp2 - Ym2)) / (12 * h)
        return Y, dY
    from scipy.interpolate import CubicSpline

    Y = np.asarray(field, float)
    if len(knots) < 5 or len(Y) != len(knots):
        raise KnotGridTooCoarse("need field samples on at least 5 knots")
    spacing = np.diff(knots)
    if np.max(spacing) > 0.25 * (knots[-1] - knots[0]):
        raise KnotGridTooCoarse("knot spacing too coarse to differentiate the field")
    return Y, CubicSpline(knots, Y, axis=0)(knots, 1)


def covariant_derivative(model: SpacetimeModel, curve, field, reference="tangent", knots=None):
    """``D^w_{curve'} Y`` on the knot grid of ``curve``.

    ``field`` is either a callable ``t -> Y(t)`` or an array of samples on the
    knots.  ``reference`` is ``"tangent"`` (w = curve velocity), ``"field"``
    (w = Y) or a fixed nonzero vector.
    """
    t = np.asarray(curve.knots if knots is None else knots, float)
    X = np.array([curve.position(s) for s in t])
    Xd = np.array([curve.velocity(s) for s in t])
    Y, dY = _field_values_and_rates(field, t)
    if isinstance(reference, str):
        if reference == "tangent":
            W = Xd
        elif reference == "field":
            W = Y
        else:
            raise ValueError(f"unknown reference policy {reference!r}")
    else:
        W = np.broadcast_to(np.asarray(reference, float), X.shape)
    if np.any(~np.any(W != 0, axis=1)):
        raise ZeroReference("reference vector vanishes somewhere along the curve")
    Gam = chern_batch(model, X, W)
    return dY + np.einsum("bijk,bj,bk->bi", Gam, Xd, Y)


# ---------------------------------------------------------------------------
# Berwald detector

BERWALD_REL_TOL = 1e-7


def sample_cone_directions(model, rng, count):
    """Uniform on the Euclidean unit sphere, restricted to the validity cone
    (or to non-null directions when no cone is declared)."""
    n = model.dim
    out = []
    tries = 0
    while sum(len(o) for o in out) < count:
        tries += 1
        if tries > 1000:
            out.append(_random_cone_directions(model, rng, count))
            break
        U = rng.normal(size=(4 * count, n))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        ok = model.in_cone(U)
        if model.cone_c is None:
            ok &= np.abs(U[:, 0] ** 2 - np.sum(U[:, 1:] ** 2, axis=1)) > 0.05
        out.append(U[ok])
    return np.concatenate(out)[:count]


def berwald_deviation(model: SpacetimeModel, x, sample_count=16, seed=0):
    """max over sampled direction pairs of ||Gamma(v1) - Gamma(v2)||_inf at x."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    x = model.check_point(x)
    rng = np.random.default_rng(seed)
    V = sample_cone_directions(model, rng, sample_count)
    X = np.repeat(x[None], len(V), axis=0)
    jet = _checked_jet(model, X, V, CONNECTION_KEYS)
    _guard_condition(jet[(0, 2)])
    sd = SprayDerivatives(jet, V, second=False)
    Gam = sd.chern()
    spread = Gam.max(axis=0) - Gam.min(axis=0)
    return float(np.max(spread)), float(np.max(np.abs(Gam)))


def is_berwald(deviation, gamma_scale):
    return deviation <= BERWALD_REL_TOL * (1.0 + gamma_scale)
