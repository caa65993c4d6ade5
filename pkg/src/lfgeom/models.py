"""Chart-local Lorentz-Finsler models and the built-in zoo.

A model is a Lagrangian ``L(x, v)`` on a box chart together with a derivative
oracle.  The oracle is exposed as a *jet*: for a batch of base points ``X`` of
shape ``(B, n)`` and directions ``V`` of shape ``(B, n)`` the model returns the
requested blocks of mixed partials

    jet[(a, b)][k, i1..ia, j1..jb] = d^a/dx^i1..dx^ia d^b/dv^j1..dv^jb L(X[k], V[k])

with ``a <= 2`` and ``a + b <= 4``.  Everything downstream (fundamental tensor,
spray, Chern connection, curvature) is assembled from these blocks.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable

import numpy as np

from .errors import (
    InvalidParams,
    OracleFailure,
    OrderExceeded,
    OutsideValidityCone,
    PointOutsideChart,
    UnknownModel,
    ZeroVector,
)

MAX_ORDER = 4
MAX_X_ORDER = 2
ALL_KEYS = tuple((a, b) for a in range(MAX_X_ORDER + 1) for b in range(MAX_ORDER + 1) if a + b <= MAX_ORDER)
EPS_BOUND = 0.05

ZOO_NAMES = ("minkowski", "de_sitter", "product_hyperbolic", "product_sphere", "flat_finsler", "perturbed_finsler")


def _as_batch(A, n):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"expected array with trailing dimension {n}, got shape {A.shape}")
    return A


class SpacetimeModel:
    """Base class.  Subclasses implement :meth:`_jet` on flat batches."""

    quadratic = False

    def __init__(self, name, dim, chart_min, chart_max, cone_c=None, params=None, time_sign=1.0):
        if int(dim) != dim or dim < 2:
            raise InvalidParams(f"dim must be an integer >= 2, got {dim!r}")
        self.name = name
        self.dim = int(dim)
        lo = np.broadcast_to(np.asarray(chart_min, dtype=float), (self.dim,)).copy()
        hi = np.broadcast_to(np.asarray(chart_max, dtype=float), (self.dim,)).copy()
        if not np.all(hi > lo):
            raise InvalidParams("chart_max must exceed chart_min on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.chart_min = lo
        self.chart_max = hi
        if cone_c is not None and not cone_c > 0:
            raise InvalidParams("cone_c must be positive")
        self.cone_c = None if cone_c is None else float(cone_c)
        self.params = dict(params or {})
        self.time_sign = float(time_sign)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim}, params={self.params})"

    # -- oracle ---------------------------------------------------------
    def _jet(self, X, V, keys):
        raise NotImplementedError

    def jet(self, X, V, keys=ALL_KEYS):
        keys = tuple(keys)
        for a, b in keys:
            if a > MAX_X_ORDER or a + b > MAX_ORDER:
                raise OrderExceeded(f"partial of order (x={a}, v={b}) exceeds the oracle limit")
        X = _as_batch(X, self.dim)
        V = _as_batch(V, self.dim)
        return self._jet(X, V, keys)

    def lagrangian(self, X, V):
        return self.jet(X, V, ((0, 0),))[(0, 0)]

    def orientation(self, X):
        X = _as_batch(X, self.dim)
        out = np.zeros_like(X)
        out[:, 0] = self.time_sign
        return out

    # -- domain ---------------------------------------------------------
    def in_chart(self, X, tol=1e-12):
        X = _as_batch(X, self.dim)
        span = self.chart_max - self.chart_min
        return np.all((X >= self.chart_min - tol * span) & (X <= self.chart_max + tol * span), axis=1)

    def in_cone(self, V):
        V = _as_batch(V, self.dim)
        if self.cone_c is None:
            return np.ones(len(V), dtype=bool)
        return V[:, 0] ** 2 > self.cone_c * np.sum(V[:, 1:] ** 2, axis=1)

    def check_point(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} components")
        if not self.in_chart(x)[0]:
            raise PointOutsideChart(f"{x.tolist()} lies outside the chart of {self.name}")
        return x

    def check_vector(self, v, allow_zero=False):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.dim,):
            raise ValueError(f"vector must have {self.dim} components")
        if not np.any(v):
            if allow_zero:
                return v
            raise ZeroVector("the Lagrangian is only smooth off the zero section")
        if not self.in_cone(v)[0]:
            raise OutsideValidityCone(f"{v.tolist()} is outside the validity cone of {self.name}")
        return v

    def sample_points(self, rng, count, margin=0.1):
        span = self.chart_max - self.chart_min
        lo = self.chart_min + margin * span
        return lo + rng.random((count, self.dim)) * (1 - 2 * margin) * span

    def to_json(self):
        out = {"name": self.name, "dim": self.dim,
               "chart_min": self.chart_min.tolist(), "chart_max": self.chart_max.tolist()}
        if self.cone_c is not None:
            out["cone_c"] = self.cone_c
        out.update({k: v for k, v in self.params.items() if k not in out})
        return out


# ---------------------------------------------------------------------------
# quadratic (Lorentzian) models


class QuadraticModel(SpacetimeModel):
    """``L = g_ij(x) v^i v^j / 2`` for an explicit Lorentzian metric."""

    quadratic = True

    def metric_jet(self, X, order):
        """Return ``[g, dg, d2g]`` truncated at ``order``.

        ``dg[k, a, i, j] = d_a g_ij`` and ``d2g[k, a, b, i, j] = d_a d_b g_ij``.
        """
        raise NotImplementedError

    def _jet(self, X, V, keys):
        B, n = X.shape
        amax = max(a for a, _ in keys)
        mj = self.metric_jet(X, amax)
        out = {}
        for a, b in keys:
            D = mj[a]
            if b == 0:
                out[(a, b)] = 0.5 * np.einsum("k...ij,ki,kj->k...", D, V, V)
            elif b == 1:
                out[(a, b)] = np.einsum("k...ij,kj->k...i", D, V)
            elif b == 2:
                out[(a, b)] = D.copy()
            else:
                out[(a, b)] = np.zeros((B,) + (n,) * (a + b))
        return out


class Minkowski(QuadraticModel):
    def __init__(self, dim=2, chart_min=-5.0, chart_max=5.0, **kw):
        super().__init__("minkowski", dim, chart_min, chart_max, **kw)

    def metric_jet(self, X, order):
        B, n = X.shape
        g = np.broadcast_to(np.diag([-1.0] + [1.0] * (n - 1)), (B, n, n)).copy()
        out = [g]
        for a in range(1, order + 1):
            out.append(np.zeros((B,) + (n,) * (a + 2)))
        return out


class DeSitter(QuadraticModel):
    """de Sitter space of radius ``a`` in flat-slicing coordinates

        g = -dt^2 + exp(2t/a) (dx_1^2 + ... + dx_{n-1}^2),

    a single smooth chart with no coordinate singularities.
    """

    def __init__(self, dim=3, radius=1.0, chart_min=-0.6, chart_max=0.6, **kw):
        if not radius > 0:
            raise InvalidParams("radius must be positive")
        super().__init__("de_sitter", dim, chart_min, chart_max, params={"radius": float(radius)}, **kw)
        self.radius = float(radius)

    def metric_jet(self, X, order):
        B, n = X.shape
        a = self.radius
        e = np.exp(2.0 * X[:, 0] / a)
        sp = np.arange(1, n)
        g = np.zeros((B, n, n))
        g[:, 0, 0] = -1.0
        g[:, sp, sp] = e[:, None]
        out = [g]
        if order >= 1:
            dg = np.zeros((B, n, n, n))
            dg[:, 0, sp, sp] = (2.0 / a) * e[:, None]
            out.append(dg)
        if order >= 2:
            d2g = np.zeros((B, n, n, n, n))
            d2g[:, 0, 0, sp, sp] = (4.0 / a**2) * e[:, None]
            out.append(d2g)
        return out


class ProductHyperbolic(QuadraticModel):
    """``-dt^2 + h`` with ``h = dy_1^2 + exp(2 y_1/R)(dy_2^2 + ...)`` (curvature -1/R^2)."""

    def __init__(self, dim=3, radius=1.0, chart_min=-1.0, chart_max=1.0, **kw):
        if dim < 3:
            raise InvalidParams("product_hyperbolic needs dim >= 3 (two spatial dimensions)")
        if not radius > 0:
            raise InvalidParams("radius must be positive")
        super().__init__("product_hyperbolic", dim, chart_min, chart_max, params={"radius": float(radius)}, **kw)
        self.radius = float(radius)

    def metric_jet(self, X, order):
        B, n = X.shape
        R = self.radius
        e = np.exp(2.0 * X[:, 1] / R)
        sp = np.arange(2, n)
        g = np.zeros((B, n, n))
        g[:, 0, 0] = -1.0
        g[:, 1, 1] = 1.0
        g[:, sp, sp] = e[:, None]
        out = [g]
        if order >= 1:
            dg = np.zeros((B, n, n, n))
            dg[:, 1, sp, sp] = (2.0 / R) * e[:, None]
            out.append(dg)
        if order >= 2:
            d2g = np.zeros((B, n, n, n, n))
            d2g[:, 1, 1, sp, sp] = (4.0 / R**2) * e[:, None]
            out.append(d2g)
        return out


class ProductSphere(QuadraticModel):
    """``-dt^2 + h`` with ``h`` the round sphere of radius R in stereographic coordinates,
    ``h = 4R^4 / (R^2 + |y|^2)^2 |dy|^2``.  Timelike flags with a spatial component
    have negative flag curvature."""

    def __init__(self, dim=3, radius=1.0, chart_min=-0.5, chart_max=0.5, **kw):
        if dim < 3:
            raise InvalidParams("product_sphere needs dim >= 3 (two spatial dimensions)")
        if not radius > 0:
            raise InvalidParams("radius must be positive")
        super().__init__("product_sphere", dim, chart_min, chart_max, params={"radius": float(radius)}, **kw)
        self.radius = float(radius)

    def metric_jet(self, X, order):
        B, n = X.shape
        R2 = self.radius**2
        R4 = R2 * R2
        y = X[:, 1:]
        u = R2 + np.sum(y * y, axis=1)
        phi = 4.0 * R4 / u**2
        sp = np.arange(1, n)
        g = np.zeros((B, n, n))
        g[:, 0, 0] = -1.0
        g[:, sp, sp] = phi[:, None]
        out = [g]
        if order >= 1:
            dphi = np.zeros((B, n))
            dphi[:, 1:] = -16.0 * R4 * y / u[:, None] ** 3
            dg = np.zeros((B, n, n, n))
            dg[:, :, sp, sp] = dphi[:, :, None]
            out.append(dg)
        if order >= 2:
            d2phi = np.zeros((B, n, n))
            d2phi[:, 1:, 1:] = (-16.0 * R4 / u**3)[:, None, None] * np.eye(n - 1) + (
                96.0 * R4 / u**4
            )[:, None, None] * np.einsum("bk,bl->bkl", y, y)
            d2g = np.zeros((B, n, n, n, n))
            d2g[:, :, :, sp, sp] = d2phi[:, :, :, None]
            out.append(d2g)
        return out


# ---------------------------------------------------------------------------
# Finsler models


def _falling(p, k):
    out = 1.0
    for i in range(k):
        out *= p - i
    return out


class FinslerQuartic(SpacetimeModel):
    """``L = (-(v^0)^2 + sum_i (v^i)^2)/2 + eps(x) (v^1)^4 / (v^0)^2``.

    ``flat_finsler`` uses a constant ``eps`` (x-independent, hence Berwald and
    flat); ``perturbed_finsler`` uses ``eps(x) = eps0 (1 + x^1)``, which breaks the
    Berwald property.  Directions are restricted to the cone
    ``(v^0)^2 > c |v_spatial|^2``.
    """

    def __init__(self, dim=2, epsilon=0.02, cone_c=4.0, perturbed=False, chart_min=-1.0, chart_max=1.0, **kw):
        name = "perturbed_finsler" if perturbed else "flat_finsler"
        eps = float(epsilon)
        if eps == 0.0:
            cone_c = None
        super().__init__(name, dim, chart_min, chart_max, cone_c=cone_c,
                         params={"epsilon": eps}, **kw)
        self.epsilon = eps
        self.perturbed = bool(perturbed)
        if self.perturbed:
            lo, hi = self.chart_min[1], self.chart_max[1]
            worst = abs(eps) * max(abs(1 + lo), abs(1 + hi))
        else:
            worst = abs(eps)
        if worst > EPS_BOUND:
            raise InvalidParams(f"|epsilon| reaches {worst:.3g} on the chart, above the bound {EPS_BOUND}")
        if eps != 0.0:
            _verify_signature(self)

    def _eps(self, X):
        B, n = X.shape
        if self.perturbed:
            e = self.epsilon * (1.0 + X[:, 1])
            de = np.zeros((B, n))
            de[:, 1] = self.epsilon
        else:
            e = np.full(B, self.epsilon)
            de = np.zeros((B, n))
        return e, de

    @staticmethod
    def _quartic_derivs(V, b):
        B, n = V.shape
        out = np.zeros((B,) + (n,) * b)
        v0, v1 = V[:, 0], V[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            for idx in itertools.product((0, 1), repeat=b):
                a1 = sum(idx)
                a0 = b - a1
                coef = _falling(-2, a0) * _falling(4, a1)
                if coef == 0.0:
                    continue
                out[(slice(None),) + idx] = coef * v0 ** (-2 - a0) * v1 ** (4 - a1)
        return out

    def _jet(self, X, V, keys):
        B, n = X.shape
        e, de = self._eps(X)
        eta = np.diag([-1.0] + [1.0] * (n - 1))
        out = {}
        cache = {}
        for a, b in keys:
            if self.epsilon == 0.0:
                Df = np.zeros((B,) + (n,) * b)
            else:
                if b not in cache:
                    cache[b] = self._quartic_derivs(V, b)
                Df = cache[b]
            if a == 0:
                val = e.reshape((B,) + (1,) * b) * Df
                if b == 0:
                    val = val + 0.5 * np.einsum("ij,ki,kj->k", eta, V, V)
                elif b == 1:
                    val = val + V @ eta
                elif b == 2:
                    val = val + eta
            elif a == 1:
                val = de.reshape((B, n) + (1,) * b) * Df[:, None]
            else:
                val = np.zeros((B,) + (n,) * (a + b))
            out[(a, b)] = val
        return out


# ---------------------------------------------------------------------------
# black-box models (finite-difference oracle)

# Base steps by total derivative order: each balances O(h^4) truncation (after
# one Richardson level) against O(eps/h^k) roundoff.
_FD_BASE_STEP = {1: 1e-3, 2: 1e-3, 3: 5e-3, 4: 5e-3}


def _fd_partial(L, X, V, slots, h_base):
    """Nested central differences with one Richardson level.  ``slots`` is a
    sequence of ``('x'|'v', index)`` pairs."""
    B, n = X.shape
    m = len(slots)
    if m == 0:
        return L(X, V)

    def central(scale):
        acc = np.zeros(B)
        steps = []
        for kind, i in slots:
            comp = X[:, i] if kind == "x" else V[:, i]
            steps.append(scale * h_base * (1.0 + np.abs(comp)))
        signs = np.array(list(itertools.product((1.0, -1.0), repeat=m)))
        Xs = np.repeat(X[None], len(signs), axis=0)
        Vs = np.repeat(V[None], len(signs), axis=0)
        for s_idx, sg in enumerate(signs):
            for (kind, i), sgn, h in zip(slots, sg, steps):
                if kind == "x":
                    Xs[s_idx, :, i] += sgn * h
                else:
                    Vs[s_idx, :, i] += sgn * h
        vals = L(Xs.reshape(-1, n), Vs.reshape(-1, n)).reshape(len(signs), B)
        denom = np.prod([2.0 * h for h in steps], axis=0)
        acc = np.einsum("s,sb->b", np.prod(signs, axis=1), vals)
        return acc / denom

    d1 = central(1.0)
    d2 = central(0.5)
    return (4.0 * d2 - d1) / 3.0


class LagrangianModel(SpacetimeModel):
    """Wraps a user Lagrangian ``L(X, V)`` (vectorised over the leading axis).

    Partials come from the finite-difference oracle; use a closed-form model
    whenever one is available.
    """

    def __init__(self, lagrangian: Callable, dim, chart_min, chart_max, cone_c=None, name="custom",
                 check_signature=True, **kw):
        super().__init__(name, dim, chart_min, chart_max, cone_c=cone_c, **kw)
        self._L = lagrangian
        if check_signature:
            _verify_signature(self)

    def _jet(self, X, V, keys):
        B, n = X.shape
        out = {}
        for a, b in keys:
            arr = np.zeros((B,) + (n,) * (a + b))
            if a + b == 0:
                arr = np.asarray(self._L(X, V), dtype=float)
            else:
                h = _FD_BASE_STEP[a + b]
                for xi in itertools.combinations_with_replacement(range(n), a):
                    for vi in itertools.combinations_with_replacement(range(n), b):
                        slots = [("x", i) for i in xi] + [("v", j) for j in vi]
                        val = _fd_partial(self._L, X, V, slots, h)
                        for px in set(itertools.permutations(xi)):
                            for pv in set(itertools.permutations(vi)):
                                arr[(slice(None),) + px + pv] = val
            out[(a, b)] = arr
        return out


# ---------------------------------------------------------------------------
# reversal


class ReversedModel(SpacetimeModel):
    """``Lbar(x, v) = L(x, -v)`` with orientation ``-X``."""

    def __init__(self, base: SpacetimeModel):
        super().__init__(base.name, base.dim, base.chart_min, base.chart_max, cone_c=base.cone_c,
                         params=base.params, time_sign=-base.time_sign)
        self.base = base
        self.quadratic = base.quadratic

    def orientation(self, X):
        return -self.base.orientation(X)

    def _jet(self, X, V, keys):
        raw = self.base._jet(X, -V, keys)
        return {(a, b): (-1.0) ** b * raw[(a, b)] for (a, b) in keys}

    def __repr__(self):
        return f"reverse({self.base!r})"

    def to_json(self):
        out = self.base.to_json()
        out["reversed"] = True
        return out


def reverse_model(model: SpacetimeModel) -> SpacetimeModel:
    """The reverse structure.  Reversing twice returns the original object."""
    if isinstance(model, ReversedModel):
        return model.base
    return ReversedModel(model)


# ---------------------------------------------------------------------------
# checks and public operations


def _verify_signature(model, samples=256, seed=0):
    rng = np.random.default_rng(seed)
    X = model.sample_points(rng, samples, margin=0.0)
    V = _random_cone_directions(model, rng, samples)
    g = model.jet(X, V, ((0, 2),))[(0, 2)]
    if not np.all(np.isfinite(g)):
        raise InvalidParams(f"{model.name}: non-finite fundamental tensor on the declared cone")
    ev = np.linalg.eigvalsh(g)
    ok = (ev[:, 0] < 0) & (ev[:, 1] > 0)
    if not np.all(ok):
        raise InvalidParams(f"{model.name}: signature (-,+,...,+) fails on the declared cone")


def _random_cone_directions(model, rng, count):
    """Directions in the validity cone (both time orientations), including
    near-boundary ones.  Without a cone: directions with |v0| > |v_spatial|/2."""
    n = model.dim
    c = model.cone_c if model.cone_c is not None else 0.25
    u = rng.normal(size=(count, n - 1))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rho = rng.random(count) ** 0.5 * 0.999 / math.sqrt(c)
    sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    V = np.empty((count, n))
    V[:, 0] = sign
    V[:, 1:] = rho[:, None] * u
    return V


def eval_L(model: SpacetimeModel, x, v) -> float:
    x = model.check_point(x)
    v = model.check_vector(v)
    val = float(model.lagrangian(x, v)[0])
    if not math.isfinite(val):
        raise OracleFailure("non-finite Lagrangian value")
    return val


def _parse_alpha(alpha, n):
    if isinstance(alpha, str):
        alpha = alpha.replace(",", " ").split()
    slots = []
    for tok in alpha:
        if isinstance(tok, str):
            kind, idx = tok[0], int(tok[1:])
        else:
            kind, idx = tok[0], int(tok[1])
        if kind not in ("x", "v") or not 0 <= idx < n:
            raise ValueError(f"bad derivative slot {tok!r}")
        slots.append((kind, idx))
    return slots


def eval_partial(model: SpacetimeModel, x, v, alpha: Iterable) -> float:
    """Mixed partial of L.  ``alpha`` lists slots, e.g. ``["v0", "v0"]`` or
    ``[("x", 1), ("v", 0)]``."""
    slots = _parse_alpha(alpha, model.dim)
    xs = sorted(i for k, i in slots if k == "x")
    vs = sorted(i for k, i in slots if k == "v")
    if len(slots) > MAX_ORDER or len(xs) > MAX_X_ORDER:
        raise OrderExceeded(f"|alpha|={len(slots)} with {len(xs)} x-slots exceeds the oracle limit")
    x = model.check_point(x)
    v = model.check_vector(v)
    block = model.jet(x, v, ((len(xs), len(vs)),))[(len(xs), len(vs))]
    val = float(block[(0,) + tuple(xs) + tuple(vs)])
    if not math.isfinite(val):
        raise OracleFailure(f"non-finite partial for alpha={alpha!r}")
    return val


def zoo_model(name: str, params: dict | None = None) -> SpacetimeModel:
    params = dict(params or {})
    params.pop("name", None)
    allowed = {"dim", "radius", "epsilon", "cone_c", "chart_min", "chart_max"}
    unknown = set(params) - allowed
    if unknown:
        raise InvalidParams(f"unknown parameters {sorted(unknown)}")
    try:
        if name == "minkowski":
            params.pop("radius", None)
            return Minkowski(**params)
        if name == "de_sitter":
            return DeSitter(**params)
        if name == "product_hyperbolic":
            return ProductHyperbolic(**params)
        if name == "product_sphere":
            return ProductSphere(**params)
        if name in ("flat_finsler", "perturbed_finsler"):
            params.pop("radius", None)
            return FinslerQuartic(perturbed=(name == "perturbed_finsler"), **params)
    except TypeError as exc:
        raise InvalidParams(str(exc)) from exc
    raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(ZOO_NAMES)}")


def model_from_json(obj: dict) -> SpacetimeModel:
    if "name" not in obj:
        raise InvalidParams("model JSON needs a 'name' key")
    obj = dict(obj)
    rev = obj.pop("reversed", False)
    m = zoo_model(obj["name"], obj)
    return reverse_model(m) if rev else m
