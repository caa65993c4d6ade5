"""Fundamental tensor g_v, causal character and the Lorentz-Finsler norm F."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotCausal, OracleFailure, SignatureViolation
from .models import SpacetimeModel

LIGHTLIKE_BAND = 1e-12
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    comp: np.ndarray


@dataclass(frozen=True)
class MetricAtV:
    entries: np.ndarray
    at: tuple

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class CausalClass:
    kind: str  # timelike | lightlike | spacelike | zero
    orientation: str  # future | past | n/a

    @property
    def causal(self):
        return self.kind in ("timelike", "lightlike")

    @property
    def future_timelike(self):
        return self.kind == "timelike" and self.orientation == "future"


def signature_ok(g):
    """Batched test for signature (-, +, ..., +)."""
    ev = np.linalg.eigvalsh(g)
    return (ev[..., 0] < 0) & (ev[..., 1] > 0)


def metric_batch(model, X, V):
    return model.jet(X, V, ((0, 2),))[(0, 2)]


def metric_tensor(model: SpacetimeModel, x, v) -> MetricAtV:
    x = model.check_point(x)
    v = model.check_vector(v)
    g = metric_batch(model, x, v)[0]
    if not np.all(np.isfinite(g)):
        raise OracleFailure("non-finite fundamental tensor")
    if np.max(np.abs(g - g.T)) > SYMMETRY_TOL:
        raise SignatureViolation("Hessian of L is not symmetric")
    if not signature_ok(g):
        raise SignatureViolation(f"g_v at v={v.tolist()} does not have signature (-,+,...,+)")
    return MetricAtV(entries=0.5 * (g + g.T), at=(x, v))


def inner(model: SpacetimeModel, x, v, a, b) -> float:
    g = metric_tensor(model, x, v).entries
    return float(np.asarray(a, float) @ g @ np.asarray(b, float))


def future_pairing(model, X, V):
    """``g_X(X, v)`` with ``X`` the orientation field; negative means future."""
    O = model.orientation(X)
    g = metric_batch(model, X, O)
    return np.einsum("bi,bij,bj->b", O, g, V)


def classify_batch(model, X, V):
    """Vectorised classification.  Returns (kind codes, future mask) with
    codes -1 timelike, 0 lightlike, 1 spacelike, 2 zero."""
    X = np.atleast_2d(np.asarray(X, float))
    V = np.atleast_2d(np.asarray(V, float))
    codes = np.full(len(V), 2)
    future = np.zeros(len(V), dtype=bool)
    nz = np.any(V != 0, axis=1)
    if np.any(nz):
        L = model.lagrangian(X[nz], V[nz])
        band = LIGHTLIKE_BAND * np.sum(V[nz] ** 2, axis=1)
        c = np.where(L < -band, -1, np.where(L > band, 1, 0))
        codes[nz] = c
        future[nz] = (c <= 0) & (future_pairing(model, X[nz], V[nz]) < 0)
    return codes, future


_KIND = {-1: "timelike", 0: "lightlike", 1: "spacelike", 2: "zero"}


def classify(model: SpacetimeModel, x, v) -> CausalClass:
    x = model.check_point(x)
    v = model.check_vector(v, allow_zero=True)
    codes, future = classify_batch(model, x, v)
    kind = _KIND[int(codes[0])]
    if kind in ("timelike", "lightlike"):
        orient = "future" if future[0] else "past"
    else:
        orient = "n/a"
    return CausalClass(kind, orient)


def norm_F_batch(model, X, V):
    L = model.lagrangian(X, V)
    return np.sqrt(np.maximum(-2.0 * L, 0.0))


def norm_F(model: SpacetimeModel, x, v) -> float:
    cls = classify(model, x, v)
    if cls.kind == "zero":
        return 0.0
    if not cls.causal:
        raise NotCausal(f"F is only defined on causal vectors; got {cls.kind}")
    L = float(model.lagrangian(x, v)[0])
    if not math.isfinite(L):
        raise OracleFailure("non-finite Lagrangian")
    return math.sqrt(max(-2.0 * L, 0.0))


def orthonormal_frame(model, x):
    """A g_X-orthonormal frame at ``x`` whose first vector is the (normalised)
    orientation field.  Columns are the frame vectors."""
    x = np.asarray(x, float)
    X = model.orientation(x)[0]
    g = metric_batch(model, x, X)[0]
    n = model.dim
    basis = [X / math.sqrt(-(X @ g @ X))]
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        for b, s in zip(basis, [-1.0] + [1.0] * (len(basis) - 1)):
            e = e - s * (e @ g @ b) * b
        nrm = e @ g @ e
        if nrm > 1e-10:
            basis.append(e / math.sqrt(nrm))
        if len(basis) == n:
            break
    return np.array(basis).T
