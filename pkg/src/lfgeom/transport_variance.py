"""Discrete optimal transport on normed spaces: W2, displacement geodesics,
variance / barycenter and the sqrt-variance convexity check."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import BadConfig, InvalidMeasure

WEIGHT_TOL = 1e-12
CONVEXITY_TOL = 1e-7


@dataclass(frozen=True)
class GroundSpace:
    dim: int
    norm: str = "euclidean"  # "euclidean" or "p"
    p: float = 2.0

    def __post_init__(self):
        if self.dim < 1:
            raise BadConfig("dim must be positive")
        if self.norm not in ("euclidean", "p"):
            raise BadConfig(f"unknown norm {self.norm!r}")
        if self.norm == "p" and not (1.0 < self.p < np.inf):
            raise BadConfig("p-norm needs 1 < p < inf (strict convexity)")

    @classmethod
    def from_json(cls, obj):
        norm = obj.get("norm", "euclidean")
        if norm in ("euclidean", "l2"):
            return cls(int(obj["dim"]))
        if norm == "p" or str(norm).startswith("p"):
            p = float(obj.get("p", str(norm)[1:] or 2))
            return cls(int(obj["dim"]), "p", p)
        raise BadConfig(f"unknown norm {norm!r}")

    @property
    def exponent(self):
        return 2.0 if self.norm == "euclidean" else self.p

    def dist(self, a, b):
        d = np.asarray(a, float) - np.asarray(b, float)
        return np.sum(np.abs(d) ** self.exponent, axis=-1) ** (1.0 / self.exponent)

    def cost_matrix(self, A, B):
        D = np.abs(A[:, None, :] - B[None, :, :])
        return np.sum(D**self.exponent, axis=-1) ** (2.0 / self.exponent)


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, float))
        w = np.full(len(atoms), 1.0 / len(atoms)) if self.weights is None else np.asarray(self.weights, float)
        if atoms.ndim != 2 or len(atoms) == 0:
            raise InvalidMeasure("atoms must be a non-empty (m, k) array")
        if w.shape != (len(atoms),):
            raise InvalidMeasure("one weight per atom")
        if not np.all(np.isfinite(atoms)) or not np.all(np.isfinite(w)):
            raise InvalidMeasure("non-finite atoms or weights")
        if np.any(w < 0):
            raise InvalidMeasure("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidMeasure(f"weights sum to {w.sum():.15g}, not 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["atoms"], float), None if obj.get("weights") is None else np.asarray(obj["weights"], float))

    @classmethod
    def dirac(cls, x):
        return cls(np.asarray(x, float)[None], np.ones(1))

    def to_json(self):
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    def __len__(self):
        return len(self.weights)


def _check_dims(space, *measures):
    for m in measures:
        if m.atoms.shape[1] != space.dim:
            raise InvalidMeasure(f"atoms have dimension {m.atoms.shape[1]}, space has {space.dim}")


# ---------------------------------------------------------------------------
# assignment / transport LP


def hungarian(C):
    """Minimum-cost perfect assignment for a square cost matrix.

    Shortest augmenting path with dual potentials, O(m^3).  Returns ``perm``
    with row ``i`` assigned to column ``perm[i]``.
    """
    C = np.asarray(C, float)
    m = C.shape[0]
    if C.shape != (m, m):
        raise ValueError("cost matrix must be square")
    INF = np.inf
    u = np.zeros(m + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j] = row matched to column j (1-based, 0 = none)
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = C[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(m, dtype=int)
    for j in range(1, m + 1):
        perm[p[j] - 1] = j - 1
    return perm


def transport_lp(C, a, b):
    """Exact optimal coupling on the transportation polytope (dual simplex)."""
    m, k = C.shape
    A_eq = np.zeros((m + k, m * k))
    for i in range(m):
        A_eq[i, i * k:(i + 1) * k] = 1.0
    for j in range(k):
        A_eq[m + j, j::k] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise InvalidMeasure(f"transport LP failed: {res.message}")
    pi = np.maximum(res.x.reshape(m, k), 0.0)
    return pi


def _uniform_equal(mu, nu):
    m = len(mu)
    return (m == len(nu) and np.allclose(mu.weights, 1.0 / m, rtol=0, atol=1e-15)
            and np.allclose(nu.weights, 1.0 / m, rtol=0, atol=1e-15))


def w2_distance(space: GroundSpace, mu: DiscreteMeasure, nu: DiscreteMeasure, method="auto"):
    """(W2, coupling).  Equal-size uniform measures use the assignment solver,
    everything else the transportation LP."""
    _check_dims(space, mu, nu)
    C = space.cost_matrix(mu.atoms, nu.atoms)
    if method == "assignment" or (method == "auto" and _uniform_equal(mu, nu)):
        if not _uniform_equal(mu, nu):
            raise BadConfig("assignment solver needs equal-size uniform measures")
        m = len(mu)
        perm = hungarian(C)
        pi = np.zeros((m, m))
        pi[np.arange(m), perm] = 1.0 / m
    else:
        pi = transport_lp(C, mu.weights, nu.weights)
    cost = float(np.sum(pi * C))
    return float(np.sqrt(max(cost, 0.0))), pi


def brute_force_w2(space, mu, nu):
    """Minimum over permutations, for small equal-size uniform instances."""
    C = space.cost_matrix(mu.atoms, nu.atoms)
    m = len(mu)
    best = min(sum(C[i, s[i]] for i in range(m)) for s in itertools.permutations(range(m)))
    return float(np.sqrt(best / m))


def w2_geodesic(space: GroundSpace, mu, nu, t, coupling=None) -> DiscreteMeasure:
    """Displacement interpolation: atoms (1-t) x_i + t y_j with weight pi_ij."""
    if not 0.0 <= t <= 1.0:
        raise BadConfig("t must lie in [0, 1]")
    if coupling is None:
        coupling = w2_distance(space, mu, nu)[1]
    I, J = np.nonzero(coupling > 0)
    w = coupling[I, J]
    atoms = (1 - t) * mu.atoms[I] + t * nu.atoms[J]
    return DiscreteMeasure(atoms, w / w.sum())


# ---------------------------------------------------------------------------
# variance


@dataclass
class VarianceResult:
    value: float
    barycenter: np.ndarray
    converged: bool = True


def _pnorm_sq_and_grad(D, p):
    A = np.abs(D)
    nrm = np.sum(A**p, axis=-1) ** (1 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 2 * np.where(nrm[..., None] > 0, nrm[..., None] ** (2 - p) * np.sign(D) * A ** (p - 1), 0.0)
    return nrm**2, g


def _pnorm_hessian(D, p, w):
    """Hessian of sum_i w_i ||D_i||_p^2 with respect to the common shift."""
    A = np.abs(D)
    nrm = np.sum(A**p, axis=-1) ** (1 / p)
    U = np.sign(D) * A ** (p - 1)
    H = 2 * (2 - p) * np.einsum("b,bi,bj->ij", w * nrm ** (2 - 2 * p), U, U)
    H += np.diag(2 * (p - 1) * np.einsum("b,bi->i", w * nrm ** (2 - p), A ** (p - 2)))
    return H


def variance(space: GroundSpace, mu: DiscreteMeasure, tol=1e-9, restarts=3) -> VarianceResult:
    _check_dims(space, mu)
    w = mu.weights
    if len(mu) == 1:
        return VarianceResult(0.0, mu.atoms[0].copy())
    # work in coordinates centred at the weighted mean (conditioning, exact translation behaviour)
    shift = w @ mu.atoms
    Y = mu.atoms - shift
    if space.norm == "euclidean":
        c = w @ Y
        return VarianceResult(float(w @ np.sum((Y - c) ** 2, axis=1)), c + shift)
    p = space.p

    def obj(x):
        sq, _ = _pnorm_sq_and_grad(x[None] - Y, p)
        return float(w @ sq)

    def grad(x):
        _, g = _pnorm_sq_and_grad(x[None] - Y, p)
        return w @ g

    x = np.zeros(space.dim)
    best = obj(x)
    scale = float(np.max(np.abs(Y))) + 1e-12
    for _ in range(restarts):
        init = np.vstack([x, x + 0.1 * scale * np.eye(space.dim)])
        r = minimize(obj, x, method="Nelder-Mead",
                     options={"xatol": 1e-10 * scale, "fatol": tol * 1e-3, "initial_simplex": init, "maxiter": 20000})
        if r.fun <= best:
            x, best = r.x, r.fun
    r = minimize(obj, x, jac=grad, method="BFGS", options={"gtol": 1e-12})
    if r.fun <= best:
        x, best = r.x, r.fun
    # Newton polish where the Hessian is finite (components of x - y_i away from 0 when p < 2)
    for _ in range(8):
        D = x[None] - Y
        if np.min(np.max(np.abs(D), axis=1)) < 1e-8 * scale or (p < 2 and np.min(np.abs(D)) < 1e-8 * scale):
            break
        H = _pnorm_hessian(D, p, w)
        g = grad(x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        xn = x - step
        fn = obj(xn)
        if not fn <= best + 1e-15 * (1 + abs(best)):
            break
        x, best = xn, min(fn, best)
        if np.max(np.abs(step)) <= 1e-15 * scale:
            break
    converged = bool(np.max(np.abs(grad(x))) <= 1e-8 * (1 + scale))
    return VarianceResult(float(best), np.asarray(x) + shift, converged)


# ---------------------------------------------------------------------------
# convexity check


@dataclass
class ConvexityReport:
    grid: np.ndarray
    values: np.ndarray  # sqrt(var(mu_t))
    worst_deficit: float
    verdict: str
    witness: dict | None


def check_sqrt_var_convexity(space: GroundSpace, mu, nu, grid_size=17, tol=CONVEXITY_TOL) -> ConvexityReport:
    if grid_size < 3:
        raise BadConfig("grid_size must be >= 3")
    _, pi = w2_distance(space, mu, nu)
    ts = np.linspace(0.0, 1.0, grid_size)
    vals = np.array([np.sqrt(max(variance(space, w2_geodesic(space, mu, nu, t, pi)).value, 0.0)) for t in ts])
    # convexity: mid <= average of neighbours
    defs = 0.5 * (vals[:-2] + vals[2:]) - vals[1:-1]
    chord = (1 - ts) * vals[0] + ts * vals[-1] - vals
    all_defs = np.concatenate([defs, chord])
    k = int(np.argmin(all_defs))
    worst = float(all_defs[k])
    verdict = "pass" if worst >= -tol else "fail"
    witness = None
    if verdict == "fail":
        if k < len(defs):
            witness = {"kind": "triple", "t": ts[k:k + 3].tolist(), "values": vals[k:k + 3].tolist()}
        else:
            j = k - len(defs)
            witness = {"kind": "chord", "t": float(ts[j]), "value": float(vals[j])}
    return ConvexityReport(ts, vals, worst, verdict, witness)
