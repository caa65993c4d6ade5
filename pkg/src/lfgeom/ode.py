"""Batched Dormand-Prince 5(4) integrator with forced stop times.

All trajectories in a batch share one adaptive step sequence (the step is
controlled by the worst alive row), which keeps finite-difference Jacobians
across a batch free of step-selection noise.  Rows that trip the guard are
frozen at their last accepted state and reported through ``status``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OK, LEFT_CHART, LEFT_CONE, STIFF = 0, 1, 2, 3

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])


@dataclass
class BatchSolution:
    t: np.ndarray  # (K,)
    y: np.ndarray  # (K, B, d)
    dy: np.ndarray  # (K, B, d)
    status: np.ndarray  # (B,) int codes
    t_fail: np.ndarray  # (B,) parameter at which a row stopped (nan if OK)

    def endpoint(self):
        return self.y[-1]


def hermite(t, T, Y, dY):
    """Cubic Hermite interpolation.  ``T`` (K,), ``Y``/``dY`` (K, ...).
    Returns values and derivatives at the (scalar or 1-d) parameters ``t``."""
    t = np.atleast_1d(np.asarray(t, float))
    asc = T[-1] >= T[0]
    Ts = T if asc else T[::-1]
    idx = np.clip(np.searchsorted(Ts, t, side="right") - 1, 0, len(T) - 2)
    if not asc:
        idx = len(T) - 2 - idx
    t0, t1 = T[idx], T[idx + 1]
    h = t1 - t0
    s = (t - t0) / h
    shape = (-1,) + (1,) * (Y.ndim - 1)
    s = s.reshape(shape)
    h = h.reshape(shape)
    y0, y1, f0, f1 = Y[idx], Y[idx + 1], dY[idx], dY[idx + 1]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    val = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    d00 = (6 * s**2 - 6 * s) / h
    d10 = 3 * s**2 - 4 * s + 1
    d01 = (-6 * s**2 + 6 * s) / h
    d11 = 3 * s**2 - 2 * s
    der = d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1
    return val, der


def integrate(f, y0, t0, t1, stops=None, guard=None, rtol=1e-10, atol=1e-10, max_step=1 / 32,
              h_init=None, max_steps=200000):
    """Integrate ``y' = f(t, y)`` for a batch ``y0`` of shape (B, d).

    ``stops`` are parameters that must appear exactly on the knot grid.
    ``guard(t, y)`` returns an int code per row (0 = fine) and is checked at
    accepted steps only.
    """
    y0 = np.array(y0, float)
    if y0.ndim == 1:
        y0 = y0[None]
    B, d = y0.shape
    span = float(t1 - t0)
    direction = 1.0 if span >= 0 else -1.0
    status = np.zeros(B, dtype=int)
    t_fail = np.full(B, np.nan)
    if span == 0.0:
        f0 = f(t0, y0)
        return BatchSolution(np.array([t0]), y0[None], f0[None], status, t_fail)
    targets = [float(t1)]
    if stops is not None:
        s = np.asarray(stops, float)
        s = s[(s - t0) * direction > 0]
        s = s[(t1 - s) * direction > 0]
        targets = sorted(set(s.tolist()) | {float(t1)}, key=lambda v: direction * v)
    hmax = abs(max_step) if max_step else abs(span)
    hmin = 1e-12 * max(1.0, abs(span))

    alive = np.ones(B, dtype=bool)
    t = float(t0)
    y = y0.copy()
    fy = f(t, y)
    if not np.all(np.isfinite(fy)):
        bad = ~np.all(np.isfinite(fy), axis=1)
        status[bad] = STIFF
        t_fail[bad] = t
        alive &= ~bad
        fy[bad] = 0.0
    if guard is not None:
        code = guard(t, y)
        newly = alive & (code != 0)
        status[newly] = code[newly]
        t_fail[newly] = t
        alive &= ~newly
    T = [t]
    Ys = [y.copy()]
    Fs = [fy.copy()]
    h = abs(h_init) if h_init else min(hmax, 0.01 * abs(span) + 1e-3)
    ti = 0
    steps = 0
    while ti < len(targets) and np.any(alive):
        steps += 1
        if steps > max_steps:
            status[alive] = STIFF
            t_fail[alive] = t
            break
        target = targets[ti]
        remaining = (target - t) * direction
        hit = h >= remaining * (1 - 1e-12)
        hh = remaining if hit else h
        ya = y[alive]
        ka = np.empty((7,) + ya.shape)
        ka[0] = fy[alive]
        with np.errstate(all="ignore"):
            for s in range(1, 7):
                acc = ya.copy()
                for j, a in enumerate(_A[s]):
                    if a != 0.0:
                        acc += (direction * hh * a) * ka[j]
                ka[s] = f(t + direction * hh * _C[s], acc)
            ynew = ya + direction * hh * np.tensordot(_B, ka, axes=1)
            err_vec = direction * hh * np.tensordot(_E, ka, axes=1)
            scale = atol + rtol * np.maximum(np.abs(ya), np.abs(ynew))
            err_rows = np.max(np.abs(err_vec) / scale, axis=1)
        finite = np.isfinite(err_rows) & np.all(np.isfinite(ynew), axis=1)
        if not np.all(finite):
            if hh <= hmin * 1.0001:
                idx = np.flatnonzero(alive)[~finite]
                status[idx] = STIFF
                t_fail[idx] = t
                alive[idx] = False
                continue
            h = max(hh * 0.25, hmin)
            continue
        err = float(np.max(err_rows)) if len(err_rows) else 0.0
        if err <= 1.0:
            t_new = target if hit else t + direction * hh
            y[alive] = ynew
            fy_new = fy.copy()
            fy_new[alive] = ka[6]
            fy = fy_new
            t = t_new
            if guard is not None:
                code = np.zeros(B, dtype=int)
                code[alive] = guard(t, y[alive])
                newly = alive & (code != 0)
                status[newly] = code[newly]
                t_fail[newly] = t
                alive &= ~newly
            T.append(t)
            Ys.append(y.copy())
            Fs.append(fy.copy())
            if hit:
                ti += 1
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = min(hmax, max(hmin, hh * fac))
        else:
            if hh <= hmin * 1.0001:
                idx = np.flatnonzero(alive)[err_rows > 1.0]
                status[idx] = STIFF
                t_fail[idx] = t
                alive[idx] = False
                continue
            h = max(hmin, hh * max(0.2, 0.9 * err ** -0.2))
    return BatchSolution(np.array(T), np.array(Ys), np.array(Fs), status, t_fail)
