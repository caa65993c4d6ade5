"""Command-line front end.

Exit codes: 0 = pass / success, 1 = violation witnessed, 2 = error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .connection import berwald_deviation, is_berwald
from .curvature import flag_batch
from .errors import BadConfig, GeometryError
from .fundamental import classify, metric_tensor, norm_F
from .geodesics import solve_bvp, time_separation
from .models import ZOO_NAMES, model_from_json, zoo_model
from .rng import substream
from .transport_variance import DiscreteMeasure, GroundSpace, check_sqrt_var_convexity, w2_distance
from . import verify as V

WORKERS_ENV = "LFGEOM_WORKERS"


@dataclass
class RunConfig:
    model: dict
    seed: int = 0
    budgets: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    fmt: str = "json"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise BadConfig("seed must be a 64-bit unsigned integer")
        if self.fmt not in ("json", "csv"):
            raise BadConfig("output format must be json or csv")


# ---------------------------------------------------------------------------
# argument helpers


def load_model(spec: str):
    """Zoo name, inline JSON object, or path to a JSON file."""
    if spec in ZOO_NAMES:
        return zoo_model(spec)
    text = spec
    if not spec.lstrip().startswith("{"):
        try:
            with open(spec) as fh:
                text = fh.read()
        except OSError as exc:
            raise BadConfig(f"cannot read model file {spec!r}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"model is not valid JSON: {exc}") from exc
    return model_from_json(obj)


def _load_json(spec: str):
    text = spec
    if not spec.lstrip().startswith(("{", "[")):
        try:
            with open(spec) as fh:
                text = fh.read()
        except OSError as exc:
            raise BadConfig(f"cannot read {spec!r}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise BadConfig(f"invalid JSON: {exc}") from exc


def parse_vec(text: str):
    try:
        return np.array([float(t) for t in text.replace(" ", "").strip("[]()").split(",") if t], float)
    except ValueError as exc:
        raise BadConfig(f"cannot parse vector {text!r}") from exc


def _dump(obj) -> str:
    return json.dumps(V._clean(obj), indent=2)


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands


def cmd_zoo(args):
    if args.action == "list":
        if args.json:
            _emit(_dump({"models": list(ZOO_NAMES)}), None)
        else:
            _emit("\n".join(ZOO_NAMES), None)
        return 0
    m = zoo_model(args.name)
    _emit(_dump(m.to_json()), None)
    return 0


def cmd_classify(args):
    m = load_model(args.model)
    c = classify(m, parse_vec(args.x), parse_vec(args.v))
    out = {"kind": c.kind, "orientation": c.orientation}
    if c.causal or c.kind == "zero":
        out["F"] = norm_F(m, parse_vec(args.x), parse_vec(args.v))
    _emit(_dump(out) if args.json else f"{c.kind} ({c.orientation})", None)
    return 0


def cmd_metric(args):
    m = load_model(args.model)
    g = metric_tensor(m, parse_vec(args.x), parse_vec(args.v)).entries
    _emit(_dump({"g": g}) if args.json else "\n".join(" ".join(f"{a: .12g}" for a in row) for row in g), None)
    return 0


def cmd_geodesic(args):
    m = load_model(args.model)
    x, y = parse_vec(args.from_), parse_vec(args.to)
    v, path = solve_bvp(m, x, y)
    tau = time_separation(m, x, y)
    ts = np.linspace(path.t0, path.t1, args.samples)
    st = path.state(ts)
    n = m.dim
    header = ["t"] + [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)]
    text = _csv_text(header, [[t] + list(row) for t, row in zip(ts, st)])
    if args.csv_out:
        _emit(text, args.csv_out)
    out = {"velocity": v, "tau": tau, "path_csv": args.csv_out if args.csv_out else text}
    _emit(_dump(out), args.out)
    return 0


def cmd_curvature_scan(args):
    m = load_model(args.model)
    rng = substream(args.seed, "curvature-scan")
    n = m.dim
    X = V._sample_points(m, rng, args.samples, frac=0.8)
    E = V._frames(m, X)
    Vv, ok = V._future_timelike(m, X, E, V._timelike_components(m, rng, args.samples, True, 0.8), margin=0.01)
    W = rng.normal(size=(args.samples, n))
    X, Vv, W = X[ok], Vv[ok], W[ok]
    K, _, den = flag_batch(m, X, Vv, W)
    good = np.abs(den) >= 1e-10 * np.sum(Vv**2, 1) * np.sum(W**2, 1)
    X, Vv, W, K = X[good], Vv[good], W[good], K[good]
    header = [f"x{i}" for i in range(n)] + [f"v{i}" for i in range(n)] + [f"w{i}" for i in range(n)] + ["K"]
    rows = [list(a) + list(b) + list(c) + [k] for a, b, c, k in zip(X, Vv, W, K)]
    if args.out:
        _emit(_csv_text(header, rows), args.out)
    j = int(np.argmin(K))
    summary = {"min_K": float(K[j]), "argmin": {"x": X[j], "v": Vv[j], "w": W[j]}, "samples": int(len(K))}
    _emit(_dump(summary), None)
    return 0


def cmd_berwald(args):
    m = load_model(args.model)
    rng = substream(args.seed, "berwald-check")
    if args.x:
        pts = [parse_vec(args.x)]
    else:
        pts = V._sample_points(m, rng, args.points, frac=0.8)
    worst, worst_x, flags = -1.0, None, []
    for x in pts:
        dev, scale = berwald_deviation(m, x, args.dirs, int(rng.integers(2**31)))
        flags.append(is_berwald(dev, scale))
        if dev > worst:
            worst, worst_x = dev, x
    verdict = V.PASS if all(flags) else V.FAIL
    _emit(_dump({"max_deviation": worst, "verdict": verdict, "x": worst_x, "seed": args.seed}), None)
    return 0 if verdict == V.PASS else 1


_VERIFY_CHECKS = {
    "concavity": ("concavity", "timelike_concavity"),
    "capsule": ("future_capsules", "past_capsules"),
    "berwald": ("berwald",),
    "parallel": ("parallel",),
    "all": V.CONDITIONS,
}


def _run_one(payload):
    model_json, check, seed, budget = payload
    m = model_from_json(model_json)
    return V.run_check(m, check, seed, V.Budget.from_dict(budget))


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise BadConfig(f"{WORKERS_ENV} must be an integer") from exc


def cmd_verify(args):
    m = load_model(args.model)
    budget = _load_json(args.budget) if args.budget else {}
    V.Budget.from_dict(budget)
    cfg = RunConfig(model=m.to_json(), seed=args.seed, budgets=budget, output=args.out)
    checks = _VERIFY_CHECKS[args.which]
    t0 = time.perf_counter()
    payloads = [(cfg.model, c, cfg.seed, cfg.budgets) for c in checks]
    nw = min(_workers(), len(payloads))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            reports = list(ex.map(_run_one, payloads))
    else:
        reports = [_run_one(p) for p in payloads]
    ms = 1000 * (time.perf_counter() - t0)
    verdict = V.PASS if all(r.verdict == V.PASS for r in reports) else V.FAIL
    if len(reports) == 1:
        out = reports[0].to_json(args.timing)
        out["check"] = args.which
    else:
        worst = min(reports, key=lambda r: (r.verdict == V.PASS, r.worst_deficit))
        out = {"check": args.which, "verdict": verdict, "worst_deficit": worst.worst_deficit,
               "witness": {r.check: r.witness for r in reports if r.witness is not None} or None,
               "seed": cfg.seed, "runtime_ms": round(ms, 3) if args.timing else None,
               "conditions": {r.check: r.to_json(args.timing) for r in reports}}
        if args.which == "all":
            out["agree"] = len({r.verdict for r in reports}) == 1
    out["model"] = cfg.model
    text = _dump(out)
    _emit(text, cfg.output)
    if cfg.output and not args.json:
        sys.stdout.write(f"{args.which}: {verdict}\n")
    return 0 if verdict == V.PASS else 1


def cmd_variance_demo(args):
    space = GroundSpace.from_json(_load_json(args.space))
    mu = DiscreteMeasure.from_json(_load_json(args.mu))
    nu = DiscreteMeasure.from_json(_load_json(args.nu))
    rep = check_sqrt_var_convexity(space, mu, nu, args.grid)
    w2, _ = w2_distance(space, mu, nu)
    if args.out:
        _emit(_csv_text(["t", "sqrt_var"], zip(rep.grid, rep.values)), args.out)
    _emit(_dump({"check": "sqrt_var_convexity", "verdict": rep.verdict, "worst_deficit": rep.worst_deficit,
                 "witness": rep.witness, "w2": w2}), None)
    return 0 if rep.verdict == V.PASS else 1


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="lfgeom", description="Chart-local Lorentz-Finsler geometry toolkit")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, model=True):
        sp.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
        if model:
            sp.add_argument("--model", required=True, help="zoo name, JSON object or JSON file")

    z = sub.add_parser("zoo", help="list or show built-in models")
    common(z, model=False)
    z.add_argument("action", choices=["list", "show"])
    z.add_argument("name", nargs="?", default="minkowski")
    z.set_defaults(fn=cmd_zoo)

    c = sub.add_parser("classify", help="causal character of a vector")
    common(c)
    c.add_argument("--x", required=True)
    c.add_argument("--v", required=True)
    c.set_defaults(fn=cmd_classify)

    g = sub.add_parser("metric", help="fundamental tensor g_v at x")
    common(g)
    g.add_argument("--x", required=True)
    g.add_argument("--v", required=True)
    g.set_defaults(fn=cmd_metric)

    geo = sub.add_parser("geodesic", help="connecting geodesic and time separation")
    common(geo)
    geo.add_argument("--from", dest="from_", required=True)
    geo.add_argument("--to", required=True)
    geo.add_argument("--samples", type=int, default=33)
    geo.add_argument("--csv-out", default=None, help="write the path CSV here instead of inlining it")
    geo.add_argument("--out", default=None)
    geo.set_defaults(fn=cmd_geodesic)

    cs = sub.add_parser("curvature-scan", help="flag curvature at random timelike flags")
    common(cs)
    cs.add_argument("--samples", type=int, default=200)
    cs.add_argument("--seed", type=int, default=0)
    cs.add_argument("--out", default=None, help="CSV output path")
    cs.set_defaults(fn=cmd_curvature_scan)

    b = sub.add_parser("berwald-check", help="direction dependence of the Chern connection")
    common(b)
    b.add_argument("--x", default=None, help="single point (overrides --points)")
    b.add_argument("--points", type=int, default=4)
    b.add_argument("--dirs", type=int, default=16)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(fn=cmd_berwald)

    v = sub.add_parser("verify", help="run verification checks")
    common(v)
    v.add_argument("which", choices=list(_VERIFY_CHECKS))
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--budget", default=None, help="JSON object or file overriding sampling budgets")
    v.add_argument("--out", default=None)
    v.add_argument("--timing", action="store_true", help="include runtime_ms (breaks byte-identity)")
    v.set_defaults(fn=cmd_verify)

    vd = sub.add_parser("variance-demo", help="sqrt-variance convexity along a W2 geodesic")
    common(vd, model=False)
    vd.add_argument("--space", required=True)
    vd.add_argument("--mu", required=True)
    vd.add_argument("--nu", required=True)
    vd.add_argument("--grid", type=int, default=17)
    vd.add_argument("--out", default=None)
    vd.set_defaults(fn=cmd_variance_demo)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if not hasattr(args, "json"):
        args.json = False
    try:
        return args.fn(args)
    except (GeometryError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
