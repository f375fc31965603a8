"""Command-line entry point: ``occfluct <subcommand> [--config FILE] [--key value ...]``.

Configuration is a flat JSON object; any key may also be given as a flag, and flags win.
Every report starts with a header record (version, resolved config, seed, time budget) and
continues with one JSON record per line; a human-readable summary follows as ``#`` lines.

Exit codes: 0 success, 1 acceptance failure, 2 config error, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "d": 1, "alpha": 1.5, "beta": 0.5, "V": 1.0, "T": 4.0, "tau": 1.0, "dt": 0.05,
    "box_eps": 1e-3, "box": None, "cap": 10**6, "replicas": 100, "seed": 0,
    "width": 1.0, "amplitude": 1.0, "times": [1.0], "z": [1.0],
    "u": 0.0, "v": 1.0, "s": 2.0, "t": 3.0, "z1": 1.0, "z2": 1.0,
    "T_grid": [100.0, 215.443469, 464.158883, 1000.0, 2154.43469, 4641.58883, 10000.0],
    "samples": 1000, "override": False, "workers": 1, "budget_s": 3600.0, "output": "-",
    "gamma_grid": [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0],
    "beta_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
}
LIST_KEYS = {"times", "z", "T_grid", "gamma_grid", "beta_grid"}
SUBCOMMANDS = ("simulate", "limit", "codiff", "bridge", "verify", "regime")


class ConfigError(ValueError):
    pass


def _coerce(key, raw):
    if key in LIST_KEYS:
        return [float(x) for x in str(raw).split(",") if x.strip()]
    if key == "override":
        return str(raw).lower() in ("1", "true", "yes")
    if key == "output":
        return raw
    default = DEFAULTS.get(key)
    if isinstance(default, bool):
        return bool(raw)
    if isinstance(default, int) and key not in ("d",):
        return int(float(raw))
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key!r} expects a number, got {raw!r}") from exc


def build_parser():
    ap = argparse.ArgumentParser(prog="occfluct", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="flat JSON file with run keys")
    for key in DEFAULTS:
        ap.add_argument(f"--{key}", dest=key, default=None)
    return ap


def resolve_config(argv):
    ap = build_parser()
    ns = ap.parse_args(argv)
    cfg = dict(DEFAULTS)
    if ns.config:
        try:
            with open(ns.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key in DEFAULTS:
        raw = getattr(ns, key)
        if raw is not None:
            cfg[key] = _coerce(key, raw)
    d = float(cfg["d"])
    cfg["d"] = int(d) if d == int(d) else d
    return ns.subcommand, cfg


def _params(cfg, need_window=True):
    from .particle_system import ModelParams

    try:
        p = ModelParams(cfg["d"], float(cfg["alpha"]), float(cfg["beta"]), float(cfg["V"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if need_window and not cfg["override"] and not p.intermediate:
        raise ConfigError(
            f"dimension condition alpha/beta < d < alpha(1+beta)/beta violated "
            f"({p.lower_dim:.6g} < {p.d} < {p.upper_dim:.6g}); pass --override true for boundary studies")
    return p


class Report:
    """Serialized writer: header, JSON records, summary lines."""

    def __init__(self, fh, subcommand, cfg):
        self.fh = fh
        header = {"tool": "occfluct", "version": __version__, "subcommand": subcommand,
                  "seed": cfg["seed"], "budget_s": cfg["budget_s"], "config": cfg}
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")

    def record(self, obj):
        self.fh.write(json.dumps(obj, sort_keys=True, default=_jsonable) + "\n")

    def summary(self, text):
        for line in str(text).splitlines():
            self.fh.write(line + "\n" if line.startswith("#") else f"# {line}\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(type(x))


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w") as fh:
            yield fh


def cmd_regime(cfg, rep):
    from .codifference import gamma_plane_classify, kappa_formula

    p = _params(cfg)
    kappa, regime = kappa_formula(p.d, p.alpha, p.beta)
    rep.record({"d": p.d, "alpha": p.alpha, "beta": p.beta, "kappa": kappa, "regime": regime,
                "H": p.H, "intermediate": p.intermediate})
    for g in cfg["gamma_grid"]:
        for b in cfg["beta_grid"]:
            try:
                k, region = gamma_plane_classify(g, b)
            except ValueError as exc:
                rep.record({"gamma": g, "beta": b, "region": None, "reason": str(exc)})
                continue
            rep.record({"gamma": g, "beta": b, "kappa": k, "region": region})
    rep.summary(f"kappa = {kappa:.6g}, regime {regime}")
    return EXIT_OK


def cmd_limit(cfg, rep):
    from .limit_process import build_kernel_grid, limit_constants, log_charfn, sample_xi
    from .rng import RngStream

    p = _params(cfg)
    c = limit_constants(p)
    rep.record({"K": c.K, "K1": c.K1, "H": c.H, "intermediate": c.intermediate})
    times = np.asarray(cfg["times"], dtype=float)
    grid = build_kernel_grid(p, times)
    for z in cfg["z"]:
        for j, t in enumerate(times):
            zz = np.zeros(len(times))
            zz[j] = z
            val = log_charfn(p, times, zz, grid=grid)
            rep.record({"t": t, "z": z, "log_charfn": val})
    n = int(cfg["samples"])
    if n > 0:
        xs = sample_xi(grid, RngStream(int(cfg["seed"]), 1), size=n)
        for i, row in enumerate(xs):
            rep.record({"sample": i, "times": times, "xi": row})
    rep.summary(f"K = {c.K:.10g}  K1 = {c.K1:.10g}  H = {c.H:.10g}")
    return EXIT_OK


def _query(cfg):
    from .codifference import CodiffQuery

    try:
        return CodiffQuery(cfg["u"], cfg["v"], cfg["s"], cfg["t"], cfg["z1"], cfg["z2"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_codiff(cfg, rep):
    from .codifference import codiff_sweep

    p = _params(cfg)
    report = codiff_sweep(p, _query(cfg), cfg["T_grid"])
    for T, dp, dm, e in zip(report.T, report.D_plus, report.D_minus, report.quad_err):
        rep.record({"T": T, "D_plus": dp, "D_minus": dm, "quad_err": e})
    rep.summary(report.table())
    return EXIT_OK


def _phi(cfg, d):
    from .particle_system import TestFunction

    return TestFunction.bump(int(d), width=float(cfg["width"]), amplitude=float(cfg["amplitude"]))


def cmd_simulate(cfg, rep):
    from .particle_system import emit_records, simulate_occupation

    p = _params(cfg, need_window=False)
    recs = simulate_occupation(p, _phi(cfg, p.d), cfg["T"], cfg["tau"], cfg["dt"], seed=int(cfg["seed"]),
                               replicas=int(cfg["replicas"]), L=cfg["box"], eps=cfg["box_eps"],
                               cap=int(cfg["cap"]), workers=int(cfg["workers"]))
    emit_records(recs, rep.fh)
    flagged = sum(r.flagged for r in recs)
    rep.summary(f"replicates {len(recs)}  flagged {flagged}  box {recs[0].box if recs else None}")
    return EXIT_OK


def cmd_bridge(cfg, rep):
    from .particle_system import (TimeWeight, check_vT, laplace_functional, simulate_occupation,
                                  solve_vT, space_time_pairing_values)

    p = _params(cfg, need_window=False)
    phi = _phi(cfg, p.d)
    chi = TimeWeight()
    T = float(cfg["T"])
    grid = solve_vT(p, phi, chi, T)
    checks = check_vT(grid)
    exact = laplace_functional(grid, p, phi, chi, T)
    recs = simulate_occupation(p, phi, T, 1.0, cfg["dt"], seed=int(cfg["seed"]), replicas=int(cfg["replicas"]),
                               L=cfg["box"], eps=cfg["box_eps"], cap=int(cfg["cap"]), workers=int(cfg["workers"]))
    x = space_time_pairing_values(recs, p, T, chi)
    ok = np.isfinite(x)
    e = np.exp(-x[ok])
    mc, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(ok.sum()))
    z = abs(mc - exact) / se
    passed = z < 3 and checks["in_unit_range"] and checks["dominated"]
    rep.record({"picard": exact, "mc": mc, "se": se, "z": z, "flagged": int((~ok).sum()),
                "iterations": grid.iterations, "residual": grid.residual, **checks})
    rep.summary(f"Picard {exact:.6f}  MC {mc:.6f} +- {se:.6f}  ({z:.2f} SE)  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_verify(cfg, rep):
    """Fast property suite; the heavy acceptance runs live in the test suite."""
    from .branching_law import offspring_table_probs, offspring_survival
    from .codifference import gamma_plane_classify, kappa_formula
    from .harness import inequality_suite
    from .limit_process import limit_constants
    from .particle_system import ModelParams
    from .rng import RngStream
    from .stable_density import DensityEvaluator

    results = {}
    for b in (0.3, 0.5, 0.8):
        K = 10**6
        total = offspring_table_probs(b, K).sum() + float(offspring_survival(b, K))
        results[f"offspring_mass_beta{b}"] = abs(total - 1.0) < 1e-12
    rho = np.linspace(0, 8, 50)
    for d in (1, 2, 3):
        ev = DensityEvaluator(2.0, d)
        rel = np.abs(ev.fourier_p1(rho) / ev.p1(rho) - 1.0)
        results[f"gaussian_inversion_d{d}"] = bool(rel.max() < 1e-6)
    ev = DensityEvaluator(2.0, 1)
    results["kernel_closed_form"] = abs(float(ev.integrated_kernel(0.0, 1.0)) - 1 / math.sqrt(math.pi)) < 1e-12
    ineq = inequality_suite(10**5, RngStream(int(cfg["seed"]), 12))
    results["inequalities"] = ineq.passed
    p = ModelParams(5, 2.0, 0.5)
    c = limit_constants(p)
    results["K_identity"] = abs(c.K - c.K1 ** (1 / 1.5)) < 1e-15
    results["H_value"] = abs(c.H - 5 / 6) < 1e-15
    viol = 0
    for d in np.linspace(0.5, 6, 12):
        for a in np.linspace(0.2, 1.99, 10):
            for b in np.linspace(0.05, 0.95, 10):
                q = ModelParams(float(d), float(a), float(b))
                if not q.intermediate:
                    continue
                k, _ = kappa_formula(q.d, q.alpha, q.beta)
                try:
                    kg, _ = gamma_plane_classify(q.d / q.alpha - 1, q.beta)
                except ValueError:
                    viol += 1
                    continue
                viol += abs(k - kg) > 1e-12
    results["gamma_plane"] = viol == 0
    for k, v in results.items():
        rep.record({"check": k, "pass": bool(v)})
    failed = [k for k, v in results.items() if not v]
    rep.summary("all checks pass" if not failed else f"failed: {', '.join(failed)}")
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {"regime": cmd_regime, "limit": cmd_limit, "codiff": cmd_codiff, "simulate": cmd_simulate,
            "bridge": cmd_bridge, "verify": cmd_verify}


def main(argv=None) -> int:
    from .particle_system import NonConvergence
    from .stable_density import QuadratureError

    try:
        sub, cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with _open_out(cfg["output"]) as fh:
            rep = Report(fh, sub, cfg)
            return COMMANDS[sub](cfg, rep)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, QuadratureError) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
