"""Command-line driver: ``lagflow {run,convergence,contractivity,validate}``.

Configuration files hold ``key=value`` entries, one or more per line,
separated by whitespace; ``#`` starts a comment. Unknown keys, malformed
values and constraint violations are reported with their line number.
"""

import argparse
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import experiments as ex
from .basis import gram_of_gradients, make_index_set
from .jko import JkoConfig, StepProblem, run, setup, write_entropy_series
from .lagrangian import discrete_mass, state_tables, write_snapshot
from .model import make_density, make_potential, make_power_pressure

log = logging.getLogger("lagflow")

COMMANDS = ("run", "convergence", "contractivity", "validate")


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass
class RunConfig:
    """Validated run configuration with the documented defaults."""

    command: str = "run"
    d: int = 2
    K: int = 8
    tau: float = 5e-4
    T: float = 0.01
    m: float = 2.0
    potential: str = "exp1"
    initial: str = "exp1"
    L: int = 200
    seed: int = 0
    out: str = "."
    tol: float = 1e-8
    Ks: Tuple[int, ...] = (4, 8, 12)
    lam: float = 10.0
    steps: Optional[int] = None
    snapshots: Tuple[float, ...] = ()
    fem: bool = False
    threads: int = 1
    cells: Optional[int] = None
    points: int = 2
    explicit: frozenset = field(default_factory=frozenset, compare=False)

    def given(self, key):
        return key in self.explicit


def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(f)


def _real(v):
    f = float(v)
    if not math.isfinite(f):
        raise ValueError(f"expected a finite number, got {v!r}")
    return f


def _bool(v):
    s = v.lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _list(conv):
    def parse(v):
        items = [x for x in v.replace(";", ",").split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(x.strip()) for x in items)
    return parse


def _command(v):
    if v not in COMMANDS:
        raise ValueError(f"unknown command {v!r} (expected one of {', '.join(COMMANDS)})")
    return v


def _potential(v):
    make_potential(v)
    return v


def _density(v):
    make_density(v)
    return v


_PARSERS = {
    "command": _command, "d": _int, "K": _int, "tau": _real, "T": _real, "m": _real,
    "potential": _potential, "initial": _density, "L": _int, "seed": _int, "out": str,
    "tol": _real, "Ks": _list(_int), "lam": _real, "steps": _int,
    "snapshots": _list(_real), "fem": _bool, "threads": _int, "cells": _int, "points": _int,
}
_ALIASES = {"dim": "d", "lambda": "lam", "Klist": "Ks", "K_list": "Ks", "seeds": "seed"}


def _check(cfg):
    """Constraint checks; returns (key, message) of the first violation or None."""
    positive = ("K", "tau", "T", "m", "tol", "lam", "threads", "points")
    for k in positive:
        if not getattr(cfg, k) > 0:
            return k, f"{k} must be positive, got {getattr(cfg, k)!r}"
    if cfg.d not in (1, 2):
        return "d", f"d must be 1 or 2, got {cfg.d!r}"
    if cfg.L < 3:
        return "L", f"L must be >= 3, got {cfg.L!r}"
    if cfg.steps is not None and cfg.steps < 1:
        return "steps", f"steps must be >= 1, got {cfg.steps!r}"
    if cfg.cells is not None and cfg.cells < 1:
        return "cells", f"cells must be >= 1, got {cfg.cells!r}"
    if any(k < 1 for k in cfg.Ks) or len(cfg.Ks) < 2:
        return "Ks", "Ks needs at least two positive cutoffs"
    if any(t < 0 for t in cfg.snapshots):
        return "snapshots", "snapshot times must be nonnegative"
    if cfg.seed < 0:
        return "seed", f"seed must be nonnegative, got {cfg.seed!r}"
    if cfg.d != 2 and (cfg.potential == "exp1" or cfg.initial == "exp1"):
        key = "potential" if cfg.potential == "exp1" else "initial"
        return key, "exp1 data are two-dimensional; set d=2"
    return None


def parse_config(text, base=None):
    """Parse configuration text into a validated :class:`RunConfig`."""
    cfg = base if base is not None else RunConfig()
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for tok in line.split():
            if "=" not in tok:
                raise ConfigError(f"expected key=value, got {tok!r}", lineno)
            key, val = (s.strip() for s in tok.split("=", 1))
            key = _ALIASES.get(key, key)
            if key not in _PARSERS:
                raise ConfigError(f"unknown key {key!r}", lineno)
            if not val:
                raise ConfigError(f"missing value for {key!r}", lineno)
            try:
                values[key] = _PARSERS[key](val)
            except ValueError as exc:
                raise ConfigError(f"malformed value for {key!r}: {exc}", lineno) from None
            where[key] = lineno
    cfg = replace(cfg, **values, explicit=cfg.explicit | frozenset(values))
    bad = _check(cfg)
    if bad is not None:
        key, msg = bad
        raise ConfigError(msg, where.get(key))
    return cfg


# --------------------------------------------------------------------------
# commands


def _fmt(v):
    return f"{v:.16e}"


def _jko_config(cfg, **over):
    kw = dict(tau=cfg.tau, K=cfg.K, T=cfg.T, tol=cfg.tol, cells=cfg.cells, points=cfg.points)
    if cfg.steps is not None:
        kw["T"] = cfg.steps * cfg.tau
    kw.update(over)
    return JkoConfig(**kw)


def cmd_run(cfg):
    model = make_power_pressure(cfg.m)
    pot = make_potential(cfg.potential)
    dens = make_density(cfg.initial, dim=cfg.d)
    jc = _jko_config(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.d == 2 and (cfg.snapshots or cfg.fem):
        snaps = cfg.snapshots or (0.0, jc.steps * jc.tau)
        res = ex.run_qualitative(cfg.K, cfg.tau, jc.steps * jc.tau, snaps, cfg.m, pot, dens,
                                 cfg.out, cfg.L if cfg.fem else None, cfg.threads,
                                 cfg.cells, cfg.points)
        print(f"final entropy {_fmt(res.entropy[-1])}")
        if cfg.fem:
            print(f"max relative entropy deviation from FEM {res.overlay_deviation():.3e}")
        return 0
    tr = run(jc, model, pot, dens, dim=cfg.d, keep_states=False)
    write_entropy_series(os.path.join(cfg.out, "entropy_lagrangian.dat"), tr.times, tr.entropy)
    write_snapshot(tr.final, os.path.join(cfg.out, "snapshot_final.csv"))
    print(f"{jc.steps} steps, final entropy {_fmt(tr.entropy[-1])}, "
          f"mass {_fmt(discrete_mass(tr.final))}")
    return 0


def cmd_convergence(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    dens = make_density(cfg.initial, dim=cfg.d)
    pot = make_potential(cfg.potential if cfg.given("potential") else "zero")
    T = cfg.steps * cfg.tau if cfg.steps is not None else cfg.T
    res = ex.run_convergence(cfg.Ks, cfg.tau, T, cfg.m, pot, dens, cfg.L,
                             out=os.path.join(cfg.out, "error.dat"), threads=cfg.threads,
                             cells=cfg.cells, points=cfg.points)
    print(f"{'K':>4}  {'L2 error':>12}")
    for r in res.records:
        print(f"{r.K:>4}  {r.error:12.5e}")
    print(f"fitted slope {res.slope:.4f}")
    return 0


def cmd_contractivity(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    K = cfg.K if cfg.given("K") else 12
    tau = cfg.tau if cfg.given("tau") else 1e-3
    steps = cfg.steps if cfg.steps is not None else 100
    rec = ex.run_contractivity(cfg.lam, K, tau, steps, cfg.seed, m=cfg.m,
                               out=os.path.join(cfg.out, "convex_1.dat"),
                               envelope_out=os.path.join(cfg.out, "convex_2.dat"),
                               threads=cfg.threads)
    print(f"initial distance {rec.distances[0]:.5e}, final {rec.distances[-1]:.5e}")
    print(f"fitted rate {rec.rate:.4f} (lambda = {rec.lam:g})")
    return 0


# --------------------------------------------------------------------------
# validation suite


def _random_feasible(problem, rng, scale=0.3):
    z = rng.standard_normal(problem.tables.grad.shape[0])
    z *= scale / np.max(np.abs(np.einsum("k,knab->nab", z, problem.tables.hess)))
    return z


def _fd_errors(problem, z, h=1e-6):
    g = problem.gradient(z)
    H = problem.hessian(z)
    n = z.size
    gfd = np.empty(n)
    Hfd = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        gfd[i] = (problem.value(z + e) - problem.value(z - e)) / (2 * h)
        Hfd[:, i] = (problem.gradient(z + e) - problem.gradient(z - e)) / (2 * h)
    eg = np.linalg.norm(g - gfd) / max(np.linalg.norm(g), 1e-300)
    eh = np.linalg.norm(H - Hfd) / max(np.linalg.norm(H), 1e-300)
    return eg, eh


def validation_suite(cfg, rng=None):
    """Return ``[(name, passed, detail)]`` for the built-in invariant checks."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    checks = []
    model = make_power_pressure(cfg.m)
    dim = cfg.d
    pot = make_potential(cfg.potential if dim == 2 else "zero")
    dens = make_density(cfg.initial if dim == 2 else "cosine(0.5)", dim=dim)

    K = min(cfg.K, 4)
    jc = JkoConfig(tau=cfg.tau, K=K, T=20 * cfg.tau, tol=cfg.tol)
    _, iset, st = setup(jc, model, pot, dens, dim)
    prob = StepProblem(st, state_tables(st, iset), model, pot, jc.tau)
    worst_g = worst_h = 0.0
    for _ in range(3):
        eg, eh = _fd_errors(prob, _random_feasible(prob, rng))
        worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)
    checks.append(("gradient vs finite differences", worst_g <= 1e-6, f"{worst_g:.2e}"))
    checks.append(("Hessian vs finite differences", worst_h <= 1e-5, f"{worst_h:.2e}"))

    G = gram_of_gradients(make_index_set(dim, min(cfg.K, 4)))
    dev = float(np.max(np.abs(G - np.eye(len(G)))))
    checks.append(("gradient Gram matrix = identity", dev <= 1e-6, f"{dev:.2e}"))

    tr = run(jc, model, pot, dens, dim=dim, keep_states=True)
    masses = np.array([discrete_mass(s) for s in tr.states])
    mdev = float(np.max(np.abs(masses - masses[0])))
    checks.append(("mass conservation (20 steps)", mdev <= 1e-14, f"{mdev:.2e}"))
    dE = float(np.max(np.diff(tr.entropy)))
    checks.append(("entropy non-increasing (20 steps)", dE <= 0.0, f"max dE {dE:.2e}"))
    conv = all(r.converged for r in tr.reports)
    gmax = max(r.grad_norm for r in tr.reports)
    checks.append(("Newton converged every step", conv, f"max |grad| {gmax:.2e}"))
    return checks


def cmd_validate(cfg):
    t0 = time.perf_counter()
    checks = validation_suite(cfg)
    width = max(len(n) for n, _, _ in checks)
    print(f"{'check':<{width}}  result  detail")
    for name, ok, detail in checks:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL':<6}  {detail}")
    failed = sum(not ok for _, ok, _ in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed "
          f"({time.perf_counter() - t0:.1f}s)")
    return 1 if failed else 0


_DISPATCH = {"run": cmd_run, "convergence": cmd_convergence,
             "contractivity": cmd_contractivity, "validate": cmd_validate}


def build_parser():
    p = argparse.ArgumentParser(prog="lagflow",
                                description="Lagrangian minimizing-movement solver.")
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="command (overrides a 'command' key in the config)")
    p.add_argument("--config", metavar="PATH", help="configuration file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, metavar="N", help="random seed")
    p.add_argument("--threads", type=int, metavar="N",
                   help="concurrent independent runs (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    text = ""
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            print(f"lagflow: cannot read config file {args.config!r}: {exc.strerror}",
                  file=sys.stderr)
            return 2
    over = []
    if args.command:
        over.append(f"command={args.command}")
    if args.out is not None:
        over.append(f"out={args.out}")
    if args.seed is not None:
        over.append(f"seed={args.seed}")
    if args.threads is not None:
        over.append(f"threads={args.threads}")
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"lagflow: {args.config or 'defaults'}: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(" ".join(over), base=cfg)
    except ConfigError as exc:
        print(f"lagflow: command line: {exc.args[0].split(': ', 1)[-1]}", file=sys.stderr)
        return 2
    try:
        return _DISPATCH[cfg.command](cfg)
    except Exception as exc:  # noqa: BLE001 - report any solver failure as a diagnostic
        log.debug("failure", exc_info=True)
        print(f"lagflow: {cfg.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
