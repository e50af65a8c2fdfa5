"""Experiment drivers: entropy overlay, convergence order and contractivity.

All drivers return plain records and optionally write whitespace separated
text files with a one-line ``#`` header and 17 significant digits.
"""

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .basis import build_tables
from .fem import FemGrid, fem_run, interpolate_at
from .jko import JkoConfig, run, setup
from .lagrangian import (LagrangianState, density_at_nodes, det_small, map_distance,
                         positive_definite, transport_eval, transport_jacobian,
                         write_snapshot)
from .model import (exp1_potential, make_initial_density_exp1, make_power_pressure,
                    quadratic_potential, uniform_density, zero_potential)

log = logging.getLogger(__name__)

# relative slack when comparing physical times built from step counts
_TIME_RTOL = 1e-9


def write_columns(path, header, *columns):
    """Write equal-length columns as ``%.16e`` text under a ``# header`` line."""
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = {len(c) for c in cols}
    if len(n) != 1:
        raise ValueError("columns must have equal length")
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for row in zip(*cols):
            fh.write(" ".join(f"{v:.16e}" for v in row) + "\n")


def read_columns(path):
    return np.loadtxt(path, comments="#", ndmin=2)


# --------------------------------------------------------------------------
# error metric


def l2_error(lag_state, fem_state, tau):
    """Eulerian ``L^2`` distance between a particle state and a FEM field.

    The integral over the cube is pulled back through the transport map, so
    it becomes ``sum_k (u_lag - u_ref)^2 sigma_k w_k`` over the reference
    nodes, with ``u_ref`` interpolated at the pushed positions.
    """
    t_lag = lag_state.step * tau
    if not math.isclose(t_lag, fem_state.t, rel_tol=_TIME_RTOL, abs_tol=1e-14):
        raise ValueError(f"time mismatch: particle state at t={t_lag!r}, "
                         f"FEM state at t={fem_state.t!r}")
    u = density_at_nodes(lag_state)
    uref = interpolate_at(fem_state, lag_state.positions)
    w = lag_state.sigma * lag_state.grid.weights
    return float(np.sqrt(np.sum((u - uref) ** 2 * w)))


def fit_loglog_slope(Ks, errors):
    """Least-squares ``p`` in ``error ~ C K^{-p}``."""
    slope, _ = np.polyfit(np.log(np.asarray(Ks, float)), np.log(np.asarray(errors, float)), 1)
    return float(-slope)


def fit_exponential_rate(times, distances, skip=5):
    """Least-squares ``r`` in ``d(t) ~ C exp(-r t)``, discarding ``skip`` leading samples."""
    t = np.asarray(times, float)[skip:]
    d = np.asarray(distances, float)[skip:]
    if t.size < 2:
        raise ValueError("need at least two samples after the transient")
    if np.any(d <= 0):
        raise ValueError("distances must be positive for a log-linear fit")
    slope, _ = np.polyfit(t, np.log(d), 1)
    return float(-slope)


# --------------------------------------------------------------------------
# convergence order


@dataclass
class ErrorRecord:
    K: int
    T: float
    error: float
    seconds: float

    def __post_init__(self):
        if not self.error >= 0:
            raise ValueError(f"error must be nonnegative, got {self.error!r}")


@dataclass
class ConvergenceResult:
    records: List[ErrorRecord]
    slope: float
    fem_L: int

    @property
    def Ks(self):
        return [r.K for r in self.records]

    @property
    def errors(self):
        return [r.error for r in self.records]

    def monotone(self):
        e = self.errors
        return all(b < a for a, b in zip(e, e[1:]))


def fem_reference(L, tau, T, model, potential, density, dim=2):
    """Fully implicit FEM solution at time ``T`` (plus its entropy series)."""
    grid = FemGrid(L, dim)
    return fem_run(grid, density, tau, T, model, potential)


def _one_convergence_run(K, tau, T, model, potential, density, fem_state, cells, points):
    t0 = time.perf_counter()
    cfg = JkoConfig(tau=tau, K=K, T=T, cells=cells, points=points)
    tr = run(cfg, model, potential, density, keep_states=False)
    err = l2_error(tr.final, fem_state, tau)
    return ErrorRecord(K, tr.final.step * tau, err, time.perf_counter() - t0)


def run_convergence(Ks=(4, 8, 12), tau=5e-4, T=0.01, m=2.0, potential=None, density=None,
                    fem_L=200, fem_state=None, out=None, threads=1, cells=None, points=2):
    """Errors against a FEM reference for several cutoffs and their log-log slope.

    Defaults reproduce the convergence experiment: ``V = 0``, ``m = 2`` and
    the two-bump initial density. ``fem_state`` may be passed to reuse a
    precomputed reference at time ``T``. With ``out`` set, a two-column file
    ``(K, error)`` is written there.
    """
    Ks = [int(k) for k in Ks]
    if len(Ks) < 2:
        raise ValueError("need at least two cutoffs to fit a slope")
    model = make_power_pressure(m)
    potential = zero_potential() if potential is None else potential
    density = make_initial_density_exp1() if density is None else density
    if fem_state is None:
        fem_state, _, _ = fem_reference(fem_L, tau, T, model, potential, density)
    args = (tau, T, model, potential, density, fem_state, cells, points)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda K: _one_convergence_run(K, *args), Ks))
    else:
        records = [_one_convergence_run(K, *args) for K in Ks]
    for r in records:
        log.info("K=%d error=%.6e (%.1fs)", r.K, r.error, r.seconds)
    res = ConvergenceResult(records, fit_loglog_slope(Ks, [r.error for r in records]),
                            fem_state.grid.L)
    if out is not None:
        write_columns(out, "K error", res.Ks, res.errors)
    return res


# --------------------------------------------------------------------------
# contractivity


@dataclass
class ContractionRecord:
    times: np.ndarray
    distances: np.ndarray
    rate: float
    lam: float
    amplitudes: tuple = ()

    def __post_init__(self):
        if np.any(np.asarray(self.distances) < 0):
            raise ValueError("distances must be nonnegative")

    def envelope(self):
        """Reference curve ``d_0 exp(-lam t)``."""
        return self.distances[0] * np.exp(-self.lam * (self.times - self.times[0]))


def _min_det(z, tables):
    A = transport_jacobian(z, tables)
    if not np.all(positive_definite(A)):
        return -np.inf
    return float(det_small(A).min())


def random_initial_map(grid, index_set, rng, min_det=0.5, iters=60):
    """Random increment ``a * w``, ``w`` i.i.d. uniform on ``[-1, 1]``.

    The amplitude ``a`` is the largest (to bisection accuracy) for which the
    map stays feasible with ``det Dt >= min_det`` at every node. Returns the
    pushed state (step 0) and ``a``.
    """
    tables = build_tables(index_set, grid.nodes)
    w = rng.uniform(-1.0, 1.0, len(index_set))
    lo, hi = 0.0, 1e-3
    while _min_det(hi * w, tables) >= min_det:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise RuntimeError("could not bracket the perturbation amplitude")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _min_det(mid * w, tables) >= min_det:
            lo = mid
        else:
            hi = mid
    z = lo * w
    A = transport_jacobian(z, tables)
    st = LagrangianState(grid, 0, transport_eval(z, tables), det_small(A))
    return st, lo


def run_contractivity(lam=10.0, K=12, tau=1e-3, steps=100, seed=0, seeds=None, m=2.0,
                      min_det=0.5, skip=5, out=None, envelope_out=None, threads=1):
    """Evolve two randomly perturbed maps and fit the decay of their distance.

    Both runs use ``V = lam/2 |x|^2``, a uniform reference density and the
    same configuration. ``seeds`` overrides the default pair
    ``(seed, seed + 1)``. ``out`` receives ``(t, distance)`` and
    ``envelope_out`` the reference ``(t, d_0 exp(-lam t))``.
    """
    if seeds is None:
        seeds = (seed, seed + 1)
    model = make_power_pressure(m)
    pot = quadratic_potential(lam)
    cfg = JkoConfig(tau=tau, K=K, T=steps * tau)
    grid, iset, _ = setup(cfg, model, pot, uniform_density())

    def evolve(s):
        st, a = random_initial_map(grid, iset, np.random.default_rng(s), min_det)
        tr = run(cfg, model, pot, None, state=st, index_set=iset)
        return tr.states, a

    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            (sa, aa), (sb, ab) = pool.map(evolve, seeds)
    else:
        (sa, aa), (sb, ab) = evolve(seeds[0]), evolve(seeds[1])
    times = np.array([s.step * tau for s in sa])
    dist = np.array([map_distance(x, y) for x, y in zip(sa, sb)])
    rate = fit_exponential_rate(times, dist, skip) if dist[-1] > 0 else math.inf
    rec = ContractionRecord(times, dist, rate, float(lam), (aa, ab))
    if out is not None:
        write_columns(out, "t distance", times, dist)
    if envelope_out is not None:
        write_columns(envelope_out, "t envelope", times, rec.envelope())
    return rec


def nonincreasing_after(values, skip=5, rtol=0.0):
    v = np.asarray(values, float)[skip:]
    return bool(np.all(v[1:] <= v[:-1] * (1.0 + rtol)))


# --------------------------------------------------------------------------
# qualitative run


QUALITATIVE_TIMES = (0.0, 2.5e-3, 4e-3, 5e-2)


@dataclass
class QualitativeResult:
    times: np.ndarray
    entropy: np.ndarray
    snapshots: dict = field(default_factory=dict)
    fem_times: Optional[np.ndarray] = None
    fem_entropy: Optional[np.ndarray] = None

    def overlay_deviation(self):
        """``max |E_lag - E_fem| / |E_lag(0)|`` over the common time grid."""
        if self.fem_entropy is None:
            raise ValueError("no FEM companion run")
        if len(self.fem_times) != len(self.times) or not np.allclose(self.fem_times, self.times):
            raise ValueError("entropy series live on different time grids")
        return float(np.max(np.abs(self.entropy - self.fem_entropy)) / abs(self.entropy[0]))


def _snapshot_steps(snapshot_times, tau):
    steps = {}
    for t in snapshot_times:
        n = round(t / tau)
        if t < 0 or not math.isclose(n * tau, t, rel_tol=1e-9, abs_tol=1e-14):
            raise ValueError(f"snapshot time {t!r} is not a nonnegative multiple of tau={tau!r}")
        steps[n] = t
    return steps


def run_qualitative(K=8, tau=5e-4, T=None, snapshot_times=QUALITATIVE_TIMES, m=2.0,
                    potential=None, density=None, out_dir=None, fem_L=None, threads=1,
                    cells=None, points=2):
    """Two-bump flow in the two-well potential with snapshots and entropy.

    ``T`` defaults to the last snapshot time. With ``out_dir`` set, particle
    snapshots ``snapshot_<t>.csv``, ``entropy_lagrangian.dat`` and (with
    ``fem_L``) ``entropy_fem.dat`` are written there.
    """
    model = make_power_pressure(m)
    potential = exp1_potential() if potential is None else potential
    density = make_initial_density_exp1() if density is None else density
    if T is None:
        T = max(snapshot_times)
    steps = _snapshot_steps(snapshot_times, tau)
    cfg = JkoConfig(tau=tau, K=K, T=T, cells=cells, points=points)
    if max(steps) > cfg.steps:
        raise ValueError(f"snapshot time {max(snapshot_times)!r} beyond final time {T!r}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    snaps = {}

    def keep(state):
        if state.step in steps:
            t = steps[state.step]
            path = None
            if out_dir is not None:
                path = os.path.join(out_dir, f"snapshot_{t:.6g}.csv")
                write_snapshot(state, path)
            snaps[t] = path if path is not None else state

    def fem():
        grid = FemGrid(fem_L)
        _, ft, fe = fem_run(grid, density, tau, cfg.steps * tau, model, potential)
        return np.asarray(ft), np.asarray(fe)

    # march in chunks that end at the snapshot steps
    def lagrangian_with_snapshots():
        _, iset, st = setup(cfg, model, potential, density)
        keep(st)
        ent = list(st.entropy)
        done = 0
        for n in sorted(s for s in steps if s > 0) + [cfg.steps]:
            if n <= done:
                continue
            sub = JkoConfig(tau=tau, K=K, T=(n - done) * tau, cells=cells, points=points)
            tr = run(sub, model, potential, density, state=st, index_set=iset,
                     keep_states=False)
            st = tr.final
            ent = list(st.entropy)
            done = n
            keep(st)
        return np.arange(len(ent)) * tau, np.asarray(ent)

    jobs = [lagrangian_with_snapshots] + ([fem] if fem_L else [])
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            outs = list(pool.map(lambda f: f(), jobs))
    else:
        outs = [f() for f in jobs]
    times, ent = outs[0]
    res = QualitativeResult(times, ent, snaps)
    if fem_L:
        res.fem_times, res.fem_entropy = outs[1]
    if out_dir is not None:
        write_columns(os.path.join(out_dir, "entropy_lagrangian.dat"), "t E", times, ent)
        if fem_L:
            write_columns(os.path.join(out_dir, "entropy_fem.dat"), "t E",
                          res.fem_times, res.fem_entropy)
    return res


__all__ = [
    "l2_error", "fit_loglog_slope", "fit_exponential_rate", "ErrorRecord",
    "ConvergenceResult", "fem_reference", "run_convergence", "ContractionRecord",
    "random_initial_map", "run_contractivity", "nonincreasing_after", "QualitativeResult",
    "run_qualitative", "QUALITATIVE_TIMES", "write_columns", "read_columns",
]
