"""Independent oracles shared by the test modules."""

import numpy as np

from lagflow.jko import StepProblem, setup, JkoConfig
from lagflow.lagrangian import state_tables


def central_gradient(f, z, h=1e-6):
    z = np.asarray(z, float)
    g = np.empty(z.size)
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def central_jacobian(f, z, h=1e-6):
    z = np.asarray(z, float)
    cols = []
    for i in range(z.size):
        e = np.zeros(z.size)
        e[i] = h
        cols.append((np.asarray(f(z + e)) - np.asarray(f(z - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def random_feasible(problem, rng, scale=0.3):
    """Random coefficients with ``|sum z_j Hess b_j| <= scale`` node-wise."""
    z = rng.standard_normal(problem.nmodes)
    z *= scale / np.max(np.abs(np.einsum("k,knab->nab", z, problem.H)))
    assert problem.feasible(z)
    return z


def step_problem(model, potential, density, K=4, tau=5e-4, dim=2, **kw):
    cfg = JkoConfig(tau=tau, K=K, **kw)
    _, iset, st = setup(cfg, model, potential, density, dim)
    return StepProblem(st, state_tables(st, iset), model, potential, tau), iset, st


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))
