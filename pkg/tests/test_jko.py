import math
import warnings

import numpy as np
import pytest

from lagflow.jko import (JkoConfig, NewtonError, StepProblem, functional_gradient,
                         functional_hessian, functional_value, el_residual, lagrangian_velocity,
                         newton_solve, run, setup, write_entropy_series)
from lagflow.lagrangian import discrete_entropy, state_tables
from lagflow.model import (cosine_bump, exp1_potential, make_initial_density_exp1,
                           make_power_pressure, quadratic_potential, uniform_density,
                           zero_potential)

from helpers import central_gradient, central_jacobian, random_feasible, rel_err, step_problem

M2 = make_power_pressure(2)


@pytest.fixture(scope="module")
def exp1_problem():
    return step_problem(M2, exp1_potential(), make_initial_density_exp1(), K=4)


def test_value_at_zero_is_entropy(exp1_problem):
    prob, iset, st = exp1_problem
    z0 = np.zeros(len(iset))
    E = discrete_entropy(st, M2, exp1_potential())
    assert prob.value(z0) == pytest.approx(E, rel=1e-15)
    assert functional_value(z0, st, prob.tables, M2, exp1_potential(), 5e-4) == prob.value(z0)


def test_value_against_dense_grid_integral():
    # d = 1, one mode, uniform reference, V = 0
    tau, z = 0.01, 0.03
    prob, iset, _ = step_problem(M2, zero_potential(), uniform_density(), K=1, tau=tau, dim=1,
                                 cells=256, points=3)
    x = (np.arange(200000) + 0.5) / 200000
    db = -math.sqrt(2) * np.sin(math.pi * x)
    d2b = -math.sqrt(2) * math.pi * np.cos(math.pi * x)
    oracle = np.mean((z * db) ** 2) / (2 * tau) + np.mean(M2.hstar(1 + z * d2b))
    assert prob.value(np.array([z])) == pytest.approx(oracle, abs=1e-6)


def test_infeasible_value_is_infinite(exp1_problem):
    prob, iset, _ = exp1_problem
    z = np.zeros(len(iset))
    z[0] = 5.0
    assert prob.value(z) == math.inf
    assert not prob.feasible(z)
    with pytest.raises(ValueError):
        prob.gradient(z)
    with pytest.raises(ValueError):
        prob.hessian(z)


def test_derivatives_vs_finite_differences(exp1_problem, rng):
    prob, _, st = exp1_problem
    for _ in range(10):
        z = random_feasible(prob, rng)
        g = functional_gradient(z, st, prob.tables, M2, exp1_potential(), 5e-4)
        H = functional_hessian(z, st, prob.tables, M2, exp1_potential(), 5e-4)
        assert rel_err(g, central_gradient(prob.value, z)) <= 1e-6
        assert np.max(np.abs(H - H.T)) == 0.0
        assert rel_err(H, central_jacobian(prob.gradient, z)) <= 1e-5


def test_dual_route_agrees_with_closed_form(exp1_problem, rng):
    prob, _, _ = exp1_problem
    for _ in range(5):
        z = random_feasible(prob, rng)
        d = prob.value_dual(z)
        assert d.val == pytest.approx(prob.value(z), rel=1e-13)
        assert np.max(np.abs(prob.gradient_dual(z) - prob.gradient(z))) <= 1e-10 * max(
            1.0, np.max(np.abs(prob.gradient(z))))


@pytest.mark.parametrize("m", [1.0, 1.5, 3.0])
def test_derivatives_other_exponents_and_one_dimension(m, rng):
    model = make_power_pressure(m)
    prob, _, _ = step_problem(model, quadratic_potential(2.0), cosine_bump(0.4, 1), K=5, dim=1,
                              tau=1e-2)
    z = random_feasible(prob, rng)
    assert rel_err(prob.gradient(z), central_gradient(prob.value, z)) <= 1e-6
    assert rel_err(prob.hessian(z), central_jacobian(prob.gradient, z)) <= 1e-5
    assert rel_err(prob.gradient_dual(z), prob.gradient(z)) <= 1e-10


def test_convex_potential_gives_positive_hessian(rng):
    prob, _, _ = step_problem(M2, quadratic_potential(1.0), make_initial_density_exp1(), K=4)
    for _ in range(5):
        z = random_feasible(prob, rng)
        assert np.linalg.eigvalsh(prob.hessian(z))[0] >= -1e-8


def test_newton_at_equilibrium_returns_zero():
    prob, _, _ = step_problem(M2, zero_potential(), uniform_density(), K=4)
    z, rep = newton_solve(prob, JkoConfig())
    assert np.linalg.norm(z) <= 1e-8
    assert rep.converged and rep.iterations == 0


def test_newton_report_and_monotone_values(exp1_problem):
    prob, _, _ = exp1_problem
    cfg = JkoConfig()
    z, rep = newton_solve(prob, cfg)
    assert rep.converged and rep.grad_norm <= cfg.tol
    assert len(rep.backtracks) == rep.iterations
    v = np.array(rep.values)
    assert np.all(np.diff(v) <= 16 * np.finfo(float).eps * np.abs(v[:-1]))
    assert rep.min_eig > 0
    assert prob.value(z) < prob.value(np.zeros_like(z))


def test_newton_failure_reports_diagnostics(exp1_problem):
    prob, _, _ = exp1_problem
    with pytest.raises(NewtonError) as info:
        newton_solve(prob, JkoConfig(max_iter=1, tol=1e-300))
    assert info.value.report.iterations == 1
    bad = np.zeros(prob.nmodes)
    bad[0] = 10.0
    with pytest.raises(NewtonError):
        newton_solve(prob, JkoConfig(), z0=bad)


def test_velocity_vanishes_at_equilibrium():
    prob, _, st = step_problem(M2, zero_potential(), uniform_density(), K=3)
    tabs = state_tables(st, prob.tables.index_set, third=True)
    v = lagrangian_velocity(np.zeros(prob.nmodes), st, tabs, M2, zero_potential())
    assert np.max(np.abs(v)) <= 1e-14


def test_velocity_is_minus_grad_potential_for_uniform_density():
    V = quadratic_potential(3.0)
    prob, _, st = step_problem(M2, V, uniform_density(), K=3)
    tabs = state_tables(st, prob.tables.index_set, third=True)
    v = lagrangian_velocity(np.zeros(prob.nmodes), st, tabs, M2, V)
    np.testing.assert_allclose(v, -V.grad(st.positions), rtol=0, atol=1e-10)
    assert np.allclose(lagrangian_velocity(np.zeros(prob.nmodes), st, tabs, M2, V, node=3),
                       v[3])


def test_velocity_pairing_is_entropy_derivative():
    V = exp1_potential()
    u0 = make_initial_density_exp1()
    prob, iset, st = step_problem(M2, V, u0, K=3, cells=48, points=4)
    tabs = state_tables(st, iset, third=True)
    full = StepProblem(st, tabs, M2, V, 5e-4)
    v = full.velocity(np.zeros(full.nmodes))
    pair = np.einsum("knd,nd->k", tabs.grad, v * full.mu[:, None])
    eps = 1e-6
    for j in range(full.nmodes):
        e = np.zeros(full.nmodes)
        e[j] = eps
        ent = lambda z: full.value(z) - full.movement(z)  # noqa: E731
        dE = (ent(e) - ent(-e)) / (2 * eps)
        assert pair[j] == pytest.approx(-dE, abs=1e-5 * max(1.0, abs(dE)))


def test_el_residual_small_with_refined_quadrature():
    cfg = JkoConfig(K=3, cells=48, points=4, track_derivatives=True, T=3 * 5e-4)
    worst = []

    def cb(step, problem, z, rep):
        worst.append(np.max(np.abs(problem.el_residual(z))))

    run(cfg, M2, exp1_potential(), make_initial_density_exp1(), callback=cb)
    assert len(worst) == 3
    assert max(worst) <= 10 * cfg.tol


def test_el_residual_wrapper_requires_third_tables(exp1_problem):
    prob, _, st = exp1_problem
    with pytest.raises(ValueError):
        el_residual(np.zeros(prob.nmodes), st, prob.tables, M2, exp1_potential(), 5e-4)


def test_run_entropy_and_bookkeeping():
    cfg = JkoConfig(K=4, T=20 * 5e-4)
    tr = run(cfg, M2, exp1_potential(), make_initial_density_exp1())
    assert len(tr.times) == len(tr.entropy) == 21
    assert len(tr.states) == 21 and tr.final.step == 20
    assert np.all(np.diff(tr.entropy) <= 0)
    assert all(r.converged for r in tr.reports)


def test_run_at_equilibrium_is_static():
    tr = run(JkoConfig(K=4, T=5 * 5e-4), M2, zero_potential(), uniform_density())
    assert max(np.linalg.norm(z) for z in tr.increments) <= 1e-8
    np.testing.assert_allclose(tr.final.positions, tr.states[0].positions, atol=1e-12)


def test_halving_tau_halves_entropy_drop():
    dens = make_initial_density_exp1()
    V = exp1_potential()
    drop = []
    for tau in (2e-4, 1e-4):
        tr = run(JkoConfig(K=4, tau=tau, T=tau), M2, V, dens)
        drop.append(tr.entropy[0] - tr.entropy[1])
    assert 0.3 <= drop[1] / drop[0] <= 0.7


def test_config_validation_and_warning():
    for kw in (dict(tau=0), dict(tol=-1), dict(K=0), dict(backtrack=1.0)):
        with pytest.raises(ValueError):
            JkoConfig(**kw)
    assert JkoConfig(T=0.01, tau=5e-4).steps == 20
    assert JkoConfig(K=6).quad_cells == 12
    with pytest.warns(RuntimeWarning):
        JkoConfig(tau=1.0).check_potential(quadratic_potential(-2.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        JkoConfig(tau=1e-3).check_potential(exp1_potential())


def test_setup_normalizes_density():
    cfg = JkoConfig(K=3)
    grid, iset, st = setup(cfg, M2, None, cosine_bump(0.2, 2).scaled(3.0))
    assert grid.integrate(grid.density) == pytest.approx(1.0, abs=1e-14)
    assert len(iset) == 15 and st.step == 0


def test_entropy_series_file(tmp_path):
    p = tmp_path / "e.dat"
    write_entropy_series(p, [0.0, 0.5], [1.0, 0.25])
    lines = open(p).read().splitlines()
    assert lines[0] == "# t E"
    assert np.allclose(np.loadtxt(p), [[0, 1], [0.5, 0.25]])
