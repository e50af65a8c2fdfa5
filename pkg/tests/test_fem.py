import csv

import numpy as np
import pytest

from lagflow.fem import (FemGrid, FemNewtonError, FemState, _Assembler, fem_entropy,
                         fem_initial_state, fem_run, fem_step, interpolate_at,
                         validate_fem_config, write_lattice_snapshot)
from lagflow.jko import JkoConfig, setup
from lagflow.lagrangian import discrete_entropy
from lagflow.model import (exp1_potential, make_initial_density_exp1, make_power_pressure,
                           uniform_density, zero_potential)

M2 = make_power_pressure(2)


def test_grid_basics():
    g = FemGrid(5)
    assert g.size == 25 and g.h == 0.25
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert g.conn.shape == (16, 4)
    np.testing.assert_allclose(g.phi.sum(axis=1), 1.0)
    np.testing.assert_allclose(g.dphi.sum(axis=1), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        FemGrid(2)
    with pytest.raises(ValueError):
        FemGrid(10, dim=4)


def test_config_validation():
    assert validate_fem_config(400, 5e-4) == (400, 5e-4)
    with pytest.raises(ValueError):
        validate_fem_config(2, 5e-4)
    with pytest.raises(ValueError):
        validate_fem_config(10, 0.0)


def test_constant_state_is_stationary():
    g = FemGrid(12)
    st = fem_initial_state(g, uniform_density())
    new = fem_step(st, 5e-4, M2, zero_potential())
    np.testing.assert_allclose(new.u, st.u, rtol=0, atol=1e-14)
    assert new.t == pytest.approx(5e-4)


def test_mass_conserved_each_step():
    g = FemGrid(30)
    masses = []
    fem_run(g, make_initial_density_exp1(), 5e-4, 10 * 5e-4, M2, exp1_potential(),
            callback=lambda s: masses.append(s.mass()))
    m0 = fem_initial_state(g, make_initial_density_exp1()).mass()
    assert max(abs(m - m0) / m0 for m in masses) <= 1e-12


def test_jacobian_matches_finite_differences(rng):
    g = FemGrid(6)
    asm = _Assembler(g, 1e-2, M2, exp1_potential())
    u = 1.0 + 0.3 * rng.standard_normal(g.size)
    uo = u + 0.1
    J = asm.jacobian(u).toarray()
    h = 1e-7
    Jfd = np.stack([(asm.residual(u + h * e, uo) - asm.residual(u - h * e, uo)) / (2 * h)
                    for e in np.eye(g.size)], -1)
    np.testing.assert_allclose(J, Jfd, rtol=1e-6, atol=1e-7)


def test_entropy_non_increasing_and_uniform_value():
    g = FemGrid(20)
    assert fem_entropy(fem_initial_state(g, uniform_density()), M2, zero_potential()) == \
        pytest.approx(1.0, abs=1e-14)
    _, _, ent = fem_run(g, make_initial_density_exp1(), 5e-4, 100 * 5e-4, M2, zero_potential())
    assert np.all(np.diff(ent) <= 1e-14)


def test_entropy_matches_particle_entropy_at_start():
    u0 = make_initial_density_exp1()
    g = FemGrid(200)
    Ef = fem_entropy(fem_initial_state(g, u0), M2, exp1_potential())
    _, _, st = setup(JkoConfig(K=8), M2, exp1_potential(), u0)
    El = discrete_entropy(st, M2, exp1_potential())
    assert abs(Ef - El) <= 1e-3


def test_interpolation_examples(rng):
    g = FemGrid(7)
    u = rng.standard_normal(g.size)
    st = FemState(g, u)
    np.testing.assert_allclose(interpolate_at(st, g.nodes), u, atol=1e-15)
    lin = FemState(g, 0.3 + 2.0 * g.nodes[:, 0] - 1.5 * g.nodes[:, 1])
    p = rng.uniform(0, 1, (50, 2))
    np.testing.assert_allclose(interpolate_at(lin, p), 0.3 + 2.0 * p[:, 0] - 1.5 * p[:, 1],
                               atol=1e-13)
    mid = np.array([[1.5, 2.5]]) * g.h
    arr = st.as_array()
    assert interpolate_at(st, mid)[0] == pytest.approx(arr[1:3, 2:4].mean(), abs=1e-14)


def test_newton_failure_reported():
    g = FemGrid(10)
    st = fem_initial_state(g, make_initial_density_exp1())
    with pytest.raises(FemNewtonError):
        fem_step(st, 5e-4, M2, exp1_potential(), tol=1e-300, max_iter=1)


def test_negative_values_logged(caplog):
    g = FemGrid(10)
    u = np.full(g.size, 1e-3)
    u[0] = 1.0
    st = FemState(g, u)
    with caplog.at_level("WARNING", logger="lagflow.fem"):
        new = fem_step(st, 1e-3, M2, zero_potential())
    # the consistent mass matrix is not monotone: a spike undershoots and is kept as is
    assert new.u.min() < 0
    assert any("negative nodal values" in r.message for r in caplog.records)


def test_lattice_snapshot(tmp_path):
    g = FemGrid(4)
    st = fem_initial_state(g, uniform_density())
    p = tmp_path / "fem.csv"
    write_lattice_snapshot(st, p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["i", "j", "x", "y", "u"]
    assert len(rows) == 17
    assert float(rows[-1][2]) == 1.0 and float(rows[-1][4]) == pytest.approx(1.0)


def test_one_dimensional_lattice():
    g = FemGrid(40, dim=1)
    masses = []
    fem_run(g, uniform_density(), 1e-3, 5e-3, M2, None, callback=lambda s: masses.append(s.mass()))
    assert masses[-1] == pytest.approx(1.0, abs=1e-12)
