import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lagflow.model import make_initial_density_exp1, uniform_density, ScalarField
from lagflow.quadrature import build_gauss_grid, gauss_legendre_1d, integrate


def test_two_point_rule_on_unit_interval():
    g = build_gauss_grid(1, 1, 2)
    np.testing.assert_allclose(g.nodes[:, 0], [0.5 - 1 / (2 * np.sqrt(3)), 0.5 + 1 / (2 * np.sqrt(3))],
                               rtol=0, atol=1e-15)
    np.testing.assert_allclose(g.weights, [0.5, 0.5], rtol=0, atol=1e-15)


def test_weights_sum_to_volume():
    g = build_gauss_grid(2, 8, 2)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert g.size == (8 * 2) ** 2


def test_cubic_monomial_exact():
    g = build_gauss_grid(2, 8, 2)
    x = g.nodes
    assert g.integrate(x[:, 0] ** 2 * x[:, 1]) == pytest.approx(1 / 6, abs=1e-14)


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 12))
@settings(max_examples=60, deadline=None)
def test_polynomial_exactness_per_cell(cells, points, p):
    x, w = gauss_legendre_1d(cells, points)
    if p <= 2 * points - 1:
        assert np.dot(w, x ** p) == pytest.approx(1.0 / (p + 1), rel=1e-13)


def test_nodes_strictly_interior_and_lexicographic():
    g = build_gauss_grid(2, 3, 2)
    assert np.all((g.nodes > 0) & (g.nodes < 1))
    # first coordinate is the slow index
    assert np.all(np.diff(g.nodes[:6, 0]) == 0)
    assert np.all(np.diff(g.nodes[:6, 1]) > 0)


def test_integrate_examples():
    g = build_gauss_grid(2, 16, 2)
    assert integrate(g, np.ones(g.size)) == pytest.approx(1.0, abs=1e-14)
    u0 = make_initial_density_exp1(g)
    assert integrate(g, u0.value(g.nodes)) == pytest.approx(1.0, abs=1e-12)
    assert integrate(g, np.cos(2 * np.pi * g.nodes[:, 0])) == pytest.approx(0.0, abs=1e-10)


def test_integrate_length_mismatch():
    g = build_gauss_grid(1, 2, 2)
    with pytest.raises(ValueError):
        integrate(g, np.ones(3))


def test_refinement_consistency():
    f = lambda x: np.exp(np.sin(3 * x[:, 0]) * x[:, 1])  # noqa: E731
    ref = build_gauss_grid(2, 64, 4)
    exact = ref.integrate(f(ref.nodes))
    errs = [abs(build_gauss_grid(2, c, 2).integrate(f(build_gauss_grid(2, c, 2).nodes)) - exact)
            for c in (2, 4, 8, 16)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_density_sampling_and_positivity_guard():
    g = build_gauss_grid(2, 2, 2, density=uniform_density(2.0))
    np.testing.assert_array_equal(g.density, 2.0)
    np.testing.assert_array_equal(g.density_grad, 0.0)
    bad = ScalarField("bad", lambda x: x[..., 0] - 0.5, lambda x: np.ones_like(x))
    with pytest.raises(ValueError):
        build_gauss_grid(2, 2, 2, density=bad)


@pytest.mark.parametrize("args", [(0, 2, 2), (2, 0, 2), (2, 2, 0)])
def test_invalid_sizes(args):
    with pytest.raises(ValueError):
        build_gauss_grid(*args)
