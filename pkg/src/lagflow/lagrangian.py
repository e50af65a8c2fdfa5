"""Particle/determinant state of the accumulated Lagrangian map.

The accumulated map ``T^n = t^n o ... o t^1`` is never formed. Instead each
reference quadrature node carries its pushed position ``T^n(x_k)`` and the
accumulated Jacobian determinant ``det DT^n(x_k)``, both updated explicitly
after every step. Optionally the full first and second derivatives of
``T^n`` are carried along as well; they are only needed to evaluate the
Eulerian density gradient for the cofactor velocity diagnostics.
"""

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .basis import build_tables


def det_small(A):
    """Determinants of a stack of d x d matrices, closed form for d <= 3."""
    d = A.shape[-1]
    if d == 1:
        return A[..., 0, 0].copy()
    if d == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if d == 3:
        return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
                - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
                + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0]))
    return np.linalg.det(A)


def cofactor(A):
    """Cofactor matrices ``det(A) A^{-T}`` of a stack of d x d matrices."""
    d = A.shape[-1]
    if d == 1:
        return np.ones_like(A)
    if d == 2:
        C = np.empty_like(A)
        C[..., 0, 0] = A[..., 1, 1]
        C[..., 0, 1] = -A[..., 1, 0]
        C[..., 1, 0] = -A[..., 0, 1]
        C[..., 1, 1] = A[..., 0, 0]
        return C
    return det_small(A)[..., None, None] * np.swapaxes(np.linalg.inv(A), -1, -2)


def positive_definite(A):
    """Node-wise test that symmetric ``A`` is positive definite."""
    d = A.shape[-1]
    if d == 1:
        return A[..., 0, 0] > 0
    if d == 2:
        return (det_small(A) > 0) & (A[..., 0, 0] + A[..., 1, 1] > 0)
    return np.linalg.eigvalsh(A)[..., 0] > 0


@dataclass
class LagrangianState:
    """Pushed nodes and accumulated determinants after ``step`` increments.

    ``jac``/``jac2`` hold ``DT^n`` (N, d, d) and ``D^2 T^n`` (N, d, d, d) at
    the reference nodes when derivative tracking is enabled, otherwise None.
    """

    grid: object
    step: int
    positions: np.ndarray
    sigma: np.ndarray
    jac: Optional[np.ndarray] = None
    jac2: Optional[np.ndarray] = None
    entropy: List[float] = field(default_factory=list)

    @property
    def dim(self):
        return self.grid.dim

    @property
    def tracks_derivatives(self):
        return self.jac is not None

    @property
    def reference_density(self):
        return self.grid.density


def initial_state(grid, track_derivatives=False, model=None, potential=None):
    """Identity map on ``grid``; records the initial entropy if a model is given."""
    if grid.density is None:
        raise ValueError("quadrature grid carries no reference density")
    n, d = grid.nodes.shape
    st = LagrangianState(grid, 0, grid.nodes.copy(), np.ones(n))
    if track_derivatives:
        st.jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        st.jac2 = np.zeros((n, d, d, d))
    if model is not None:
        st.entropy.append(discrete_entropy(st, model, potential))
    return st


def state_tables(state, index_set, third=None):
    """Basis tables at the current pushed positions of ``state``."""
    if third is None:
        third = state.tracks_derivatives
    return build_tables(index_set, state.positions, third=third)


def transport_eval(z, tables, node=None):
    """``t(x) = x + sum_j z_j grad b_j(x)`` at the table points (or one node)."""
    z = np.asarray(z, dtype=float)
    if node is None:
        return tables.points + np.einsum("k,knd->nd", z, tables.grad)
    return tables.points[node] + z @ tables.grad[:, node, :]


def transport_jacobian(z, tables, node=None):
    z = np.asarray(z, dtype=float)
    d = tables.points.shape[1]
    if node is None:
        return np.eye(d) + np.einsum("k,knab->nab", z, tables.hess)
    return np.eye(d) + np.einsum("k,kab->ab", z, tables.hess[:, node])


def jacobian_det(z, tables, node=None):
    """``det Dt`` at the table points; nonpositive entries mark infeasibility."""
    return det_small(transport_jacobian(z, tables, node))


def is_feasible(z, tables):
    """True if ``Dt`` is positive definite at every table point.

    ``Dt`` is the Hessian of the convex potential of ``t``; positive
    definiteness is the node-wise form of the convexity constraint and
    excludes the spurious ``det > 0`` branch with all-negative eigenvalues.
    """
    return bool(np.all(positive_definite(transport_jacobian(z, tables))))


def advance_state(state, z, tables, model=None, potential=None):
    """Apply the increment ``z`` (tables must sit at ``state.positions``)."""
    z = np.asarray(z, dtype=float)
    if tables.points.shape != state.positions.shape or not np.array_equal(
            tables.points, state.positions):
        raise ValueError("basis tables were not built at the state's positions")
    A = transport_jacobian(z, tables)
    if not np.all(positive_definite(A)):
        raise ValueError("infeasible increment: Dt is not positive definite at every node")
    detA = det_small(A)
    new = LagrangianState(
        state.grid,
        state.step + 1,
        transport_eval(z, tables),
        detA * state.sigma,
        entropy=list(state.entropy),
    )
    if state.tracks_derivatives:
        if tables.third is None:
            raise ValueError("derivative tracking needs third-derivative tables")
        D2t = np.einsum("k,knabc->nabc", z, tables.third)
        new.jac = np.einsum("nae,neb->nab", A, state.jac)
        new.jac2 = (np.einsum("naef,neb,nfc->nabc", D2t, state.jac, state.jac)
                    + np.einsum("nae,nebc->nabc", A, state.jac2))
    if model is not None:
        new.entropy.append(discrete_entropy(new, model, potential))
    return new


def density_at_nodes(state):
    """Pushed density ``u^n`` at the pushed nodes: ``ubar / sigma``."""
    return state.grid.density / state.sigma


def discrete_mass(state):
    return float(np.sum(density_at_nodes(state) * state.sigma * state.grid.weights))


def discrete_entropy(state, model, potential):
    ub = state.grid.density
    V = 0.0 if potential is None else np.asarray(potential.value(state.positions))
    integrand = model.hstar(state.sigma / ub) + V
    return float(np.sum(integrand * ub * state.grid.weights))


def map_distance(a, b):
    """``L^2(ubar)`` distance between the maps of two states on one grid."""
    if a.grid is not b.grid and not (
            a.grid.nodes.shape == b.grid.nodes.shape
            and np.array_equal(a.grid.nodes, b.grid.nodes)
            and np.array_equal(a.grid.density, b.grid.density)):
        raise ValueError("states live on different quadrature grids")
    if a.step != b.step:
        raise ValueError(f"step mismatch: {a.step} vs {b.step}")
    diff2 = np.sum((a.positions - b.positions) ** 2, axis=1)
    return float(np.sqrt(np.sum(diff2 * a.grid.density * a.grid.weights)))


def write_snapshot(state, path):
    """CSV with node id, reference coords, pushed coords, determinant, density."""
    d = state.dim
    u = density_at_nodes(state)
    header = (["node"] + [f"x0_{i + 1}" for i in range(d)]
              + [f"xn_{i + 1}" for i in range(d)] + ["sigma", "u"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(state.grid.size):
            row = ([k] + [f"{v:.16e}" for v in state.grid.nodes[k]]
                   + [f"{v:.16e}" for v in state.positions[k]]
                   + [f"{state.sigma[k]:.16e}", f"{u[k]:.16e}"])
            w.writerow(row)


__all__ = [
    "LagrangianState", "initial_state", "state_tables", "transport_eval",
    "transport_jacobian", "jacobian_det", "is_feasible", "advance_state",
    "density_at_nodes", "discrete_mass", "discrete_entropy", "map_distance",
    "write_snapshot", "det_small", "cofactor", "positive_definite",
]
