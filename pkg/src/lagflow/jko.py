"""One minimizing-movement step in increment coefficients, and the time loop.

For a state with pushed nodes ``y_k``, accumulated determinants ``sigma_k``
and reference masses ``mu_k = ubar_k w_k``, a step minimises

    F(z) = 1/(2 tau) sum_k |t(y_k) - y_k|^2 mu_k
           + sum_k [h_*(sigma_k / ubar_k * det Dt(y_k)) + V(t(y_k))] mu_k

over ``t = id + sum_j z_j grad b_j``. Gradient and Hessian are assembled in
closed form from basis tables; a dual-number evaluation of the same formula
is kept as an independent derivative route.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .basis import make_index_set
from .dual import Dual
from .lagrangian import (
    advance_state,
    cofactor,
    det_small,
    discrete_entropy,
    initial_state,
    positive_definite,
    state_tables,
)
from .quadrature import build_gauss_grid

_EPS = np.finfo(float).eps


class NewtonError(RuntimeError):
    """Newton iteration failed; ``report`` holds the diagnostics."""

    def __init__(self, msg, report=None, step=None):
        super().__init__(msg)
        self.report = report
        self.step = step


@dataclass
class JkoConfig:
    tau: float = 5e-4
    K: int = 8
    T: float = 0.01
    tol: float = 1e-8
    max_iter: int = 50
    backtrack: float = 0.5
    max_backtracks: int = 60
    # quadrature: K1 cells per direction (default 2K), K2 Gauss points per cell
    cells: Optional[int] = None
    points: int = 2
    track_derivatives: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")

    @property
    def quad_cells(self):
        return self.cells if self.cells is not None else 2 * self.K

    @property
    def steps(self):
        return int(math.ceil(self.T / self.tau - 1e-9))

    def check_potential(self, potential):
        lam = 0.0 if potential is None else potential.modulus
        if not 1.0 + self.tau * lam > 0:
            warnings.warn(f"1 + tau*lambda = {1 + self.tau * lam:g} <= 0: "
                          "step problems may be nonconvex", RuntimeWarning, stacklevel=2)


@dataclass
class NewtonReport:
    iterations: int = 0
    grad_norm: float = math.inf
    backtracks: List[int] = field(default_factory=list)
    min_eig: float = math.nan
    converged: bool = False
    values: List[float] = field(default_factory=list)


def _second_det(Hs, A):
    """Bilinear second derivative of det at A, as factor pairs (X_i, Y_j).

    Returns arrays ``X, Y`` of shape (M, N, p) with
    ``d^2 det(A)[H_i, H_j] = sum_p X[i, :, p] * Y[j, :, p]`` node-wise.
    """
    d = A.shape[-1]
    M, N = Hs.shape[:2]
    if d == 1:
        return np.zeros((M, N, 1)), np.zeros((M, N, 1))
    if d == 2:
        X = np.stack([Hs[..., 0, 0], Hs[..., 1, 1], Hs[..., 0, 1]], axis=-1)
        Y = np.stack([Hs[..., 1, 1], Hs[..., 0, 0], -2.0 * Hs[..., 0, 1]], axis=-1)
        return X, Y
    # det(A) [tr(A^-1 Hi) tr(A^-1 Hj) - tr(A^-1 Hi A^-1 Hj)]
    Ainv = np.linalg.inv(A)
    Q = np.einsum("nab,knbc->knac", Ainv, Hs)
    tr = np.einsum("knaa->kn", Q)
    detA = det_small(A)
    X = np.concatenate([(detA * tr)[..., None], detA[None, :, None] * Q.reshape(M, N, -1)], -1)
    Y = np.concatenate([tr[..., None], -np.swapaxes(Q, -1, -2).reshape(M, N, -1)], -1)
    return X, Y


class StepProblem:
    """The per-step convex functional for one state and its basis tables."""

    def __init__(self, state, tables, model, potential, tau):
        if not np.array_equal(tables.points, state.positions):
            raise ValueError("basis tables were not built at the state's positions")
        self.state = state
        self.tables = tables
        self.model = model
        self.potential = potential
        self.tau = float(tau)
        grid = state.grid
        self.ubar = grid.density
        self.mu = grid.density * grid.weights
        self.c = state.sigma / grid.density
        self.y = state.positions
        self.G = tables.grad
        self.H = tables.hess
        self.dim = self.y.shape[1]
        self.nmodes = self.G.shape[0]

    # -- pieces ------------------------------------------------------------
    def displacement(self, z):
        return np.einsum("k,knd->nd", z, self.G)

    def jacobian(self, z):
        return np.eye(self.dim) + np.einsum("k,knab->nab", z, self.H)

    def feasible(self, z):
        return bool(np.all(positive_definite(self.jacobian(np.asarray(z, float)))))

    def _V(self, t):
        if self.potential is None:
            return 0.0
        return np.asarray(self.potential.value(t))

    # -- value and derivatives ----------------------------------------------
    def value(self, z):
        """F(z), or ``inf`` if Dt fails to be positive definite at a node."""
        z = np.asarray(z, dtype=float)
        A = self.jacobian(z)
        if not np.all(positive_definite(A)):
            return math.inf
        disp = self.displacement(z)
        s = self.c * det_small(A)
        move = np.sum(np.sum(disp ** 2, axis=1) * self.mu) / (2 * self.tau)
        ent = np.sum((self.model.hstar(s) + self._V(self.y + disp)) * self.mu)
        return float(move + ent)

    def movement(self, z):
        disp = self.displacement(np.asarray(z, dtype=float))
        return float(np.sum(np.sum(disp ** 2, axis=1) * self.mu) / (2 * self.tau))

    def _require_feasible(self, A):
        if not np.all(positive_definite(A)):
            raise ValueError("infeasible coefficients: Dt is not positive definite at every node")

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        A = self.jacobian(z)
        self._require_feasible(A)
        disp = self.displacement(z)
        s = self.c * det_small(A)
        cof = cofactor(A)
        ddet = np.einsum("nab,knab->kn", cof, self.H)
        g = np.einsum("knd,nd->k", self.G, disp * (self.mu / self.tau)[:, None])
        g += ddet @ (self.model.dhstar(s) * self.c * self.mu)
        if self.potential is not None:
            gV = self.potential.grad(self.y + disp)
            g += np.einsum("knd,nd->k", self.G, gV * self.mu[:, None])
        return g

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        A = self.jacobian(z)
        self._require_feasible(A)
        disp = self.displacement(z)
        M, N, d = self.G.shape
        s = self.c * det_small(A)
        W = np.broadcast_to(np.eye(d) / self.tau, (N, d, d))
        if self.potential is not None:
            W = W + self.potential.hess(self.y + disp)
        W = W * self.mu[:, None, None]
        GW = np.einsum("kna,nab->knb", self.G, W).reshape(M, -1)
        Hm = GW @ self.G.reshape(M, -1).T
        cof = cofactor(A)
        ddet = np.einsum("nab,knab->kn", cof, self.H)
        alpha = self.model.d2hstar(s) * self.c ** 2 * self.mu
        Hm += (ddet * alpha) @ ddet.T
        beta = self.model.dhstar(s) * self.c * self.mu
        X, Y = _second_det(self.H, A)
        Hm += (X * beta[None, :, None]).reshape(M, -1) @ Y.reshape(M, -1).T
        return 0.5 * (Hm + Hm.T)

    # -- dual-number route -----------------------------------------------------
    def value_dual(self, z):
        """F(z) as a :class:`Dual` whose derivative part is the gradient."""
        zd = Dual.variables(z)
        # t_a(y_k) = y_k,a + sum_j z_j G[j,k,a]: derivative wrt z_j is G[j,k,a]
        disp = Dual(np.einsum("k,knd->nd", zd.val, self.G), np.moveaxis(self.G, 0, -1))
        t = disp + self.y
        Aval = self.jacobian(zd.val)
        if not np.all(positive_definite(Aval)):
            raise ValueError("infeasible coefficients")
        A = Dual(Aval, np.moveaxis(self.H, 0, -1))
        d = self.dim
        rows = [[Dual(A.val[:, a, b], A.der[:, a, b]) for b in range(d)] for a in range(d)]
        if d == 1:
            det = rows[0][0]
        elif d == 2:
            det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0]
        elif d == 3:
            r = rows
            det = (r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                   - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                   + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]))
        else:
            raise ValueError("dual route supports d <= 3")
        sq = disp * disp
        move = sq.sum(axis=1) * (self.mu / (2 * self.tau))
        integrand = self.model.hstar(det * self.c)
        if self.potential is not None:
            integrand = integrand + self.potential.value(t)
        return (move + integrand * self.mu).sum()

    def gradient_dual(self, z):
        return self.value_dual(z).der

    # -- Euler-Lagrange diagnostics -----------------------------------------------
    def velocity(self, z):
        """Cofactor form of the Lagrangian velocity at the pushed nodes.

        ``v = -(1/rho) P'(q) cof(Dt) grad q - grad V(t)`` with ``rho`` the
        current Eulerian density and ``q = rho / det Dt``; the divergence of
        the cofactor field drops out (Piola identity). Needs third-derivative
        tables and, after the first step, a state tracking ``DT`` and ``D^2T``.
        """
        z = np.asarray(z, dtype=float)
        st = self.state
        grid = st.grid
        if self.tables.third is None:
            raise ValueError("velocity needs third-derivative basis tables")
        if grid.density_grad is None:
            raise ValueError("velocity needs the gradient of the reference density")
        N, d = self.y.shape
        if st.tracks_derivatives:
            DT, D2T = st.jac, st.jac2
        elif st.step == 0:
            DT = np.broadcast_to(np.eye(d), (N, d, d))
            D2T = np.zeros((N, d, d, d))
        else:
            raise ValueError("state does not track map derivatives")
        J = st.sigma
        DTinv = np.linalg.inv(DT)
        # grad_x J / J = tr(DT^-1 d_l DT)
        gJ = np.einsum("nab,nbal->nl", DTinv, D2T)
        dx_rho = (grid.density_grad - grid.density[:, None] * gJ) / J[:, None]
        rho = grid.density / J
        grad_rho = np.einsum("nba,nb->na", DTinv, dx_rho)

        A = self.jacobian(z)
        if not np.all(det_small(A) > 0):
            raise ValueError("degenerate increment Jacobian")
        detA = det_small(A)
        Ainv = np.linalg.inv(A)
        dA = np.einsum("k,knabl->nabl", z, self.tables.third)
        grad_det = detA[:, None] * np.einsum("nab,nbal->nl", Ainv, dA)
        q = rho / detA
        grad_q = grad_rho / detA[:, None] - (rho / detA ** 2)[:, None] * grad_det
        flux = np.einsum("nij,nj->ni", cofactor(A), grad_q) * (self.model.dP(q) / rho)[:, None]
        v = -flux
        if self.potential is not None:
            v = v - self.potential.grad(self.y + self.displacement(z))
        return v

    def el_residual(self, z):
        """Pairings ``<(t - id)/tau - v, grad b_j>`` in the discrete ``L^2(rho)``."""
        r = self.displacement(z) / self.tau - self.velocity(z)
        return np.einsum("knd,nd->k", self.G, r * self.mu[:, None])


# -- functional interface -------------------------------------------------------

def functional_value(z, state, tables, model, potential, tau):
    return StepProblem(state, tables, model, potential, tau).value(z)


def functional_gradient(z, state, tables, model, potential, tau):
    return StepProblem(state, tables, model, potential, tau).gradient(z)


def functional_hessian(z, state, tables, model, potential, tau):
    return StepProblem(state, tables, model, potential, tau).hessian(z)


def lagrangian_velocity(z, state, tables, model, potential, node=None):
    v = StepProblem(state, tables, model, potential, 1.0).velocity(z)
    return v if node is None else v[node]


def el_residual(z, state, tables, model, potential, tau):
    return StepProblem(state, tables, model, potential, tau).el_residual(z)


# -- Newton ----------------------------------------------------------------------

def _newton_direction(H, g):
    try:
        return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), g)
    except np.linalg.LinAlgError:
        pass
    mu = 1e-10
    eye = np.eye(len(g))
    for _ in range(200):
        try:
            return -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H + mu * eye), g)
        except np.linalg.LinAlgError:
            mu *= 2.0
    return -g


def newton_solve(problem, config, z0=None):
    """Damped Newton with feasibility backtracking, warm-started at ``z0``.

    A trial step is accepted when ``Dt`` stays positive definite at every node
    and ``F`` decreases. When the decrease is below round-off, a step that does
    not raise ``F`` beyond round-off and reduces the gradient norm is accepted.
    """
    z = np.zeros(problem.nmodes) if z0 is None else np.array(z0, dtype=float)
    report = NewtonReport()
    F = problem.value(z)
    if not math.isfinite(F):
        raise NewtonError("initial coefficients are infeasible", report)
    g = problem.gradient(z)
    gn = float(np.linalg.norm(g))
    report.values.append(F)
    H = None
    while True:
        report.grad_norm = gn
        if gn <= config.tol:
            report.converged = True
            break
        if report.iterations >= config.max_iter:
            raise NewtonError(
                f"Newton did not converge in {config.max_iter} iterations "
                f"(|grad| = {gn:.3e})", report)
        H = problem.hessian(z)
        dz = _newton_direction(H, g)
        alpha = 1.0
        accepted = False
        for nb in range(config.max_backtracks + 1):
            zt = z + alpha * dz
            Ft = problem.value(zt)
            if Ft < F:
                accepted = True
            elif math.isfinite(Ft) and Ft - F <= 16 * _EPS * max(1.0, abs(F)):
                gt = problem.gradient(zt)
                if np.linalg.norm(gt) < gn:
                    accepted = True
            if accepted:
                break
            alpha *= config.backtrack
        report.backtracks.append(nb)
        report.iterations += 1
        if not accepted:
            raise NewtonError(
                f"line search failed after {config.max_backtracks} backtracks "
                f"(|grad| = {gn:.3e})", report)
        z, F = zt, Ft
        g = problem.gradient(z)
        gn = float(np.linalg.norm(g))
        report.values.append(F)
    Hf = problem.hessian(z) if H is None or report.iterations == 0 else H
    report.min_eig = float(np.linalg.eigvalsh(Hf)[0])
    return z, report


# -- time loop ---------------------------------------------------------------------

@dataclass
class Trajectory:
    times: List[float]
    entropy: List[float]
    states: list
    reports: List[NewtonReport]
    increments: list

    @property
    def final(self):
        return self.states[-1]


def setup(config, model, potential, density, dim=2):
    """Quadrature grid, mode set and identity state for a run."""
    grid = build_gauss_grid(dim, config.quad_cells, config.points)
    grid = grid.with_density(density.normalized(grid))
    index_set = make_index_set(dim, config.K)
    state = initial_state(grid, track_derivatives=config.track_derivatives,
                          model=model, potential=potential)
    return grid, index_set, state


def run(config, model, potential, density, dim=2, state=None, index_set=None,
        keep_states=True, callback: Optional[Callable] = None):
    """March ``ceil(T / tau)`` minimizing-movement steps.

    Each step rebuilds the basis tables at the current nodes, solves the step
    problem by Newton from ``z = 0`` and pushes the nodes forward.
    ``callback(step, problem, z, report)`` is invoked after every solve.
    """
    config.check_potential(potential)
    if state is None:
        _, index_set, state = setup(config, model, potential, density, dim)
    elif index_set is None:
        index_set = make_index_set(state.dim, config.K)
    if not state.entropy:
        state.entropy.append(discrete_entropy(state, model, potential))
    times = [state.step * config.tau]
    states = [state]
    reports, increments = [], []
    for n in range(config.steps):
        tables = state_tables(state, index_set)
        problem = StepProblem(state, tables, model, potential, config.tau)
        try:
            z, rep = newton_solve(problem, config)
        except NewtonError as exc:
            exc.step = state.step + 1
            raise NewtonError(f"step {state.step + 1}: {exc}", exc.report, state.step + 1) from exc
        if callback is not None:
            callback(state.step + 1, problem, z, rep)
        state = advance_state(state, z, tables, model, potential)
        times.append(state.step * config.tau)
        reports.append(rep)
        increments.append(z)
        if keep_states:
            states.append(state)
        else:
            states = [state]
    return Trajectory(times, list(state.entropy), states, reports, increments)


def write_entropy_series(path, times, values, header="t E"):
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for t, e in zip(times, values):
            fh.write(f"{t:.16e} {e:.16e}\n")


__all__ = [
    "JkoConfig", "NewtonReport", "NewtonError", "StepProblem", "functional_value",
    "functional_gradient", "functional_hessian", "lagrangian_velocity", "el_residual",
    "newton_solve", "run", "setup", "Trajectory", "write_entropy_series",
]
