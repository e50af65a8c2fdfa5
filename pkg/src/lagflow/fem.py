"""Fully implicit Q1 finite elements on a uniform lattice (reference solver).

Each step solves, for all lattice hat functions ``phi_k``,

    int (u - u_old)/tau phi_k dx = - int [grad P(u) + u grad V] . grad phi_k dx

by Newton's method on the nodal values. The no-flux boundary condition is
natural. Integrals use 2-point Gauss per direction on every cell, which is
exact for the mass matrix; summing the equations over ``k`` shows that the
lumped mass ``sum_k u_k int phi_k`` is conserved by every Newton update.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class FemNewtonError(RuntimeError):
    pass


class FemGrid:
    """Tensor lattice with ``L`` points per direction on the unit cube."""

    def __init__(self, L, dim=2):
        if int(L) != L or L < 3:
            raise ValueError(f"lattice needs L >= 3 points per direction, got {L!r}")
        if dim not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        self.L = int(L)
        self.dim = dim
        self.h = 1.0 / (self.L - 1)
        self.x1d = np.linspace(0.0, 1.0, self.L)
        mesh = np.meshgrid(*([self.x1d] * dim), indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        w1 = np.full(self.L, self.h)
        w1[[0, -1]] = 0.5 * self.h
        wmesh = np.meshgrid(*([w1] * dim), indexing="ij")
        # int phi_k dx, also the lumped (trapezoidal) lattice weights
        self.weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
        self._build_elements()

    @property
    def size(self):
        return self.nodes.shape[0]

    def _build_elements(self):
        d, L, h = self.dim, self.L, self.h
        corners = np.array(list(itertools.product((0, 1), repeat=d)))  # (2^d, d)
        cells = np.array(list(itertools.product(range(L - 1), repeat=d)))  # (C, d)
        strides = L ** np.arange(d - 1, -1, -1)
        self.conn = (cells[:, None, :] + corners[None, :, :]) @ strides  # (C, 2^d)
        g, gw = np.polynomial.legendre.leggauss(2)
        g = 0.5 * (g + 1.0)
        gw = 0.5 * gw
        qpts = np.array(list(itertools.product(g, repeat=d)))  # (Q, d) reference
        self.qweights = np.prod(np.array(list(itertools.product(gw, repeat=d))), axis=1) * h ** d
        # phi_a(xi) = prod_i (xi_i if a_i else 1 - xi_i)
        lin = np.where(corners[None, :, :] == 1, qpts[:, None, :], 1.0 - qpts[:, None, :])
        self.phi = np.prod(lin, axis=-1)  # (Q, A)
        dlin = np.where(corners == 1, 1.0, -1.0) / h  # (A, d)
        dphi = np.empty(lin.shape)
        for i in range(d):
            others = np.prod(np.delete(lin, i, axis=-1), axis=-1) if d > 1 else 1.0
            dphi[..., i] = dlin[None, :, i] * others
        self.dphi = dphi  # (Q, A, d)
        self.qpoints = cells[:, None, :] * h + qpts[None, :, :] * h  # (C, Q, d)
        A = corners.shape[0]
        self._rows = np.repeat(self.conn, A, axis=1).ravel()
        self._cols = np.tile(self.conn, (1, A)).ravel()

    def lattice_shape(self):
        return (self.L,) * self.dim


def validate_fem_config(L, tau):
    """Check lattice size and time step; returns the pair on success."""
    if int(L) != L or L < 3:
        raise ValueError(f"lattice needs L >= 3, got {L!r}")
    if not tau > 0:
        raise ValueError(f"time step must be positive, got {tau!r}")
    return int(L), float(tau)


@dataclass
class FemState:
    grid: FemGrid
    u: np.ndarray
    t: float = 0.0

    def mass(self):
        return float(self.u @ self.grid.weights)

    def as_array(self):
        return self.u.reshape(self.grid.lattice_shape())


def fem_initial_state(grid, density, normalize=True):
    """Nodal interpolant of ``density``; optionally rescaled to unit mass."""
    u = np.asarray(density.value(grid.nodes), dtype=float)
    if normalize:
        u = u / (u @ grid.weights)
    return FemState(grid, u, 0.0)


class _Assembler:
    """Element kernels as dense (Q*d, A*A)-type tensors, applied by matmul."""

    def __init__(self, grid, tau, model, potential):
        self.g = g = grid
        self.tau = tau
        self.model = model
        C, Q, d = g.qpoints.shape
        A = g.phi.shape[1]
        w = g.qweights
        self.gV = np.zeros((C, Q, d)) if potential is None else potential.grad(g.qpoints)
        self.mass = (np.einsum("qa,qb,q->ab", g.phi, g.phi, w) / tau).ravel()
        # residual kernels
        self.r_mass = (g.phi * w[:, None]) / tau  # (Q, A)
        self.r_flux = (g.dphi * w[:, None, None]).transpose(0, 2, 1).reshape(Q * d, A)
        # Jacobian kernels: vec_i phi_b dphi_a,i and P'(u) dphi_a . dphi_b
        self.j_vec = np.einsum("qai,qb,q->qiab", g.dphi, g.phi, w).reshape(Q * d, A * A)
        self.j_diff = np.einsum("qai,qbi,q->qab", g.dphi, g.dphi, w).reshape(Q, A * A)

    def at_quad(self, u):
        ue = u[self.g.conn]  # (C, A)
        uq = ue @ self.g.phi.T  # (C, Q)
        duq = np.einsum("ca,qai->cqi", ue, self.g.dphi)
        return uq, duq

    def residual(self, u, u_old):
        g = self.g
        uq, duq = self.at_quad(u)
        uoq = u_old[g.conn] @ g.phi.T
        flux = self.model.dP(uq)[..., None] * duq + uq[..., None] * self.gV  # (C, Q, d)
        loc = (uq - uoq) @ self.r_mass
        loc += flux.reshape(len(flux), -1) @ self.r_flux
        return np.bincount(g.conn.ravel(), weights=loc.ravel(), minlength=g.size)

    def jacobian(self, u):
        g = self.g
        uq, duq = self.at_quad(u)
        # d/du_b of P'(u) grad u + u grad V, tested against grad phi_a
        vec = self.model.d2P(uq)[..., None] * duq + self.gV  # (C, Q, d)
        loc = vec.reshape(len(vec), -1) @ self.j_vec
        loc += self.model.dP(uq) @ self.j_diff
        loc += self.mass[None, :]
        # local layout is (a, b) -> row conn[a], column conn[b]
        J = sp.coo_matrix((loc.ravel(), (g._rows, g._cols)), shape=(g.size, g.size))
        return J.tocsc()


def _solve(J, rhs):
    lu = spla.splu(J, permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    return lu.solve(rhs)


def fem_step(state, tau, model, potential, tol=1e-10, max_iter=30, max_halvings=30):
    """One implicit Euler step by damped Newton on the nodal values."""
    g = state.grid
    asm = _Assembler(g, tau, model, potential)
    u_old = state.u
    u = u_old.copy()
    R = asm.residual(u, u_old)
    rn = np.linalg.norm(R)
    for it in range(max_iter):
        du = _solve(asm.jacobian(u), -R)
        if np.max(np.abs(du)) <= tol * max(1.0, np.max(np.abs(u))):
            u = u + du
            break
        alpha = 1.0
        for _ in range(max_halvings + 1):
            ut = u + alpha * du
            with np.errstate(invalid="ignore"):
                Rt = asm.residual(ut, u_old)
            rt = np.linalg.norm(Rt)
            if np.isfinite(rt) and rt < rn:
                break
            alpha *= 0.5
        else:
            raise FemNewtonError(f"damping failed at t={state.t + tau:g} (|R| = {rn:.3e})")
        u, R, rn = ut, Rt, rt
    else:
        raise FemNewtonError(f"Newton did not converge at t={state.t + tau:g} (|R| = {rn:.3e})")
    if np.any(u < 0):
        log.warning("negative nodal values at t=%g (min %.3e)", state.t + tau, u.min())
    return FemState(g, u, state.t + tau)


def fem_entropy(state, model, potential):
    """Lattice quadrature of ``h(u) + u V``."""
    u = state.u
    V = 0.0 if potential is None else np.asarray(potential.value(state.grid.nodes))
    return float(np.sum((model.h(u) + u * V) * state.grid.weights))


def fem_run(grid, density, tau, T, model, potential, normalize=True, callback=None):
    """Run to time ``T``; returns the final state and the entropy series."""
    st = fem_initial_state(grid, density, normalize)
    steps = int(math.ceil(T / tau - 1e-9))
    times = [0.0]
    ent = [fem_entropy(st, model, potential)]
    for n in range(steps):
        st = fem_step(st, tau, model, potential)
        st.t = (n + 1) * tau
        times.append(st.t)
        ent.append(fem_entropy(st, model, potential))
        if callback is not None:
            callback(st)
    return st, times, ent


def interpolate_at(state, points):
    """Multilinear interpolation of the nodal values at ``points`` (P, d)."""
    g = state.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = np.clip(pts / g.h, 0.0, g.L - 1)
    i0 = np.minimum(np.floor(s).astype(int), g.L - 2)
    fr = s - i0
    arr = state.as_array()
    out = np.zeros(len(pts))
    for corner in itertools.product((0, 1), repeat=g.dim):
        c = np.asarray(corner)
        wgt = np.prod(np.where(c == 1, fr, 1.0 - fr), axis=1)
        out += wgt * arr[tuple((i0 + c).T)]
    return out


def write_lattice_snapshot(state, path):
    """CSV (i, j, ..., x, y, ..., u) for every lattice node."""
    g = state.grid
    idx = np.array(list(itertools.product(range(g.L), repeat=g.dim)))
    names = "ijk"[:g.dim]
    coords = "xyz"[:g.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + list(coords) + ["u"])
        for row, x, u in zip(idx, g.nodes, state.u):
            w.writerow([*row.tolist(), *(f"{v:.16e}" for v in x), f"{u:.16e}"])
