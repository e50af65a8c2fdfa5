"""Tensor cosine basis, truncated index sets, evaluation tables, projection.

Mode ``k`` is the function

    b_k(x) = c_k / (pi |k|_2) * prod_i cos(k_i pi x_i)

with ``c_k = sqrt(2)**nnz(k)``. With this normalisation the gradients
``grad b_k`` are orthonormal in ``L^2`` of the unit cube for every ``k``,
including modes with vanishing components. ``normalization="paper"`` uses
the uniform factor ``2**(d/2)`` instead, which over-weights axis modes.
"""

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .quadrature import build_gauss_grid

NORMALIZATIONS = ("corrected", "paper")


@dataclass(frozen=True)
class IndexSet:
    """All nonzero multi-indices with ``|k|_inf <= cutoff``, lexicographic."""

    dim: int
    cutoff: int
    modes: np.ndarray  # (M, dim) int
    normalization: str = "corrected"

    def __len__(self):
        return len(self.modes)

    def position(self, k):
        k = tuple(int(v) for v in k)
        hits = np.flatnonzero((self.modes == np.asarray(k)).all(axis=1))
        if hits.size == 0:
            raise KeyError(k)
        return int(hits[0])

    @property
    def prefactors(self):
        return mode_prefactor(self.modes, self.normalization)


def make_index_set(dim, cutoff, normalization="corrected"):
    if dim < 1 or cutoff < 1:
        raise ValueError("dimension and cutoff must be >= 1")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    modes = [k for k in itertools.product(range(cutoff + 1), repeat=dim) if any(k)]
    return IndexSet(dim, cutoff, np.array(modes, dtype=int), normalization)


def mode_prefactor(modes, normalization="corrected"):
    modes = np.atleast_2d(np.asarray(modes))
    norm = np.linalg.norm(modes, axis=1)
    if np.any(norm == 0):
        raise ValueError("the zero mode is not part of the basis")
    if normalization == "paper":
        c = np.full(len(modes), 2.0 ** (modes.shape[1] / 2))
    else:
        c = np.sqrt(2.0) ** np.count_nonzero(modes, axis=1)
    return c / (np.pi * norm)


def _factor_table(kmax, x, order):
    """d^order/dx^order cos(k pi x) for k = 0..kmax; shape (kmax+1, len(x))."""
    w = np.pi * np.arange(kmax + 1)[:, None]
    ph = w * x[None, :]
    # derivatives cycle through cos, -sin, -cos, sin
    base = (np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a), np.sin)[order % 4]
    return w ** order * base(ph)


class _Evaluator:
    """Caches 1-D factor tables so mixed partials are cheap products."""

    def __init__(self, modes, points, prefactor):
        self.modes = np.atleast_2d(modes)
        self.points = np.atleast_2d(points)
        self.pref = prefactor
        self.kmax = int(self.modes.max())
        self._tables = {}

    def factor(self, axis, order):
        key = (axis, order)
        if key not in self._tables:
            t = _factor_table(self.kmax, self.points[:, axis], order)
            self._tables[key] = t
        return self._tables[key][self.modes[:, axis]]

    def derivative(self, orders):
        out = self.pref[:, None] * self.factor(0, orders[0])
        for axis in range(1, self.modes.shape[1]):
            out = out * self.factor(axis, orders[axis])
        return out  # (M, N)

    def gradient(self):
        d = self.modes.shape[1]
        return np.stack([self.derivative(np.eye(d, dtype=int)[i]) for i in range(d)], axis=-1)

    def hessian(self):
        d = self.modes.shape[1]
        M, N = len(self.modes), len(self.points)
        out = np.empty((M, N, d, d))
        for a in range(d):
            for b in range(a, d):
                orders = np.zeros(d, dtype=int)
                orders[a] += 1
                orders[b] += 1
                out[..., a, b] = self.derivative(orders)
                out[..., b, a] = out[..., a, b]
        return out

    def third(self):
        d = self.modes.shape[1]
        M, N = len(self.modes), len(self.points)
        out = np.empty((M, N, d, d, d))
        for a, b, c in itertools.combinations_with_replacement(range(d), 3):
            orders = np.zeros(d, dtype=int)
            for i in (a, b, c):
                orders[i] += 1
            val = self.derivative(orders)
            for p in set(itertools.permutations((a, b, c))):
                out[(Ellipsis,) + p] = val
        return out


def _single(k, x, normalization):
    k = np.atleast_2d(np.asarray(k, dtype=int))
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    ev = _Evaluator(k, pts, mode_prefactor(k, normalization))
    return ev, x.ndim == 1


def basis_value(k, x, normalization="corrected"):
    """Value of mode ``k`` at point(s) ``x``."""
    ev, scalar = _single(k, x, normalization)
    v = ev.derivative(np.zeros(ev.modes.shape[1], dtype=int))[0]
    return float(v[0]) if scalar else v


def basis_gradient(k, x, normalization="corrected"):
    ev, scalar = _single(k, x, normalization)
    g = ev.gradient()[0]
    return g[0] if scalar else g


def basis_hessian(k, x, normalization="corrected"):
    ev, scalar = _single(k, x, normalization)
    h = ev.hessian()[0]
    return h[0] if scalar else h


def basis_third(k, x, normalization="corrected"):
    """Third derivative tensor ``d^3 b_k / dx_a dx_b dx_c``."""
    ev, scalar = _single(k, x, normalization)
    t = ev.third()[0]
    return t[0] if scalar else t


@dataclass(frozen=True)
class BasisTables:
    """Gradients/Hessians (and optionally third derivatives) at fixed points.

    ``grad`` has shape (M, N, d), ``hess`` (M, N, d, d), ``third``
    (M, N, d, d, d) for M modes and N points.
    """

    index_set: IndexSet
    points: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: Optional[np.ndarray] = None


def build_tables(index_set, points, third=False):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ev = _Evaluator(index_set.modes, points, index_set.prefactors)
    return BasisTables(index_set, points, ev.gradient(), ev.hessian(),
                       ev.third() if third else None)


def fine_quadrature(index_set, cells_per_mode=8, points=3):
    return build_gauss_grid(index_set.dim, cells_per_mode * index_set.cutoff, points)


def gram_of_gradients(index_set, quadrature=None):
    """Matrix of ``<grad b_k, grad b_l>`` under a (fine) quadrature rule."""
    q = quadrature if quadrature is not None else fine_quadrature(index_set)
    ev = _Evaluator(index_set.modes, q.nodes, index_set.prefactors)
    g = ev.gradient()
    return np.einsum("knd,lnd,n->kl", g, g, q.weights)


def project(field, index_set, quadrature=None):
    """Coefficients ``<v, grad b_k>`` of a vector field given as a callable.

    ``field`` maps points of shape (N, d) to vectors of shape (N, d).
    """
    q = quadrature if quadrature is not None else fine_quadrature(index_set)
    ev = _Evaluator(index_set.modes, q.nodes, index_set.prefactors)
    v = np.asarray(field(q.nodes), dtype=float)
    return np.einsum("knd,nd,n->k", ev.gradient(), v, q.weights)


def reconstruct(z, index_set, points):
    """Evaluate ``sum_k z_k grad b_k`` at points of shape (N, d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ev = _Evaluator(index_set.modes, points, index_set.prefactors)
    return np.einsum("k,knd->nd", np.asarray(z, dtype=float), ev.gradient())
