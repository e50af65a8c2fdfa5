"""Composite tensor-product Gauss-Legendre quadrature on the unit cube."""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class QuadratureGrid:
    """Fixed reference nodes, weights and reference density samples.

    Attributes
    ----------
    dim : int
    cells : int
        Cells per direction (``K1``).
    points : int
        Gauss points per direction and cell (``K2``).
    nodes : ndarray, shape (N, dim)
    weights : ndarray, shape (N,)
    density : ndarray, shape (N,) or None
        Reference density sampled at the nodes.
    density_grad : ndarray, shape (N, dim) or None
        Its gradient, when the density field provides one.
    """

    dim: int
    cells: int
    points: int
    nodes: np.ndarray
    weights: np.ndarray
    density: Optional[np.ndarray] = None
    density_grad: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.weights.size

    def integrate(self, values):
        return integrate(self, values)

    def with_density(self, field):
        rho = np.asarray(field.value(self.nodes), dtype=float)
        if np.any(~(rho > 0)):
            raise ValueError("reference density must be strictly positive at every node")
        grad = getattr(field, "grad", None)
        drho = None if grad is None else np.asarray(grad(self.nodes), dtype=float)
        return QuadratureGrid(self.dim, self.cells, self.points, self.nodes, self.weights,
                              rho, drho)


def gauss_legendre_1d(cells, points):
    """Composite Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if cells < 1 or points < 1:
        raise ValueError("cells and points must be >= 1")
    xi, wi = np.polynomial.legendre.leggauss(points)
    h = 1.0 / cells
    left = np.arange(cells) * h
    x = (left[:, None] + 0.5 * h * (xi[None, :] + 1.0)).ravel()
    w = np.tile(0.5 * h * wi, cells)
    return x, w


def build_gauss_grid(dim, cells, points=2, density=None):
    """Tensorised composite Gauss grid with ``(cells * points)**dim`` nodes.

    Nodes are ordered lexicographically with the first coordinate slowest.
    If ``density`` is given it is sampled at the nodes and must be positive.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    x, w = gauss_legendre_1d(cells, points)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    wmesh = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
    grid = QuadratureGrid(dim, cells, points, nodes, weights)
    if density is not None:
        grid = grid.with_density(density)
    return grid


def integrate(grid, values):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.size:
        raise ValueError(f"expected {grid.size} nodal values, got {values.shape[0]}")
    return np.tensordot(grid.weights, values, axes=(0, 0))
