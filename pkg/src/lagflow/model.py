"""Pressure laws, external potentials and closed-form densities.

Points are arrays whose last axis holds the ``d`` coordinates; every evaluator
broadcasts over the leading axes. Potentials and ``h_*`` are written against
the dispatching helpers in :mod:`lagflow.dual`, so they also accept
:class:`~lagflow.dual.Dual` arguments.
"""

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import dual
from .dual import Dual


def _components(x):
    """Split points into a list of coordinate arrays (or duals)."""
    if isinstance(x, Dual):
        return [Dual(x.val[..., i], x.der[..., i, :]) for i in range(x.val.shape[-1])]
    x = np.asarray(x, dtype=float)
    return [x[..., i] for i in range(x.shape[-1])]


def _check_positive(s, name):
    v = dual.value(s)
    if np.any(~(v > 0)):
        raise ValueError(f"{name} requires strictly positive arguments")


# --------------------------------------------------------------------------
# pressure / entropy densities


@dataclass(frozen=True)
class PressureModel:
    """Power-law pressure ``P(r) = r**m`` with its entropy densities.

    The entropy density is normalised as ``h(r) = r**m / (m - 1)`` for
    ``m != 1`` and ``h(r) = r log r`` for ``m == 1``, so ``P'(r) = r h''(r)``.
    ``h_*(s) = s h(1/s)`` is the density seen through a Jacobian determinant.
    """

    m: float

    def __post_init__(self):
        if not (self.m > 0) or not math.isfinite(self.m):
            raise ValueError(f"pressure exponent must be positive, got {self.m!r}")

    @property
    def logarithmic(self):
        return self.m == 1

    def P(self, r):
        return dual.power(r, self.m)

    def dP(self, r):
        return self.m * dual.power(r, self.m - 1)

    def d2P(self, r):
        return self.m * (self.m - 1) * dual.power(r, self.m - 2)

    def h(self, r):
        if self.logarithmic:
            return r * dual.log(r)
        return dual.power(r, self.m) / (self.m - 1)

    def dh(self, r):
        if self.logarithmic:
            return dual.log(r) + 1.0
        return self.m / (self.m - 1) * dual.power(r, self.m - 1)

    def d2h(self, r):
        return self.m * dual.power(r, self.m - 2)

    def hstar(self, s):
        _check_positive(s, "h_*")
        if self.logarithmic:
            return -dual.log(s)
        return dual.power(s, 1 - self.m) / (self.m - 1)

    def dhstar(self, s):
        _check_positive(s, "h_*'")
        return -dual.power(s, -self.m)

    def d2hstar(self, s):
        _check_positive(s, "h_*''")
        return self.m * dual.power(s, -self.m - 1)


def make_power_pressure(m):
    """Return the pressure model ``P(r) = r**m``; ``m = 1`` is the heat flow."""
    return PressureModel(float(m))


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """External potential ``V`` with gradient, Hessian and convexity modulus.

    ``modulus`` is a lower bound for the smallest eigenvalue of the Hessian on
    the unit cube.
    """

    name: str
    value_fn: Callable
    grad_fn: Callable
    hess_fn: Callable
    modulus: float
    dim: Optional[int] = None

    def value(self, x):
        return self.value_fn(x)

    def grad(self, x):
        return self.grad_fn(np.asarray(x, dtype=float))

    def hess(self, x):
        return self.hess_fn(np.asarray(x, dtype=float))

    __call__ = value


def eval_potential(p, x):
    return p.value(x)


def zero_potential():
    def value(x):
        c = _components(x)
        return 0.0 * c[0]

    def grad(x):
        return np.zeros_like(x)

    def hess(x):
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))

    return Potential("zero", value, grad, hess, 0.0)


def quadratic_potential(lam):
    """``V(x) = lam/2 |x|^2`` with modulus exactly ``lam``."""
    lam = float(lam)

    def value(x):
        c = _components(x)
        acc = c[0] * c[0]
        for ci in c[1:]:
            acc = acc + ci * ci
        return 0.5 * lam * acc

    def grad(x):
        return lam * x

    def hess(x):
        d = x.shape[-1]
        return lam * np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()

    return Potential(f"quadratic({lam:g})", value, grad, hess, lam)


EXP1_AMPLITUDE = 0.75


def exp1_potential(amplitude=EXP1_AMPLITUDE):
    """``V(x) = -a (cos 2 pi x1 - 1)(cos 4 pi x2 - 1)`` on the unit square."""
    a = float(amplitude)
    w1, w2 = 2 * np.pi, 4 * np.pi

    def value(x):
        x1, x2 = _components(x)
        return -a * (dual.cos(w1 * x1) - 1.0) * (dual.cos(w2 * x2) - 1.0)

    def grad(x):
        x1, x2 = x[..., 0], x[..., 1]
        f1, f2 = np.cos(w1 * x1) - 1.0, np.cos(w2 * x2) - 1.0
        g1 = -a * (-w1 * np.sin(w1 * x1)) * f2
        g2 = -a * f1 * (-w2 * np.sin(w2 * x2))
        return np.stack([g1, g2], axis=-1)

    def hess(x):
        x1, x2 = x[..., 0], x[..., 1]
        f1, f2 = np.cos(w1 * x1) - 1.0, np.cos(w2 * x2) - 1.0
        h11 = -a * (-w1 ** 2 * np.cos(w1 * x1)) * f2
        h22 = -a * f1 * (-w2 ** 2 * np.cos(w2 * x2))
        h12 = -a * (w1 * np.sin(w1 * x1)) * (w2 * np.sin(w2 * x2))
        return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)

    # modulus by a dense scan; the Hessian is a trigonometric polynomial
    s = np.linspace(0.0, 1.0, 241)
    pts = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
    lam = float(np.linalg.eigvalsh(hess(pts)).min())
    return Potential("exp1", value, grad, hess, lam, dim=2)


_QUAD_RE = re.compile(r"^quadratic\(\s*([^)]+?)\s*\)$")


def make_potential(spec):
    """Potential from a config string: ``exp1``, ``zero`` or ``quadratic(lam)``."""
    s = spec.strip()
    if s == "exp1":
        return exp1_potential()
    if s == "zero":
        return zero_potential()
    mt = _QUAD_RE.match(s)
    if mt:
        try:
            lam = float(mt.group(1))
        except ValueError:
            raise ValueError(f"bad quadratic potential parameter in {spec!r}") from None
        return quadratic_potential(lam)
    raise ValueError(f"unknown potential {spec!r} (expected exp1, zero or quadratic(lambda))")


# --------------------------------------------------------------------------
# scalar fields / densities


@dataclass(frozen=True)
class ScalarField:
    """Closed-form scalar field on the unit cube."""

    name: str
    value_fn: Callable
    grad_fn: Callable
    symmetric_periodic: bool = False
    scale: float = 1.0
    dim: Optional[int] = None

    def value(self, x):
        return self.scale * self.value_fn(np.asarray(x, dtype=float))

    def grad(self, x):
        return self.scale * self.grad_fn(np.asarray(x, dtype=float))

    __call__ = value

    def scaled(self, factor):
        return ScalarField(self.name, self.value_fn, self.grad_fn,
                           self.symmetric_periodic, self.scale * factor, self.dim)

    def normalized(self, quadrature):
        """Rescale to unit mass under ``quadrature`` (anything with nodes/weights)."""
        mass = float(np.dot(self.value(quadrature.nodes), quadrature.weights))
        if not mass > 0:
            raise ValueError(f"field {self.name!r} has nonpositive mass {mass}")
        return self.scaled(1.0 / mass)


def uniform_density(value=1.0):
    v = float(value)
    return ScalarField(
        "uniform",
        lambda x: np.full(x.shape[:-1], v),
        lambda x: np.zeros_like(x),
        symmetric_periodic=True,
    )


def _exp1_raw(x):
    x1, x2 = x[..., 0], x[..., 1]
    return 0.1 + x1 * (np.cos(4 * np.pi * x1) - 1.2) * (np.cos(2 * np.pi * x2) - 1.0)


def _exp1_raw_grad(x):
    x1, x2 = x[..., 0], x[..., 1]
    a = np.cos(4 * np.pi * x1) - 1.2
    b = np.cos(2 * np.pi * x2) - 1.0
    g1 = (a - 4 * np.pi * x1 * np.sin(4 * np.pi * x1)) * b
    g2 = x1 * a * (-2 * np.pi * np.sin(2 * np.pi * x2))
    return np.stack([g1, g2], axis=-1)


# exact mass of the raw profile: 0.1 + (-0.6)(-1)
EXP1_RAW_MASS = 0.7


def make_initial_density_exp1(quadrature=None):
    """Two-bump initial density of the qualitative experiment.

    Without ``quadrature`` the constant is the exact one (``1/0.7``); with a
    quadrature grid the field is normalised to unit discrete mass on it.
    """
    f = ScalarField("exp1", _exp1_raw, _exp1_raw_grad, symmetric_periodic=False, dim=2)
    if quadrature is None:
        return f.scaled(1.0 / EXP1_RAW_MASS)
    return f.normalized(quadrature)


_COS_RE = re.compile(r"^cosine\(\s*([^)]+?)\s*\)$")


def cosine_bump(amplitude, dim):
    """``1 + a prod_i cos(pi x_i)``; positive for ``|a| < 1``, unit mass for ``dim >= 1``."""
    a = float(amplitude)
    if not abs(a) < 1:
        raise ValueError(f"cosine bump needs |a| < 1 to stay positive, got {a!r}")
    f = cosine_field({(0,) * dim: 1.0, (1,) * dim: a})
    return ScalarField(f"cosine({a:g})", f.value_fn, f.grad_fn, True, 1.0, dim)


def make_density(spec, quadrature=None, dim=2):
    """Initial/reference density from a config string.

    Accepts ``exp1`` (two dimensions only), ``uniform`` or ``cosine(a)``.
    """
    s = spec.strip()
    if s == "exp1":
        if dim != 2:
            raise ValueError("the exp1 density is two-dimensional")
        return make_initial_density_exp1(quadrature)
    if s == "uniform":
        return uniform_density(1.0)
    mt = _COS_RE.match(s)
    if mt:
        try:
            a = float(mt.group(1))
        except ValueError:
            raise ValueError(f"bad cosine amplitude in {spec!r}") from None
        return cosine_bump(a, dim)
    raise ValueError(f"unknown density {spec!r} (expected exp1, uniform or cosine(a))")


def cosine_field(coeffs):
    """Symmetric-periodic field ``sum_k c_k prod_i cos(k_i pi x_i)``.

    ``coeffs`` maps integer multi-indices to amplitudes.
    """
    items = [(np.asarray(k, dtype=float), float(c)) for k, c in coeffs.items()]

    def value(x):
        out = np.zeros(x.shape[:-1])
        for k, c in items:
            out = out + c * np.prod(np.cos(np.pi * k * x), axis=-1)
        return out

    def grad(x):
        out = np.zeros(x.shape)
        for k, c in items:
            cs = np.cos(np.pi * k * x)
            for i in range(x.shape[-1]):
                term = -np.pi * k[i] * np.sin(np.pi * k[i] * x[..., i])
                rest = np.prod(np.delete(cs, i, axis=-1), axis=-1)
                out[..., i] += c * term * rest
        return out

    return ScalarField("cosine", value, grad, symmetric_periodic=True)
