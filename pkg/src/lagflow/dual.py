"""Vectorised forward-mode dual numbers.

A :class:`Dual` carries a value array of shape ``S`` and a derivative array of
shape ``S + (n,)`` holding ``n`` directional derivatives at once, so a single
pass yields a full gradient with respect to ``n`` seed directions.

The module-level functions (:func:`cos`, :func:`sin`, :func:`log`,
:func:`power`) dispatch on type, which lets model code be written once and
evaluated on plain arrays or on duals.
"""

import numpy as np


class Dual:
    __slots__ = ("val", "der")
    __array_priority__ = 1000

    def __init__(self, val, der):
        self.val = np.asarray(val, dtype=float)
        self.der = np.asarray(der, dtype=float)

    @classmethod
    def variables(cls, x):
        """Seed one independent direction per entry of the 1-D array ``x``."""
        x = np.asarray(x, dtype=float)
        return cls(x, np.eye(x.size))

    @classmethod
    def constant(cls, x, n):
        x = np.asarray(x, dtype=float)
        return cls(x, np.zeros(x.shape + (n,)))

    @property
    def shape(self):
        return self.val.shape

    @property
    def nder(self):
        return self.der.shape[-1]

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, self.nder)

    def __getitem__(self, idx):
        # leading-axis indexing only; an Ellipsis would shift onto the derivative axis
        return Dual(self.val[idx], self.der[idx])

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __add__(self, other):
        o = self._lift(other)
        val = self.val + o.val
        return Dual(val, _bder(self, val) + _bder(o, val))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        val = self.val * o.val
        der = _bder(self, val) * o.val[..., None] + self.val[..., None] * _bder(o, val)
        return Dual(val, der)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        val = self.val / o.val
        der = (_bder(self, val) - val[..., None] * _bder(o, val)) / o.val[..., None]
        return Dual(val, der)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None):
        if axis is None:
            axes = tuple(range(self.val.ndim))
        else:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(a % self.val.ndim for a in axes)
        return Dual(self.val.sum(axis=axes), self.der.sum(axis=axes))

    def __repr__(self):
        return f"Dual(val={self.val!r}, der={self.der!r})"


def _bder(x, val):
    # broadcast derivative block of x against the value shape of a result
    return np.broadcast_to(x.der, val.shape + (x.der.shape[-1],))


def _chain(x, f, df):
    return Dual(f, x.der * df[..., None])


def cos(x):
    if isinstance(x, Dual):
        return _chain(x, np.cos(x.val), -np.sin(x.val))
    return np.cos(x)


def sin(x):
    if isinstance(x, Dual):
        return _chain(x, np.sin(x.val), np.cos(x.val))
    return np.sin(x)


def log(x):
    if isinstance(x, Dual):
        return _chain(x, np.log(x.val), 1.0 / x.val)
    return np.log(x)


def power(x, p):
    if isinstance(x, Dual):
        return _chain(x, x.val ** p, p * x.val ** (p - 1))
    return np.power(x, p)


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x)


def stack(items, axis=-1):
    """Stack duals (or arrays mixed with duals) along a new value axis."""
    n = next(i.nder for i in items if isinstance(i, Dual))
    items = [i if isinstance(i, Dual) else Dual.constant(i, n) for i in items]
    shape = np.broadcast_shapes(*(i.shape for i in items))
    vals = [np.broadcast_to(i.val, shape) for i in items]
    ders = [np.broadcast_to(i.der, shape + (n,)) for i in items]
    ax = axis if axis >= 0 else len(shape) + 1 + axis
    return Dual(np.stack(vals, axis=ax), np.stack(ders, axis=ax))
