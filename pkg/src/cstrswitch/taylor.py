"""Truncated univariate Taylor series with array-valued coefficients.

Only what the reactor right-hand side needs: ``+ - * /`` against scalars and
other series, ``reciprocal`` and ``exp``.  Coefficients may be complex, which
lets a complex step ride along for exact first derivatives.
"""

from __future__ import annotations

import numpy as np


class TaylorSeries:
    __slots__ = ("coeffs",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs)

    @classmethod
    def constant(cls, value, order: int) -> "TaylorSeries":
        value = np.asarray(value)
        c = np.zeros((order + 1,) + value.shape, dtype=np.result_type(value, float))
        c[0] = value
        return cls(c)

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    def _coerce(self, other):
        if isinstance(other, TaylorSeries):
            return other.coeffs
        c = np.zeros_like(self.coeffs, dtype=np.result_type(self.coeffs, other))
        c[0] = other
        return c

    def __add__(self, other):
        return TaylorSeries(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return TaylorSeries(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return TaylorSeries(self._coerce(other) - self.coeffs)

    def __neg__(self):
        return TaylorSeries(-self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, TaylorSeries):
            return TaylorSeries(self.coeffs * other)
        a, b = self.coeffs, other.coeffs
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
        for k in range(out.shape[0]):
            out[k] = np.sum(a[: k + 1] * b[k::-1], axis=0)
        return TaylorSeries(out)

    __rmul__ = __mul__

    def reciprocal(self):
        a = self.coeffs
        out = np.zeros_like(a)
        out[0] = 1.0 / a[0]
        for k in range(1, a.shape[0]):
            out[k] = -out[0] * np.sum(a[1: k + 1] * out[k - 1::-1], axis=0)
        return TaylorSeries(out)

    def __truediv__(self, other):
        if not isinstance(other, TaylorSeries):
            return TaylorSeries(self.coeffs / other)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def exp(self):
        a = self.coeffs
        out = np.zeros_like(a)
        out[0] = np.exp(a[0])
        for k in range(1, a.shape[0]):
            i = np.arange(1, k + 1).reshape((-1,) + (1,) * (a.ndim - 1))
            out[k] = np.sum(i * a[1: k + 1] * out[k - 1::-1], axis=0) / k
        return TaylorSeries(out)


def flow_coefficients(rhs, x0, order: int) -> np.ndarray:
    """Taylor coefficients of the solution of ``x' = rhs(x)`` through ``x0``.

    ``rhs`` maps a list of component series to a list of component series.
    Returns an array ``(order + 1, n, *batch)``; coefficient ``k`` is
    ``x^{(k)}(0) / k!``.
    """
    x0 = np.asarray(x0)
    n = x0.shape[0]
    coeffs = np.zeros((order + 1,) + x0.shape, dtype=x0.dtype if np.iscomplexobj(x0) else float)
    coeffs[0] = x0
    for k in range(order):
        cols = [TaylorSeries(coeffs[: k + 2, i]) for i in range(n)]
        f = rhs(cols)
        for i in range(n):
            if isinstance(f[i], TaylorSeries):
                fk = f[i].coeffs[k]
            else:
                fk = f[i] if k == 0 else 0.0
            coeffs[k + 1, i] = fk / (k + 1)
    return coeffs
