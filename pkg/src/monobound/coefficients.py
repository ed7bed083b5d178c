"""Scalar coefficient functions of the observed state.

A :class:`Coefficient` is either symbolic or a plain numerical callable.

Symbolic coefficients are sympy expressions in ``x`` and carry exact
derivatives of every order.  They may also live on a :class:`ScaleChart`,
i.e. be functions of a new coordinate ``s = S(x)``; derivatives in ``s`` are
then produced by the chain rule ``d/ds = (1/S'(x)) d/dx`` so they stay exact.

Callable coefficients use central finite differences and only support
derivatives up to :data:`FD_MAX_ORDER`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import sympy as sp

X = sp.Symbol("x", real=True)
# stands for the inner scale integral I(x) = int_0^x 2 mu0/sigma^2 on a ScaleChart
I_SYM = sp.Symbol("I_scale", real=True)

_EPS = np.finfo(float).eps

FD_MAX_ORDER = 2


class CapabilityError(ValueError):
    """Requested derivative order exceeds what a coefficient can provide."""


def _as_array(value, shape):
    out = np.asarray(value, dtype=float)
    if out.shape != shape:
        out = np.array(np.broadcast_to(out, shape), dtype=float)
    return out


class ScaleChart:
    """Coordinate s = S(x) with S' = exp(-I), I' = ``i_prime`` (an expression in x).

    ``x_of_s`` inverts S numerically and ``i_of_x`` evaluates I; both are
    vectorised callables supplied by the scale transform.
    """

    def __init__(self, i_prime: sp.Expr, x_of_s: Callable, i_of_x: Callable):
        self.i_prime = i_prime
        self.x_of_s = x_of_s
        self.i_of_x = i_of_x

    def d(self, expr: sp.Expr) -> sp.Expr:
        """d/ds of an expression in (x, I)."""
        return sp.exp(I_SYM) * (sp.diff(expr, X) + sp.diff(expr, I_SYM) * self.i_prime)


class Coefficient:
    """A real function with derivatives up to :attr:`max_order`."""

    def __init__(self, expr=None, func: Callable | None = None,
                 max_order: int | None = None, chart: ScaleChart | None = None):
        if (expr is None) == (func is None):
            raise ValueError("give exactly one of expr or func")
        self.expr = None if expr is None else sp.sympify(expr)
        self.chart = chart
        self._func = func
        self._cache: dict[int, tuple] = {}
        if self.expr is not None:
            self.max_order = math.inf
        else:
            self.max_order = FD_MAX_ORDER if max_order is None else max_order

    @classmethod
    def constant(cls, value: float) -> "Coefficient":
        value = float(value)
        return cls(expr=sp.Integer(int(value)) if value.is_integer() else sp.Float(value))

    @classmethod
    def coerce(cls, obj) -> "Coefficient":
        if isinstance(obj, Coefficient):
            return obj
        if isinstance(obj, (int, float, np.floating, np.integer)):
            return cls.constant(float(obj))
        if isinstance(obj, sp.Basic):
            return cls(expr=obj)
        if callable(obj):
            return cls(func=obj)
        raise TypeError(f"cannot build a coefficient from {type(obj).__name__}")

    @property
    def symbolic(self) -> bool:
        return self.expr is not None

    def _compiled(self, n: int):
        hit = self._cache.get(n)
        if hit is None:
            e = self.expr
            if self.chart is None:
                e = sp.diff(e, X, n) if n else e
                hit = (sp.lambdify(X, e, "numpy"), False)
            else:
                for _ in range(n):
                    e = self.chart.d(e)
                hit = (sp.lambdify((X, I_SYM), e, "numpy"), True)
            self._cache[n] = hit
        return hit

    def _eval_symbolic(self, x, n):
        fn, charted = self._compiled(n)
        if not charted:
            return _as_array(fn(x), x.shape)
        xx = self.chart.x_of_s(x)
        return _as_array(fn(xx, self.chart.i_of_x(xx)), x.shape)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.symbolic:
            return self._eval_symbolic(x, 0)
        return _as_array(self._func(x), x.shape)

    def derivative(self, x, n: int = 1):
        """n-th derivative at x (n = 0 returns the value)."""
        if n < 0:
            raise ValueError("derivative order must be non-negative")
        if n > self.max_order:
            raise CapabilityError(
                f"derivative of order {n} requested, coefficient supports {self.max_order}")
        x = np.asarray(x, dtype=float)
        if n == 0:
            return self(x)
        if self.symbolic:
            return self._eval_symbolic(x, n)
        return _central_difference(self._func, x, n)

    def diff(self, n: int = 1) -> "Coefficient":
        """The n-th derivative as a new coefficient."""
        if self.symbolic:
            e = self.expr
            if self.chart is None:
                return Coefficient(expr=sp.diff(e, X, n))
            for _ in range(n):
                e = self.chart.d(e)
            return Coefficient(expr=e, chart=self.chart)
        if n > self.max_order:
            raise CapabilityError(f"order {n} exceeds {self.max_order}")
        return Coefficient(func=lambda x, f=self._func: _central_difference(f, x, n),
                           max_order=self.max_order - n)

    def _combine(self, other, op) -> "Coefficient":
        other = Coefficient.coerce(other)
        if self.symbolic and other.symbolic:
            charts = {id(c): c for c in (self.chart, other.chart) if c is not None}
            if len(charts) <= 1:
                chart = next(iter(charts.values()), None)
                if chart is not None and not (self.chart and other.chart):
                    # a plain constant may join a charted expression
                    plain = other if self.chart else self
                    if plain.expr.free_symbols:
                        return self._combine_numeric(other, op)
                return Coefficient(expr=op(self.expr, other.expr), chart=chart)
        return self._combine_numeric(other, op)

    def _combine_numeric(self, other, op):
        order = min(self.max_order, other.max_order)
        return Coefficient(func=lambda x, a=self, b=other: op(a(x), b(x)),
                           max_order=FD_MAX_ORDER if order == math.inf else order)

    def __add__(self, other):
        return self._combine(other, lambda a, b: a + b)

    def __radd__(self, other):
        return Coefficient.coerce(other) + self

    def __sub__(self, other):
        return self._combine(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return Coefficient.coerce(other) - self

    def __mul__(self, other):
        return self._combine(other, lambda a, b: a * b)

    def __rmul__(self, other):
        return Coefficient.coerce(other) * self

    def __truediv__(self, other):
        return self._combine(other, lambda a, b: a / b)

    def __rtruediv__(self, other):
        return Coefficient.coerce(other) / self

    def __neg__(self):
        return self * -1

    def reflected(self) -> "Coefficient":
        """x -> self(-x)."""
        if self.symbolic and self.chart is None:
            return Coefficient(expr=self.expr.subs(X, -X))
        return Coefficient(func=lambda x, f=self: f(-np.asarray(x, dtype=float)),
                           max_order=min(self.max_order, FD_MAX_ORDER))

    def __repr__(self):
        if self.symbolic:
            where = "" if self.chart is None else ", scale chart"
            return f"Coefficient({self.expr}{where})"
        return f"Coefficient(<callable>, max_order={self.max_order})"


def _central_difference(func, x, n):
    """n-th derivative by the symmetric (n+1)-point difference.

    Step h = max(1, |x|) * eps**(1/(n+2)), accuracy O(h**2).
    """
    x = np.asarray(x, dtype=float)
    h = np.maximum(1.0, np.abs(x)) * _EPS ** (1.0 / (n + 2))
    total = np.zeros_like(x)
    for k in range(n + 1):
        total = total + (-1) ** k * math.comb(n, k) * func(x + (n / 2 - k) * h)
    return total / h ** n
