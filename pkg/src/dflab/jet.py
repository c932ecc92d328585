"""Second-order forward-mode differentiation of expression trees.

Each intermediate quantity carries its value, its gradient and the packed upper
triangle of its Hessian (truncated Taylor arithmetic).  Evaluation is
vectorised over a leading batch axis so a single tree walk handles many points.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, EvalError
from .expr import BinOp, Const, Expression, Func, Neg, Pow, Var, to_text


@lru_cache(maxsize=None)
def triu_pairs(m):
    """Row/column indices of the packed upper triangle of an m x m matrix."""
    return np.triu_indices(m)


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a scalar function.

    ``tri`` holds the packed upper triangle, so the Hessian returned by
    :attr:`hess` is symmetric by construction.  All arrays may carry leading
    batch dimensions.
    """

    value: np.ndarray
    grad: np.ndarray
    tri: np.ndarray

    @property
    def dim(self) -> int:
        return self.grad.shape[-1]

    @property
    def hess(self) -> np.ndarray:
        m = self.dim
        i, j = triu_pairs(m)
        h = np.empty(self.tri.shape[:-1] + (m, m))
        h[..., i, j] = self.tri
        h[..., j, i] = self.tri
        return h

    def __getitem__(self, key):
        return Jet2(self.value[key], self.grad[key], self.tri[key])

    def scaled(self, factor) -> "Jet2":
        """Multiply by a (possibly batched) constant factor."""
        f = np.asarray(factor, dtype=float)
        return Jet2(self.value * f, self.grad * f[..., None], self.tri * f[..., None])

    def __add__(self, other):
        return Jet2(self.value + other.value, self.grad + other.grad, self.tri + other.tri)

    def __rmul__(self, k):
        return Jet2(k * self.value, k * self.grad, k * self.tri)


class _T:
    """Taylor number used during evaluation; ``g``/``h`` are None below order 1/2."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g=None, h=None):
        self.v, self.g, self.h = v, g, h


class _Evaluator:
    def __init__(self, points, order):
        self.p = points
        self.order = order
        self.shape = points.shape[:-1]
        self.m = points.shape[-1]
        self.ii, self.jj = triu_pairs(self.m)

    def zeros_g(self):
        return np.zeros(self.shape + (self.m,)) if self.order >= 1 else None

    def zeros_h(self):
        return np.zeros(self.shape + (len(self.ii),)) if self.order >= 2 else None

    def const(self, c):
        return _T(np.full(self.shape, c, dtype=float), self.zeros_g(), self.zeros_h())

    def outer2(self, a, b):
        """Packed a b^T + b a^T."""
        ii, jj = self.ii, self.jj
        return a[..., ii] * b[..., jj] + b[..., ii] * a[..., jj]

    def chain(self, a, f0, f1, f2):
        """Apply a scalar function with derivatives f0, f1, f2 (evaluated at a.v)."""
        g = h = None
        if self.order >= 1:
            g = f1[..., None] * a.g
        if self.order >= 2:
            h = f1[..., None] * a.h + f2[..., None] * (a.g[..., self.ii] * a.g[..., self.jj])
        return _T(f0, g, h)

    def add(self, a, b, sign=1.0):
        g = h = None
        if self.order >= 1:
            g = a.g + sign * b.g
        if self.order >= 2:
            h = a.h + sign * b.h
        return _T(a.v + sign * b.v, g, h)

    def mul(self, a, b):
        g = h = None
        if self.order >= 1:
            g = a.v[..., None] * b.g + b.v[..., None] * a.g
        if self.order >= 2:
            h = a.v[..., None] * b.h + b.v[..., None] * a.h + self.outer2(a.g, b.g)
        return _T(a.v * b.v, g, h)

    def fail(self, message, node, mask):
        where = ""
        if np.ndim(mask):
            bad = np.flatnonzero(mask)
            where = f" (at {bad.size} point(s), first index {bad[0]})"
        raise EvalError(message + where, to_text(node))

    def power_const(self, a, k, node):
        x = a.v
        is_int = float(k).is_integer()
        if not is_int and np.any(x < 0):
            self.fail(f"non-integer power {k!r} of a negative base", node, x < 0)
        if np.any(x == 0) and (k < 0 or (not is_int and k < self.order)):
            self.fail(f"power {k!r} is not differentiable at zero", node, x == 0)
        if is_int and k == 0:
            one = np.ones_like(x)
            return self.chain(a, one, 0.0 * one, 0.0 * one)
        if is_int and k == 1:
            return self.chain(a, x, np.ones_like(x), np.zeros_like(x))
        with np.errstate(divide="ignore", invalid="ignore"):
            f0 = x**k
            f1 = k * x ** (k - 1)
            f2 = k * (k - 1) * x ** (k - 2)
        return self.chain(a, f0, f1, f2)

    def eval(self, node):
        if isinstance(node, Const):
            return self.const(node.value)
        if isinstance(node, Var):
            if node.slot >= self.m:
                raise DimensionError(f"variable {to_text(node)} outside a {self.m}-dimensional point")
            g = h = None
            if self.order >= 1:
                g = self.zeros_g()
                g[..., node.slot] = 1.0
            if self.order >= 2:
                h = self.zeros_h()
            return _T(self.p[..., node.slot].astype(float), g, h)
        if isinstance(node, Neg):
            a = self.eval(node.arg)
            return _T(-a.v, None if a.g is None else -a.g, None if a.h is None else -a.h)
        if isinstance(node, BinOp):
            a = self.eval(node.left)
            b = self.eval(node.right)
            if node.op == "+":
                return self.add(a, b)
            if node.op == "-":
                return self.add(a, b, -1.0)
            if node.op == "*":
                return self.mul(a, b)
            if np.any(b.v == 0):
                self.fail("division by zero", node, b.v == 0)
            inv = 1.0 / b.v
            return self.mul(a, self.chain(b, inv, -inv * inv, 2.0 * inv * inv * inv))
        if isinstance(node, Pow):
            a = self.eval(node.base)
            if isinstance(node.exponent, Const) or (
                isinstance(node.exponent, Neg) and isinstance(node.exponent.arg, Const)
            ):
                k = node.exponent.value if isinstance(node.exponent, Const) else -node.exponent.arg.value
                return self.power_const(a, k, node)
            e = self.eval(node.exponent)
            if np.any(a.v <= 0):
                self.fail("variable exponent requires a positive base", node, a.v <= 0)
            la = np.log(a.v)
            log_a = self.chain(a, la, 1.0 / a.v, -1.0 / (a.v * a.v))
            w = self.mul(e, log_a)
            ew = np.exp(w.v)
            return self.chain(w, ew, ew, ew)
        if isinstance(node, Func):
            a = self.eval(node.arg)
            x = a.v
            name = node.name
            if name == "exp":
                ex = np.exp(x)
                return self.chain(a, ex, ex, ex)
            if name == "log":
                if np.any(x <= 0):
                    self.fail("log of a nonpositive value", node, x <= 0)
                return self.chain(a, np.log(x), 1.0 / x, -1.0 / (x * x))
            if name == "sqrt":
                if np.any(x < 0) or (self.order >= 1 and np.any(x == 0)):
                    self.fail("sqrt of a nonpositive value", node, x <= 0)
                s = np.sqrt(x)
                with np.errstate(divide="ignore"):
                    return self.chain(a, s, 0.5 / s, -0.25 / (s * x))
            if name == "sin":
                s, c = np.sin(x), np.cos(x)
                return self.chain(a, s, c, -s)
            if name == "cos":
                s, c = np.sin(x), np.cos(x)
                return self.chain(a, c, -s, -c)
        raise TypeError(f"cannot evaluate {node!r}")


def _points(expr, p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 2 * expr.n:
        raise DimensionError(f"expected points with {2 * expr.n} real coordinates, got shape {p.shape}")
    return p


def eval_jet2(expr: Expression, p) -> Jet2:
    """Value, gradient and Hessian of ``expr`` at real point(s) ``p`` (shape ``(..., 2n)``)."""
    p = _points(expr, p)
    t = _Evaluator(p, 2).eval(expr.ast)
    return Jet2(t.v, t.g, t.h)


def eval_grad(expr: Expression, p):
    p = _points(expr, p)
    t = _Evaluator(p, 1).eval(expr.ast)
    return t.v, t.g


def eval_value(expr: Expression, p):
    p = _points(expr, p)
    return _Evaluator(p, 0).eval(expr.ast).v
