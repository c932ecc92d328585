"""Expression trees for real-valued defining functions on C^n.

Grammar (whitespace is ignored)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?            # right-associative
    atom    := NUMBER | 'pi' | VAR | FUNC '(' expr ')'
             | ZFUNC '(' ZVAR ')' | '(' expr ')'
    VAR     := 'x' INT | 'y' INT            # real / imaginary part of z_INT
    ZVAR    := 'z' INT
    FUNC    := 'exp' | 'log' | 'sqrt' | 'sin' | 'cos'
    ZFUNC   := 'abs2' | 're' | 'im'

``abs2(zj)``, ``re(zj)`` and ``im(zj)`` are rewritten at parse time into
``xj^2 + yj^2``, ``xj`` and ``yj``.  A leading minus directly in front of a
number literal (and not in front of a power) is folded into the constant.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

from .errors import DimensionError, ExpressionSyntaxError

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos")
Z_FUNCTIONS = ("abs2", "re", "im")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based complex index
    part: str  # "x" or "y"

    @property
    def slot(self) -> int:
        """Position in the interleaved real coordinate vector (x1, y1, x2, y2, ...)."""
        return 2 * (self.index - 1) + (0 if self.part == "x" else 1)


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: "Expr"


@dataclass(frozen=True)
class Func:
    name: str
    arg: "Expr"


Expr = Union[Const, Var, Neg, BinOp, Pow, Func]


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with the complex dimension it lives in."""

    ast: Expr
    n: int

    def __str__(self) -> str:
        return to_text(self.ast)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text, n):
        self.text = text
        self.n = n
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        raise ExpressionSyntaxError(message, tok[2], self.text)

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            self.error("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            if self.peek()[0] == "num" and self.peek(1)[1] != "^":
                return Const(-float(self.take()[1]))
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Pow(base, self.unary())
        return base

    def variable(self, tok, prefixes):
        m = re.fullmatch(r"([xyz])(\d+)", tok[1])
        if m is None or m.group(1) not in prefixes:
            return None
        index = int(m.group(2))
        if not 1 <= index <= self.n:
            raise DimensionError(
                f"variable {tok[1]!r} at position {tok[2]} is out of range for n={self.n}"
            )
        return m.group(1), index

    def atom(self):
        tok = self.take()
        kind, value, _ = tok
        if kind == "num":
            return Const(float(value))
        if value == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind != "name":
            self.error(f"unexpected token {value or 'end of input'!r}", tok)
        if value == "pi":
            return Const(math.pi)
        if value in FUNCTIONS:
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Func(value, arg)
        if value in Z_FUNCTIONS:
            self.expect("(")
            ztok = self.take()
            var = self.variable(ztok, "z") if ztok[0] == "name" else None
            if var is None:
                self.error(f"{value}() takes a complex variable z1..z{self.n}", ztok)
            self.expect(")")
            j = var[1]
            if value == "re":
                return Var(j, "x")
            if value == "im":
                return Var(j, "y")
            two = Const(2.0)
            return BinOp("+", Pow(Var(j, "x"), two), Pow(Var(j, "y"), two))
        var = self.variable(tok, "xy")
        if var is None:
            self.error(f"unknown identifier {value!r}", tok)
        return Var(var[1], var[0])


def parse(text: str, n: int) -> Expression:
    """Parse ``text`` into an :class:`Expression` over ``n`` complex variables."""
    if not 1 <= n <= 4:
        raise DimensionError(f"complex dimension must be in 1..4, got {n}")
    return Expression(_Parser(text, n).parse(), n)


def _fmt(value):
    if math.copysign(1.0, value) < 0:
        return f"({value!r})"
    return repr(float(value))


def to_text(node: Expr) -> str:
    """Print ``node`` so that ``parse(to_text(node))`` rebuilds the same tree."""
    if isinstance(node, Const):
        return _fmt(node.value)
    if isinstance(node, Var):
        return f"{node.part}{node.index}"
    if isinstance(node, Neg):
        inner = to_text(node.arg)
        if isinstance(node.arg, Const) and node.arg.value >= 0:
            inner = f"({inner})"
        return f"(-{inner})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)}^{to_text(node.exponent)})"
    if isinstance(node, Func):
        return f"{node.name}({to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


def substitute(node: Expr, mapping: dict) -> Expr:
    """Replace variables by expression trees; ``mapping`` is keyed by ``(part, index)``."""
    if isinstance(node, Var):
        return mapping.get((node.part, node.index), node)
    if isinstance(node, Const):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, mapping))
    if isinstance(node, BinOp):
        return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))
    if isinstance(node, Pow):
        return Pow(substitute(node.base, mapping), substitute(node.exponent, mapping))
    if isinstance(node, Func):
        return Func(node.name, substitute(node.arg, mapping))
    raise TypeError(f"not an expression node: {node!r}")


def _linear(coeffs):
    terms = [BinOp("*", Const(c), Var(j, part)) for (part, j), c in coeffs if c != 0.0]
    if not terms:
        return Const(0.0)
    node = terms[0]
    for t in terms[1:]:
        node = BinOp("+", node, t)
    return node


def compose_unitary(expr: Expression, U) -> Expression:
    """Return the expression of ``z -> rho(U z)`` for a complex n x n matrix ``U``."""
    n = expr.n
    mapping = {}
    for j in range(n):
        xs, ys = [], []
        for k in range(n):
            a, b = float(U[j][k].real), float(U[j][k].imag)
            # (a + ib)(x + iy) = (ax - by) + i(bx + ay)
            xs += [(("x", k + 1), a), (("y", k + 1), -b)]
            ys += [(("x", k + 1), b), (("y", k + 1), a)]
        mapping[("x", j + 1)] = _linear(xs)
        mapping[("y", j + 1)] = _linear(ys)
    return Expression(substitute(expr.ast, mapping), n)


def scale(expr: Expression, factor: float) -> Expression:
    return Expression(BinOp("*", Const(float(factor)), expr.ast), expr.n)
