"""Small arithmetic expression language with exact forward-mode derivatives.

Expressions are parsed against an ordered list of coordinate names and
evaluated at points.  Evaluation can produce the plain value, the value with
gradient, or a full second-order jet (value, gradient, Hessian).  All
derivatives come from dual-number style propagation rules, so no finite
differences are ever used on raw expressions.

The grammar (EBNF in docs/GRAMMAR.ebnf):

    expr    :=  term   (('+' | '-') term)*
    term    :=  factor (('*' | '/') factor)*
    factor  :=  '-' factor | power
    power   :=  atom ['^' factor]       # exponent must fold to a constant
    atom    :=  NUMBER | 'pi' | NAME | FUNC '(' expr ')' | '(' expr ')'

`+ - * /` associate to the left, `^` binds tighter than unary minus and its
exponent subtree may not contain variables.  Whitespace is insignificant and
there is no implicit multiplication.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "Jet2",
    "ExprError",
    "ParseError",
    "UnknownIdentifierError",
    "EvalDomainError",
    "parse",
    "to_source",
    "differentiate",
    "is_constant",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprError(Exception):
    """Base class for expression-language errors."""


class ParseError(ExprError):
    """Malformed source text; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    """An identifier that is neither a coordinate, a function nor ``pi``."""

    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


class EvalDomainError(ExprError):
    """Evaluation left the domain of a subexpression (log, sqrt, division)."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in '{to_source(subexpr)}'")
        self.subexpr = subexpr


@dataclass(frozen=True)
class Jet2:
    """Second-order jet: value, gradient and symmetric Hessian at a point."""

    value: float
    gradient: np.ndarray
    hessian: np.ndarray


class Expr:
    """Base class of AST nodes.  Nodes are immutable and safe to share."""

    def value(self, x) -> float:
        raise NotImplementedError

    def jet1(self, x) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def jet2(self, x) -> tuple[float, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def eval_jet2(self, x) -> Jet2:
        v, g, h = self.jet2(np.asarray(x, dtype=float))
        return Jet2(v, g, h)

    def gradient(self, x) -> np.ndarray:
        return self.jet1(np.asarray(x, dtype=float))[1]

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Const(Expr):
    val: float

    def value(self, x):
        return self.val

    def jet1(self, x):
        return self.val, np.zeros(len(x))

    def jet2(self, x):
        d = len(x)
        return self.val, np.zeros(d), np.zeros((d, d))


@dataclass(frozen=True)
class Var(Expr):
    name: str
    index: int

    def value(self, x):
        return float(x[self.index])

    def jet1(self, x):
        g = np.zeros(len(x))
        g[self.index] = 1.0
        return float(x[self.index]), g

    def jet2(self, x):
        d = len(x)
        g = np.zeros(d)
        g[self.index] = 1.0
        return float(x[self.index]), g, np.zeros((d, d))


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def value(self, x):
        return -self.arg.value(x)

    def jet1(self, x):
        v, g = self.arg.jet1(x)
        return -v, -g

    def jet2(self, x):
        v, g, h = self.arg.jet2(x)
        return -v, -g, -h


@dataclass(frozen=True)
class Add(Expr):
    lhs: Expr
    rhs: Expr

    def value(self, x):
        return self.lhs.value(x) + self.rhs.value(x)

    def jet1(self, x):
        va, ga = self.lhs.jet1(x)
        vb, gb = self.rhs.jet1(x)
        return va + vb, ga + gb

    def jet2(self, x):
        va, ga, ha = self.lhs.jet2(x)
        vb, gb, hb = self.rhs.jet2(x)
        return va + vb, ga + gb, ha + hb


@dataclass(frozen=True)
class Sub(Expr):
    lhs: Expr
    rhs: Expr

    def value(self, x):
        return self.lhs.value(x) - self.rhs.value(x)

    def jet1(self, x):
        va, ga = self.lhs.jet1(x)
        vb, gb = self.rhs.jet1(x)
        return va - vb, ga - gb

    def jet2(self, x):
        va, ga, ha = self.lhs.jet2(x)
        vb, gb, hb = self.rhs.jet2(x)
        return va - vb, ga - gb, ha - hb


@dataclass(frozen=True)
class Mul(Expr):
    lhs: Expr
    rhs: Expr

    def value(self, x):
        return self.lhs.value(x) * self.rhs.value(x)

    def jet1(self, x):
        va, ga = self.lhs.jet1(x)
        vb, gb = self.rhs.jet1(x)
        return va * vb, va * gb + vb * ga

    def jet2(self, x):
        va, ga, ha = self.lhs.jet2(x)
        vb, gb, hb = self.rhs.jet2(x)
        cross = np.outer(ga, gb)
        return va * vb, va * gb + vb * ga, va * hb + vb * ha + cross + cross.T


@dataclass(frozen=True)
class Div(Expr):
    lhs: Expr
    rhs: Expr

    def value(self, x):
        den = self.rhs.value(x)
        if den == 0.0:
            raise EvalDomainError("division by zero", self)
        return self.lhs.value(x) / den

    def jet1(self, x):
        va, ga = self.lhs.jet1(x)
        vb, gb = self.rhs.jet1(x)
        if vb == 0.0:
            raise EvalDomainError("division by zero", self)
        v = va / vb
        return v, (ga - v * gb) / vb

    def jet2(self, x):
        va, ga, ha = self.lhs.jet2(x)
        vb, gb, hb = self.rhs.jet2(x)
        if vb == 0.0:
            raise EvalDomainError("division by zero", self)
        v = va / vb
        g = (ga - v * gb) / vb
        cross = np.outer(g, gb)
        h = (ha - v * hb - cross - cross.T) / vb
        return v, g, h


@dataclass(frozen=True)
class Pow(Expr):
    """Power with a constant real exponent (folded at parse time)."""

    base: Expr
    exponent: float

    def _check(self, u: float):
        c = self.exponent
        if c != round(c) and u < 0.0:
            raise EvalDomainError("negative base with non-integer exponent", self)
        if c < 0.0 and u == 0.0:
            raise EvalDomainError("zero base with negative exponent", self)

    def value(self, x):
        u = self.base.value(x)
        self._check(u)
        return math.pow(u, self.exponent)

    def _derivs(self, u: float) -> tuple[float, float, float]:
        c = self.exponent
        self._check(u)
        v = math.pow(u, c)
        if c == 0.0:
            return v, 0.0, 0.0
        if u == 0.0 and c < 2.0 and c != 1.0:
            raise EvalDomainError("derivative singular at zero base", self)
        d1 = c if c == 1.0 else c * math.pow(u, c - 1.0)
        if c == 1.0:
            return v, d1, 0.0
        d2 = c * (c - 1.0) * math.pow(u, c - 2.0)
        return v, d1, d2

    def jet1(self, x):
        u, gu = self.base.jet1(x)
        v, d1, _ = self._derivs(u)
        return v, d1 * gu

    def jet2(self, x):
        u, gu, hu = self.base.jet2(x)
        v, d1, d2 = self._derivs(u)
        return v, d1 * gu, d1 * hu + d2 * np.outer(gu, gu)


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    def _derivs(self, u: float) -> tuple[float, float, float]:
        fn = self.fn
        if fn == "sin":
            s, c = math.sin(u), math.cos(u)
            return s, c, -s
        if fn == "cos":
            s, c = math.sin(u), math.cos(u)
            return c, -s, -c
        if fn == "exp":
            e = math.exp(u)
            return e, e, e
        if fn == "log":
            if u <= 0.0:
                raise EvalDomainError("log of non-positive value", self)
            return math.log(u), 1.0 / u, -1.0 / (u * u)
        if fn == "sqrt":
            if u < 0.0:
                raise EvalDomainError("sqrt of negative value", self)
            if u == 0.0:
                raise EvalDomainError("sqrt derivative singular at zero", self)
            s = math.sqrt(u)
            return s, 0.5 / s, -0.25 / (s * u)
        raise ExprError(f"unknown function '{fn}'")

    def value(self, x):
        u = self.arg.value(x)
        if self.fn == "sqrt":
            if u < 0.0:
                raise EvalDomainError("sqrt of negative value", self)
            return math.sqrt(u)
        if self.fn == "log" and u <= 0.0:
            raise EvalDomainError("log of non-positive value", self)
        return getattr(math, self.fn)(u)

    def jet1(self, x):
        u, gu = self.arg.jet1(x)
        v, d1, _ = self._derivs(u)
        return v, d1 * gu

    def jet2(self, x):
        u, gu, hu = self.arg.jet2(x)
        v, d1, d2 = self._derivs(u)
        return v, d1 * gu, d1 * hu + d2 * np.outer(gu, gu)


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            stripped = src[pos:].lstrip()
            if not stripped:
                break
            at = len(src) - len(stripped)
            raise ParseError(f"unexpected character '{src[at]}'", at)
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, names):
        self.src = src
        self.tokens = _tokenize(src)
        self.pos = 0
        self.names = {n: i for i, n in enumerate(names)}

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, text, offset = self.peek()
        if kind != "op" or text != op:
            raise ParseError(f"expected '{op}'", offset)
        self.advance()

    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                rhs = self.parse_term()
                node = Add(node, rhs) if text == "+" else Sub(node, rhs)
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                rhs = self.parse_factor()
                node = Mul(node, rhs) if text == "*" else Div(node, rhs)
            else:
                return node

    def parse_factor(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.parse_factor())
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        kind, text, offset = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            expo_offset = self.peek()[2]
            expo = self.parse_factor()
            if not is_constant(expo):
                raise ParseError("exponent must be constant", expo_offset)
            return Pow(base, expo.value(np.zeros(0)))
        return base

    def parse_atom(self) -> Expr:
        kind, text, offset = self.advance()
        if kind == "num":
            return Const(float(text))
        if kind == "name":
            if text == "pi":
                return Const(math.pi)
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(text, arg)
            if text in self.names:
                nxt_kind, nxt_text, nxt_offset = self.peek()
                if nxt_kind == "op" and nxt_text == "(":
                    raise ParseError(f"'{text}' is not a function", nxt_offset)
                return Var(text, self.names[text])
            raise UnknownIdentifierError(text, offset)
        if kind == "op" and text == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError("expected a value", offset)


def parse(src: str, chart) -> Expr:
    """Parse ``src`` against a chart (anything with ``.names``) or a name list.

    Raises ParseError (with byte offset) on malformed input and
    UnknownIdentifierError for identifiers not declared in the chart.
    """
    if not src or not src.strip():
        raise ParseError("empty expression", 0)
    names = getattr(chart, "names", chart)
    parser = _Parser(src, names)
    node = parser.parse_expr()
    kind, text, offset = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input '{text}'", offset)
    return node


# --- pretty printing -------------------------------------------------------

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _format_const(v: float) -> str:
    if v == math.pi:
        return "pi"
    if v < 0:
        # negative literals re-parse as Neg(Const); print through Neg instead
        return f"-{_format_const(-v)}"
    return repr(v)


def to_source(e: Expr, parent_prec: int = 0) -> str:
    """Render an AST back to parseable source.

    ``parse(to_source(parse(s)))`` reproduces the AST of ``parse(s)`` up to
    negative literals, which print as unary minus.
    """
    if isinstance(e, Const):
        if e.val < 0:
            return to_source(Neg(Const(-e.val)), parent_prec)
        text = _format_const(e.val)
        return text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    prec = _PREC[type(e)]
    if isinstance(e, Neg):
        text = f"-{to_source(e.arg, prec)}"
    elif isinstance(e, Pow):
        # a leading '-' re-parses as a constant-folded unary minus, so the
        # exponent never needs parentheses
        text = f"{to_source(e.base, prec + 1)}^{_format_const(e.exponent)}"
    else:
        op = {Add: " + ", Sub: " - ", Mul: "*", Div: "/"}[type(e)]
        # left-associative: right child needs parens at equal precedence
        text = (
            f"{to_source(e.lhs, prec)}{op}{to_source(e.rhs, prec + 1)}"
        )
    if prec < parent_prec:
        return f"({text})"
    return text


# --- structural helpers ----------------------------------------------------

def is_constant(e: Expr) -> bool:
    """True when no Var node occurs in the AST."""
    if isinstance(e, Var):
        return False
    if isinstance(e, (Const,)):
        return True
    if isinstance(e, (Neg, Call)):
        return is_constant(e.arg)
    if isinstance(e, Pow):
        return is_constant(e.base)
    return is_constant(e.lhs) and is_constant(e.rhs)


def _is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.val == 0.0


def _is_one(e: Expr) -> bool:
    return isinstance(e, Const) and e.val == 1.0


def add(a: Expr, b: Expr) -> Expr:
    """Sum with zero pruning (used when assembling derivatives)."""
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_zero(b):
        return a
    if _is_zero(a):
        return Neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_zero(a) or _is_zero(b):
        return Const(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Mul(a, b)


def differentiate(e: Expr, index: int) -> Expr:
    """Exact symbolic partial derivative with respect to coordinate ``index``.

    Only trivial zero/one factors are pruned; no other simplification is
    attempted.
    """
    if isinstance(e, Const):
        return Const(0.0)
    if isinstance(e, Var):
        return Const(1.0 if e.index == index else 0.0)
    if isinstance(e, Neg):
        d = differentiate(e.arg, index)
        return Const(0.0) if _is_zero(d) else Neg(d)
    if isinstance(e, Add):
        return add(differentiate(e.lhs, index), differentiate(e.rhs, index))
    if isinstance(e, Sub):
        return sub(differentiate(e.lhs, index), differentiate(e.rhs, index))
    if isinstance(e, Mul):
        return add(
            mul(differentiate(e.lhs, index), e.rhs),
            mul(e.lhs, differentiate(e.rhs, index)),
        )
    if isinstance(e, Div):
        num = sub(
            mul(differentiate(e.lhs, index), e.rhs),
            mul(e.lhs, differentiate(e.rhs, index)),
        )
        if _is_zero(num):
            return Const(0.0)
        return Div(num, Mul(e.rhs, e.rhs))
    if isinstance(e, Pow):
        du = differentiate(e.base, index)
        if _is_zero(du) or e.exponent == 0.0:
            return Const(0.0)
        if e.exponent == 1.0:
            return du
        scaled = mul(Const(e.exponent), Pow(e.base, e.exponent - 1.0))
        return mul(scaled, du)
    if isinstance(e, Call):
        du = differentiate(e.arg, index)
        if _is_zero(du):
            return Const(0.0)
        if e.fn == "sin":
            outer = Call("cos", e.arg)
        elif e.fn == "cos":
            outer = Neg(Call("sin", e.arg))
        elif e.fn == "exp":
            outer = Call("exp", e.arg)
        elif e.fn == "log":
            return Div(du, e.arg)
        elif e.fn == "sqrt":
            return Div(du, Mul(Const(2.0), Call("sqrt", e.arg)))
        else:
            raise ExprError(f"unknown function '{e.fn}'")
        return mul(outer, du)
    raise ExprError(f"cannot differentiate node {type(e).__name__}")
