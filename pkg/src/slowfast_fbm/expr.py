"""Arithmetic expressions over the variables x and y.

Grammar (lowest to highest precedence)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := primary ("^" unary)?          # right associative
    primary := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

so ``-2^2 == -4`` and ``2^3^2 == 512``.  Evaluation is vectorised over
numpy arrays and raises ExpressionError on division by zero, roots of
negative numbers and non-finite results.
"""

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ExpressionError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}
VARIABLES = ("x", "y")

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^()]))"
)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Unary, Binary, Call]


def _byte_offset(source, i):
    return len(source[:i].encode("utf-8"))


def tokenize(source):
    """List of (kind, text, byte_offset); kind is num, name, op or end."""
    out = []
    i = 0
    n = len(source)
    while i < n:
        if source[i].isspace():
            i += 1
            continue
        m = _TOKEN.match(source, i)
        if m is None or m.end() == i:
            raise ExpressionError(f"unexpected character {source[i]!r}", _byte_offset(source, i))
        kind = m.lastgroup
        start = m.start(kind)
        out.append((kind, m.group(kind), _byte_offset(source, start)))
        i = m.end()
    out.append(("end", "", _byte_offset(source, n)))
    return out


class _Parser:
    def __init__(self, source):
        self.tokens = tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        kind, val, off = self.take()
        if val != text:
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionError(f"expected {text!r}, found {found}", off)

    def parse(self):
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {val!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            return Unary(val, self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def primary(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in VARIABLES:
                return Var(val)
            raise ExpressionError(f"unknown identifier {val!r}", off)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"expected a number, name or '(', found {found}", off)


def _format(node):
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"({node.op}{_format(node.operand)})"
    if isinstance(node, Binary):
        return f"({_format(node.left)} {node.op} {_format(node.right)})"
    return f"{node.func}({_format(node.arg)})"


def _variables(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, Unary):
        return _variables(node.operand)
    if isinstance(node, Call):
        return _variables(node.arg)
    return _variables(node.left) | _variables(node.right)


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in env:
            raise ExpressionError(f"no value bound for variable {node.name!r}")
        return env[node.name]
    if isinstance(node, Unary):
        v = _eval(node.operand, env)
        return -v if node.op == "-" else v
    if isinstance(node, Call):
        v = _eval(node.arg, env)
        if node.func == "sqrt" and np.any(np.asarray(v) < 0):
            raise ExpressionError("sqrt of a negative number")
        return FUNCTIONS[node.func](v)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise ExpressionError("division by zero")
        return a / b
    base = np.asarray(a, dtype=float)
    ex = np.asarray(b, dtype=float)
    if np.any((base < 0) & (ex != np.round(ex))):
        raise ExpressionError("non-integer power of a negative number")
    if np.any((base == 0) & (ex < 0)):
        raise ExpressionError("division by zero")
    return np.power(base, ex)


@dataclass(frozen=True)
class CoefficientExpr:
    source: str
    tree: Node

    @property
    def variables(self):
        return frozenset(_variables(self.tree))

    def format(self):
        return _format(self.tree)

    def __call__(self, **env):
        with np.errstate(all="ignore"):
            out = _eval(self.tree, {k: np.asarray(v, dtype=float) for k, v in env.items()})
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise ExpressionError(f"non-finite value from {self.source!r}")
        return out

    def scalar(self):
        if self.variables:
            raise ExpressionError(f"expected a constant, got variables {sorted(self.variables)}")
        return float(self())


def parse_expression(source):
    if not isinstance(source, str):
        raise ExpressionError("expression must be a string")
    return CoefficientExpr(source, _Parser(source).parse())


def format_expression(expr):
    return expr.format() if isinstance(expr, CoefficientExpr) else _format(expr)


def evaluate(source, **env):
    return parse_expression(source)(**env)


def scalar(source):
    return parse_expression(source).scalar()


def is_constant(expr):
    return not expr.variables
