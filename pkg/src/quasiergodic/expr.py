"""Rate expressions in the index variable ``i``.

Grammar::

    EXPR   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' integer)?
    base   := 'i' | number | '(' EXPR ')'

Parsing constant-folds, so ``(1+2)*i`` becomes ``3*i``.  The canonical
printer emits just enough parentheses that ``parse(to_source(e)) == e``.
Expressions evaluate elementwise over numpy arrays.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import RateSyntaxError

__all__ = ["Num", "Var", "BinOp", "Pow", "Expr", "parse_rate", "to_source",
           "num", "var", "binop", "power", "shift_index"]


@dataclass(frozen=True)
class Num:
    value: float

    def evaluate(self, i):
        return np.full(np.shape(i), self.value, dtype=float) if np.ndim(i) else float(self.value)


@dataclass(frozen=True)
class Var:
    def evaluate(self, i):
        return np.asarray(i, dtype=float) if np.ndim(i) else float(i)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"

    def evaluate(self, i):
        a = self.left.evaluate(i)
        b = self.right.evaluate(i)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return _apply(self.op, a, b)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int

    def evaluate(self, i):
        with np.errstate(over="ignore"):
            return self.base.evaluate(i) ** self.exponent


Expr = Union[Num, Var, BinOp, Pow]

_OPS = {"+": 1, "-": 1, "*": 2, "/": 2}


def _apply(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.ndim(b) == 0 and b == 0:
            return math.copysign(math.inf, a) if a else math.nan
        return a / b
    raise ValueError(op)


# Smart constructors fold constants; every parsed tree is built through them.

def num(value) -> Num:
    return Num(float(value))


def var() -> Var:
    return Var()


def binop(op, left, right) -> Expr:
    if isinstance(left, Num) and isinstance(right, Num):
        value = _apply(op, left.value, right.value)
        if not math.isfinite(value):
            raise ZeroDivisionError("constant subexpression is not finite")
        return Num(float(value))
    return BinOp(op, left, right)


def power(base, exponent: int) -> Expr:
    if isinstance(base, Num):
        try:
            value = base.value ** exponent
        except OverflowError:
            value = math.inf
        if not math.isfinite(value):
            raise ZeroDivisionError("constant subexpression is not finite")
        return Num(float(value))
    return Pow(base, int(exponent))


_TOKEN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<var>i)|(?P<op>[-+*/^()]))")


def _tokenize(source):
    pos = 0
    tokens = []
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            if source[pos:].strip() == "":
                break
            start = pos + len(source[pos:]) - len(source[pos:].lstrip())
            _raise("unexpected character", source, start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(source.rstrip())))
    return tokens


def _raise(message, source, offset):
    line = source.count("\n", 0, offset) + 1
    column = offset - (source.rfind("\n", 0, offset) + 1) + 1
    raise RateSyntaxError(message, source, line, column)


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        _raise(message if tok[0] != "end" else "unexpected end of input",
               self.source, tok[2])

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()
            node = self._fold(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()
            node = self._fold(op, node, self.factor())
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^":
            caret = self.take()
            tok = self.peek()
            if tok[0] != "number" or not tok[1].isdigit():
                self.fail("expected integer exponent")
            self.take()
            try:
                node = power(node, int(tok[1]))
            except ZeroDivisionError as exc:
                self.fail(str(exc), caret)
        return node

    def base(self):
        tok = self.peek()
        if tok[0] == "number":
            self.take()
            return num(float(tok[1]))
        if tok[0] == "var":
            self.take()
            return var()
        if tok[1] == "(":
            self.take()
            node = self.expr()
            if self.peek()[1] != ")":
                self.fail("expected ')'")
            self.take()
            return node
        self.fail("expected 'i', a number or '('")

    def _fold(self, op_tok, left, right):
        try:
            return binop(op_tok[1], left, right)
        except ZeroDivisionError as exc:
            self.fail(str(exc), op_tok)


def parse_rate(source: str) -> Expr:
    """Parse a rate expression.

    Raises
    ------
    RateSyntaxError
        With 1-based ``line`` and ``column`` of the offending token.
    """
    parser = _Parser(source)
    node = parser.expr()
    if parser.peek()[0] != "end":
        parser.fail("unexpected token")
    return node


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        text = str(int(value))
    else:
        text = repr(value)
    if value < 0:
        return f"(0-{text[1:]})"
    return text


def to_source(node: Expr) -> str:
    """Canonical source text for an expression tree."""
    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, Var):
        return "i"
    if isinstance(node, Pow):
        inner = to_source(node.base)
        if isinstance(node.base, (BinOp, Pow)):
            inner = f"({inner})"
        return f"{inner}^{node.exponent}"
    prec = _OPS[node.op]
    left = to_source(node.left)
    right = to_source(node.right)
    if isinstance(node.left, BinOp) and _OPS[node.left.op] < prec:
        left = f"({left})"
    if isinstance(node.right, BinOp) and _OPS[node.right.op] <= prec:
        right = f"({right})"
    return f"{left}{node.op}{right}"


def _linear_offset(node):
    """``c`` if ``node`` is ``i + c`` or ``i - c`` (or ``i`` itself), else ``None``."""
    if isinstance(node, Var):
        return 0.0
    if isinstance(node, BinOp) and isinstance(node.left, Var) and isinstance(node.right, Num):
        if node.op == "+":
            return node.right.value
        if node.op == "-":
            return -node.right.value
    return None


def _var_plus(c):
    if c == 0:
        return Var()
    return BinOp("+", Var(), Num(c)) if c > 0 else BinOp("-", Var(), Num(-c))


def shift_index(node: Expr, k: int) -> Expr:
    """Substitute ``i -> i + k``; ``i + c`` becomes ``i + (c + k)``."""
    if k == 0:
        return node
    c = _linear_offset(node)
    if c is not None:
        return _var_plus(c + k)
    if isinstance(node, Num):
        return node
    if isinstance(node, Pow):
        return Pow(shift_index(node.base, k), node.exponent)
    return BinOp(node.op, shift_index(node.left, k), shift_index(node.right, k))
