"""Small arithmetic expression language for coefficient functions.

Grammar (highest precedence first):

    power   :=  primary ['^' unary]          # right-associative exponent
    unary   :=  '-' unary | power
    term    :=  unary (('*' | '/') unary)*
    expr    :=  term (('+' | '-') term)*
    primary :=  NUMBER | VARIABLE | FUNC '(' expr {',' expr} ')' | '(' expr ')'

Variables are t, x, y, w and z1, z2, ... (contraction components); functions
are sin, cos, exp, tanh, abs (one argument) and min, max (two).  Errors
carry the character offset into the source string.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import (
    ArityError,
    ExpressionDomainError,
    ExpressionSyntaxError,
    UnknownIdentifier,
)

FUNCTIONS = {
    "sin": (math.sin, 1),
    "cos": (math.cos, 1),
    "exp": (math.exp, 1),
    "tanh": (math.tanh, 1),
    "abs": (abs, 1),
    "min": (min, 2),
    "max": (max, 2),
}

_VARIABLE = re.compile(r"^(t|x|y|w|z[1-9][0-9]*)$")
_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")


@dataclass(frozen=True)
class Num:
    value: float
    position: int


@dataclass(frozen=True)
class Var:
    name: str
    position: int


@dataclass(frozen=True)
class Unary:
    operand: object
    position: int


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object
    position: int


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    position: int


class Expression:
    """Parsed expression; evaluate with a variable environment."""

    def __init__(self, root, source, variables):
        self.root = root
        self.source = source
        self.variables = frozenset(variables)

    def evaluate(self, env):
        """Evaluate with ``env`` mapping variable names to floats.

        Finite inputs give a finite float or an ExpressionDomainError; a
        missing variable raises UnknownIdentifier.
        """
        return _eval(self.root, env)

    def __repr__(self):
        return f"Expression({self.source!r})"


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise UnknownIdentifier(node.name, node.position) from None
    if isinstance(node, Unary):
        return -_eval(node.operand, env)
    if isinstance(node, Binary):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        return _apply(node.op, a, b, node.position)
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        fn, _ = FUNCTIONS[node.name]
        try:
            val = fn(*args)
        except (ValueError, OverflowError, ZeroDivisionError):
            raise ExpressionDomainError(
                f"{node.name} left the real domain", node.position
            ) from None
        return _finite(val, node.position)
    raise TypeError(f"unknown node {node!r}")  # pragma: no cover


def _apply(op, a, b, pos):
    try:
        if op == "+":
            val = a + b
        elif op == "-":
            val = a - b
        elif op == "*":
            val = a * b
        elif op == "/":
            if b == 0.0:
                raise ExpressionDomainError("division by zero", pos)
            val = a / b
        else:
            val = math.pow(a, b)
    except OverflowError:
        raise ExpressionDomainError("overflow", pos) from None
    except ValueError:
        raise ExpressionDomainError("invalid power", pos) from None
    return _finite(val, pos)


def _finite(val, pos):
    val = float(val)
    if not math.isfinite(val):
        raise ExpressionDomainError("non-finite result", pos)
    return val


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    position: int


def _tokenize(source):
    tokens = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "+-*/^(),":
            tokens.append(_Token(ch, ch, i))
            i += 1
            continue
        m = _NUMBER.match(source, i)
        if m and (ch.isdigit() or ch == "."):
            tokens.append(_Token("number", m.group(0), i))
            i = m.end()
            continue
        m = _IDENT.match(source, i)
        if m:
            tokens.append(_Token("ident", m.group(0), i))
            i = m.end()
            continue
        raise ExpressionSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(_Token("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, source):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0
        self.variables = set()

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, hint):
        tok = self.peek()
        if tok.kind != kind:
            raise ExpressionSyntaxError(f"expected {hint}", tok.position)
        return self.advance()

    def parse(self):
        root = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            raise ExpressionSyntaxError(f"unexpected {tok.text!r}", tok.position)
        return root

    def expr(self):
        node = self.term()
        while self.peek().kind in ("+", "-"):
            tok = self.advance()
            node = Binary(tok.kind, node, self.term(), tok.position)
        return node

    def term(self):
        node = self.unary()
        while self.peek().kind in ("*", "/"):
            tok = self.advance()
            node = Binary(tok.kind, node, self.unary(), tok.position)
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "-":
            self.advance()
            return Unary(self.unary(), tok.position)
        return self.power()

    def power(self):
        node = self.primary()
        tok = self.peek()
        if tok.kind == "^":
            self.advance()
            # right-associative; the exponent may carry a unary minus
            node = Binary("^", node, self.unary(), tok.position)
        return node

    def primary(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.text), tok.position)
        if tok.kind == "(":
            self.advance()
            node = self.expr()
            self.expect(")", "')'")
            return node
        if tok.kind == "ident":
            self.advance()
            if self.peek().kind == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifier(tok.text, tok.position)
                self.advance()
                args = [self.expr()]
                while self.peek().kind == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")", "')'")
                _, arity = FUNCTIONS[tok.text]
                if len(args) != arity:
                    raise ArityError(tok.text, arity, len(args), tok.position)
                return Call(tok.text, tuple(args), tok.position)
            if not _VARIABLE.match(tok.text):
                raise UnknownIdentifier(tok.text, tok.position)
            self.variables.add(tok.text)
            return Var(tok.text, tok.position)
        raise ExpressionSyntaxError("expected an operand", tok.position)


def parse_expression(source: str) -> Expression:
    """Parse an expression string; errors carry exact character offsets."""
    parser = _Parser(source)
    root = parser.parse()
    return Expression(root, source, parser.variables)
