# src/dtorus/expr.py
"""
Scalar expressions of the phase variables.

Purpose:
- Let a system (a, P, f) be written in a plain-text JSON file instead of code.
- Parse once into an immutable AST, evaluate many times (ODE right-hand sides,
  whole quadrature grids at once via numpy broadcasting).

Grammar (precedence from loosest to tightest):
    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' exponent)?          right associative
    exponent := '-' exponent | power
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Unary minus binds looser than '^', so "-2^2" is -4. There is no implicit
multiplication: "2phi" is a syntax error.

Names: phi1..phim (and "phi" for phi1 when m = 1), the constants pi and e, and
the unary functions below. th/ch/sh are accepted as tanh/cosh/sinh.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

Number = Union[float, np.ndarray]


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int, expected: FrozenSet[str]):
        self.offset = offset
        self.expected = expected
        exp = ", ".join(sorted(expected)) if expected else "nothing"
        super().__init__(f"{message} at byte {offset} (expected one of: {exp})")


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier '{name}' at byte {offset}")


class ArityError(ExpressionError):
    def __init__(self, name: str, got: int, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"function '{name}' takes 1 argument, got {got} (at byte {offset})")


class DimensionError(ExpressionError):
    pass


FUNCTIONS: Dict[str, Callable[[Number], Number]] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

# Abbreviations used in the literature on these systems.
FUNCTION_ALIASES = {"th": "tanh", "ch": "cosh", "sh": "sinh"}

CONSTANTS = {"pi": math.pi, "e": math.e}

_PHI_RE = re.compile(r"^phi([1-9][0-9]*)?$")


# ---------- AST ----------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based
    alias: bool = False  # written as "phi"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Neg, Call, BinOp]


# ---------- Tokenizer ----------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int  # byte offset into the UTF-8 source


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


def _tokenize(src: str) -> List[_Token]:
    tokens: List[_Token] = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            # skip whitespace so the offset points at the offending character
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionSyntaxError(
                f"unexpected character {src[bad]!r}",
                _byte_offset(src, bad),
                frozenset({"number", "name", "operator", "("}),
            )
        kind = m.lastgroup or "op"
        text = m.group(kind)
        tokens.append(_Token(kind, text, _byte_offset(src, m.start(kind))))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(src, len(src))))
    return tokens


# ---------- Parser ----------

_OPERAND_START = frozenset({"number", "name", "(", "-"})


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def fail(self, expected: FrozenSet[str]) -> ExpressionSyntaxError:
        t = self.tok
        what = "end of input" if t.kind == "end" else f"token {t.text!r}"
        return ExpressionSyntaxError(f"unexpected {what}", t.offset, expected)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.fail(frozenset({"+", "-", "*", "/", "^", "end of input"}))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.exponent())
        return base

    def exponent(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.exponent())
        return self.power()

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            if not (self.tok.kind == "op" and self.tok.text == ")"):
                raise self.fail(frozenset({")", "+", "-", "*", "/", "^"}))
            self.advance()
            return node
        if t.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            return self.name(t)
        raise self.fail(_OPERAND_START)

    def call(self, name_tok: _Token) -> Node:
        name = FUNCTION_ALIASES.get(name_tok.text, name_tok.text)
        if name not in FUNCTIONS:
            raise UnknownIdentifierError(name_tok.text, name_tok.offset)
        self.advance()  # "("
        if self.tok.kind == "op" and self.tok.text == ")":
            raise ArityError(name_tok.text, 0, name_tok.offset)
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        if not (self.tok.kind == "op" and self.tok.text == ")"):
            raise self.fail(frozenset({")", ",", "+", "-", "*", "/", "^"}))
        self.advance()
        if len(args) != 1:
            raise ArityError(name_tok.text, len(args), name_tok.offset)
        return Call(name, args[0])

    def name(self, t: _Token) -> Node:
        m = _PHI_RE.match(t.text)
        if m:
            if m.group(1) is None:
                return Var(1, alias=True)
            return Var(int(m.group(1)))
        if t.text in CONSTANTS:
            return Const(CONSTANTS[t.text])
        if t.text in FUNCTIONS or t.text in FUNCTION_ALIASES:
            raise ArityError(t.text, 0, t.offset)
        raise UnknownIdentifierError(t.text, t.offset)


# ---------- Evaluation / printing ----------

def _walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.operand)
    elif isinstance(node, Call):
        yield from _walk(node.arg)
    elif isinstance(node, BinOp):
        yield from _walk(node.left)
        yield from _walk(node.right)


def _evaluate(node: Node, phi: Sequence[Number]) -> Number:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return phi[node.index - 1]
    if isinstance(node, Neg):
        return -_evaluate(node.operand, phi)
    if isinstance(node, Call):
        return FUNCTIONS[node.name](_evaluate(node.arg, phi))
    left = _evaluate(node.left, phi)
    right = _evaluate(node.right, phi)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return np.divide(left, right)
    return np.power(left, right)


def _format_const(value: float) -> str:
    if math.isinf(value):
        return "1e999" if value > 0 else "(-1e999)"
    return repr(float(value))


def _unparse(node: Node) -> str:
    if isinstance(node, Const):
        return _format_const(node.value)
    if isinstance(node, Var):
        return "phi" if node.alias else f"phi{node.index}"
    if isinstance(node, Neg):
        return f"(-{_unparse(node.operand)})"
    if isinstance(node, Call):
        return f"{node.name}({_unparse(node.arg)})"
    return f"({_unparse(node.left)} {node.op} {_unparse(node.right)})"


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression. Safe to evaluate from several threads."""

    source: str
    root: Node

    @property
    def max_index(self) -> int:
        """Highest phase index referenced (0 for constants)."""
        return max((n.index for n in _walk(self.root) if isinstance(n, Var)), default=0)

    @property
    def uses_alias(self) -> bool:
        return any(isinstance(n, Var) and n.alias for n in _walk(self.root))

    @property
    def is_constant(self) -> bool:
        return self.max_index == 0

    def evaluate(self, phi: Sequence[Number]) -> Number:
        """
        IEEE-754 double evaluation at phi. Components of phi may be numpy arrays
        (broadcast together). Non-finite results are returned as they are.
        """
        if len(phi) < self.max_index:
            raise DimensionError(
                f"expression '{self.source}' uses phi{self.max_index} "
                f"but phi has length {len(phi)}"
            )
        args = [np.asarray(p, dtype=float) for p in phi]
        with np.errstate(all="ignore"):
            value = _evaluate(self.root, args)
        if np.ndim(value) == 0:
            return float(value)
        return np.asarray(value, dtype=float)

    def __str__(self) -> str:
        return unparse(self)


def parse(src: str) -> Expression:
    if not isinstance(src, str) or not src.strip():
        raise ExpressionSyntaxError("empty expression", 0, _OPERAND_START)
    return Expression(source=src, root=_Parser(src).parse())


def evaluate(e: Expression, phi: Sequence[Number]) -> Number:
    return e.evaluate(phi)


def unparse(e: Union[Expression, Node]) -> str:
    """Fully parenthesised source text; parse(unparse(e)) evaluates identically."""
    root = e.root if isinstance(e, Expression) else e
    return _unparse(root)


def constant_value(e: Expression) -> Optional[float]:
    """Value of a phase-independent expression, None otherwise."""
    if not e.is_constant:
        return None
    return float(e.evaluate(()))


def parse_matrix(rows: Sequence[Sequence[str]]) -> Tuple[Tuple[Expression, ...], ...]:
    return tuple(tuple(parse(cell) for cell in row) for row in rows)
