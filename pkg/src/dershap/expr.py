"""Scalar expressions over named inputs with forward-mode gradients.

Grammar (EBNF)::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | "+" unary | power ;
    power   = atom [ ("^" | "**") unary ] ;
    atom    = number | name | name "(" args ")" | "(" expr ")" ;
    args    = expr { "," expr } ;
    number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
            | "." digits [ exponent ] ;
    name    = letter { letter | digit | "_" } ;

Power binds tighter than unary minus (``-x^2 == -(x^2)``) and is
right-associative; everything else is left-associative. Functions take one
argument: sin, cos, exp, log, sqrt, abs. The constant ``pi`` is predefined
unless shadowed by a variable of the same name.

Evaluation works on a single point or on a batch of points at once; the
gradient is propagated exactly with dual numbers whose partials are a
length-``d`` vector (or an ``(n, d)`` array for batches).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Dual",
    "Expression",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse_expression",
    "eval_with_gradient",
    "render",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi}


class ExprSyntaxError(ValueError):
    """Raised for malformed expressions. ``offset`` is 1-based."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExprDomainError(ArithmeticError):
    """Evaluation left the function's domain (log of 0, division by 0...)."""

    def __init__(self, message: str, node: "Node", row: int | None = None):
        where = f" (row {row})" if row is not None else ""
        super().__init__(f"{message} in '{render(node)}'{where}")
        self.message = message
        self.node = node
        self.row = row


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Neg, BinOp, Call]


def render(node: Node) -> str:
    """Render a node back to parseable text (fully parenthesised)."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{render(node.operand)})"
    if isinstance(node, BinOp):
        return f"({render(node.left)} {node.op} {render(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({render(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\*\*|[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int  # 1-based


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tok_text = m.group()
            if tok_text == "**":
                tok_text = "^"
            toks.append(_Tok(kind, tok_text, pos + 1))
        pos = m.end()
    toks.append(_Tok("end", "", len(text) + 1))
    return toks


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.toks = _tokenize(text)
        self.i = 0
        self.var_index = {name: k for k, name in enumerate(variables)}

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind not in ("op",):
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.tok.offset)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
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
        if self.tok.kind == "op" and self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            # right operand goes back through unary so 2^-x and a^b^c work
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            if tok.text in self.var_index:
                return Var(self.var_index[tok.text], tok.text)
            if tok.text in CONSTANTS:
                return Const(CONSTANTS[tok.text])
            if tok.text in FUNCTIONS:
                raise ExprSyntaxError(f"function {tok.text!r} needs an argument", tok.offset)
            raise ExprSyntaxError(f"unknown identifier {tok.text!r}", tok.offset)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {found}", tok.offset)

    def call(self, name_tok: _Tok) -> Node:
        if name_tok.text not in FUNCTIONS:
            raise ExprSyntaxError(f"unknown function {name_tok.text!r}", name_tok.offset)
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != 1:
            raise ExprSyntaxError(
                f"{name_tok.text}() takes 1 argument, got {len(args)}", name_tok.offset
            )
        return Call(name_tok.text, args[0])


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def parse_expression(text: str, variables: Sequence[str]) -> "Expression":
    """Parse ``text`` into an :class:`Expression` over ``variables``."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 1)
    variables = tuple(variables)
    if len(set(variables)) != len(variables):
        raise ValueError(f"duplicate variable names in {variables}")
    for name in variables:
        if not _NAME_RE.match(name) or name in FUNCTIONS:
            raise ValueError(f"invalid variable name {name!r}")
    root = _Parser(text, variables).parse()
    return Expression(root, variables, text)


# --------------------------------------------------------------------------
# Dual numbers


class Dual:
    """Value plus first-order partials.

    ``val`` is a scalar or an ``(n,)`` array; ``grad`` has one more trailing
    axis of length ``d``. ``grad=None`` stands for an all-zero gradient
    (constants) and is materialised lazily.
    """

    __slots__ = ("val", "grad")

    def __init__(self, val, grad=None):
        self.val = val
        self.grad = grad

    @classmethod
    def variable(cls, val, index: int, dim: int) -> "Dual":
        val = np.asarray(val, dtype=float)
        grad = np.zeros(val.shape + (dim,))
        grad[..., index] = 1.0
        return cls(val, grad)

    def __repr__(self) -> str:
        return f"Dual({self.val!r}, {self.grad!r})"

    # helpers -------------------------------------------------------------
    @staticmethod
    def _scale(grad, factor):
        if grad is None:
            return None
        return grad * np.asarray(factor)[..., None]

    @staticmethod
    def _add(g1, g2):
        if g1 is None:
            return g2
        if g2 is None:
            return g1
        return g1 + g2

    def __add__(self, other: "Dual") -> "Dual":
        return Dual(self.val + other.val, self._add(self.grad, other.grad))

    def __sub__(self, other: "Dual") -> "Dual":
        return Dual(self.val - other.val, self._add(self.grad, self._scale(other.grad, -1.0)))

    def __neg__(self) -> "Dual":
        return Dual(-self.val, self._scale(self.grad, -1.0))

    def __mul__(self, other: "Dual") -> "Dual":
        grad = self._add(self._scale(self.grad, other.val), self._scale(other.grad, self.val))
        return Dual(self.val * other.val, grad)

    def __truediv__(self, other: "Dual") -> "Dual":
        q = self.val / other.val
        # (u/v)' = (u' - q v') / v
        grad = self._add(self.grad, self._scale(other.grad, -q))
        return Dual(q, self._scale(grad, 1.0 / other.val))

    def chain(self, val, deriv) -> "Dual":
        """Apply a unary function with value ``val`` and derivative ``deriv``."""
        return Dual(val, self._scale(self.grad, deriv))


def _int_power(base: Dual, n: int) -> Dual:
    # square-and-multiply on duals; exact for integer exponents
    if n == 0:
        return Dual(np.ones_like(np.asarray(base.val, dtype=float)), None)
    if n < 0:
        return Dual(1.0) / _int_power(base, -n)
    result = None
    acc = base
    while n:
        if n & 1:
            result = acc if result is None else result * acc
        n >>= 1
        if n:
            acc = acc * acc
    return result


# --------------------------------------------------------------------------
# Evaluation


class Expression:
    """Parsed expression: immutable AST plus its ordered variable names."""

    def __init__(self, root: Node, variables: Sequence[str], source: str | None = None):
        self.root = root
        self.variables = tuple(variables)
        self.source = source if source is not None else render(root)
        _check_indices(root, len(self.variables))

    @property
    def dim(self) -> int:
        return len(self.variables)

    def __repr__(self) -> str:
        return f"Expression({self.source!r}, variables={self.variables})"

    def render(self) -> str:
        return render(self.root)

    def _prepare(self, points) -> tuple[np.ndarray, bool]:
        x = np.asarray(points, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got shape {np.shape(points)}")
        return x, single

    def value(self, points) -> np.ndarray | float:
        x, single = self._prepare(points)
        with np.errstate(all="ignore"):
            val = _eval_value(self.root, x)
        val = np.broadcast_to(val, (x.shape[0],)).astype(float, copy=True)
        return float(val[0]) if single else val

    def value_and_grad(self, points):
        """Return value(s) and exact gradient(s) at one point or a batch."""
        x, single = self._prepare(points)
        with np.errstate(all="ignore"):
            out = _eval_dual(self.root, x, self.dim)
        n = x.shape[0]
        val = np.broadcast_to(out.val, (n,)).astype(float, copy=True)
        if out.grad is None:
            grad = np.zeros((n, self.dim))
        else:
            grad = np.broadcast_to(out.grad, (n, self.dim)).astype(float, copy=True)
        if single:
            return float(val[0]), grad[0]
        return val, grad

    __call__ = value


def eval_with_gradient(expr: Expression, point) -> tuple[float, np.ndarray]:
    """Value and exact gradient of ``expr`` at a single point."""
    point = np.asarray(point, dtype=float)
    if point.shape != (expr.dim,):
        raise ValueError(f"point must have length {expr.dim}, got shape {point.shape}")
    return expr.value_and_grad(point)


def _check_indices(node: Node, dim: int) -> None:
    if isinstance(node, Var):
        if not 0 <= node.index < dim:
            raise ValueError(f"variable index {node.index} out of range for dimension {dim}")
    elif isinstance(node, Neg):
        _check_indices(node.operand, dim)
    elif isinstance(node, BinOp):
        _check_indices(node.left, dim)
        _check_indices(node.right, dim)
    elif isinstance(node, Call):
        _check_indices(node.arg, dim)


def _first_bad(mask) -> int | None:
    idx = np.flatnonzero(np.broadcast_to(mask, np.shape(mask) or (1,)))
    return int(idx[0]) if idx.size else None


def _require(ok, message: str, node: Node) -> None:
    ok = np.asarray(ok)
    if not ok.all():
        raise ExprDomainError(message, node, _first_bad(~ok))


def _integer_exponent(node: Node) -> int | None:
    if isinstance(node, Const) and float(node.value).is_integer() and abs(node.value) <= 1024:
        return int(node.value)
    if isinstance(node, Neg):
        inner = _integer_exponent(node.operand)
        return None if inner is None else -inner
    return None


def _eval_value(node: Node, x: np.ndarray):
    # value-only fast path; shares domain rules with _eval_dual
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return x[:, node.index]
    if isinstance(node, Neg):
        return -_eval_value(node.operand, x)
    if isinstance(node, BinOp):
        if node.op == "^":
            n = _integer_exponent(node.right)
            if n is not None:
                base = _eval_value(node.left, x)
                if n < 0:
                    _require(np.asarray(base) != 0, "zero base with negative exponent", node)
                return _int_power(Dual(base), n).val
        a = _eval_value(node.left, x)
        b = _eval_value(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            _require(np.asarray(b) != 0, "division by zero", node)
            return a / b
        _require(np.asarray(a) > 0, "non-integer power of non-positive base", node)
        return np.power(a, b)
    if isinstance(node, Call):
        a = _eval_value(node.arg, x)
        return _apply(node, a, need_deriv=False)[0]
    raise TypeError(f"not an expression node: {node!r}")


def _apply(node: Call, a, need_deriv: bool):
    f = node.func
    if f == "sin":
        return np.sin(a), (np.cos(a) if need_deriv else None)
    if f == "cos":
        return np.cos(a), (-np.sin(a) if need_deriv else None)
    if f == "exp":
        e = np.exp(a)
        return e, e
    if f == "log":
        _require(np.asarray(a) > 0, "log of non-positive value", node)
        return np.log(a), (1.0 / a if need_deriv else None)
    if f == "sqrt":
        _require(np.asarray(a) > 0, "sqrt of non-positive value", node)
        s = np.sqrt(a)
        return s, (0.5 / s if need_deriv else None)
    if f == "abs":
        # abs'(0) := 0
        return np.abs(a), (np.sign(a) if need_deriv else None)
    raise TypeError(f"unknown function {f!r}")


def _eval_dual(node: Node, x: np.ndarray, dim: int) -> Dual:
    if isinstance(node, Const):
        return Dual(node.value, None)
    if isinstance(node, Var):
        return Dual.variable(x[:, node.index], node.index, dim)
    if isinstance(node, Neg):
        return -_eval_dual(node.operand, x, dim)
    if isinstance(node, BinOp):
        if node.op == "^":
            n = _integer_exponent(node.right)
            if n is not None:
                base = _eval_dual(node.left, x, dim)
                if n < 0:
                    _require(np.asarray(base.val) != 0, "zero base with negative exponent", node)
                return _int_power(base, n)
        a = _eval_dual(node.left, x, dim)
        b = _eval_dual(node.right, x, dim)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            _require(np.asarray(b.val) != 0, "division by zero", node)
            return a / b
        _require(np.asarray(a.val) > 0, "non-integer power of non-positive base", node)
        val = np.power(a.val, b.val)
        # d(a^b) = b a^(b-1) da + a^b log(a) db
        grad = Dual._add(
            Dual._scale(a.grad, b.val * np.power(a.val, b.val - 1.0)),
            Dual._scale(b.grad, val * np.log(a.val)),
        )
        return Dual(val, grad)
    if isinstance(node, Call):
        a = _eval_dual(node.arg, x, dim)
        val, deriv = _apply(node, a.val, need_deriv=True)
        return a.chain(val, deriv)
    raise TypeError(f"not an expression node: {node!r}")
