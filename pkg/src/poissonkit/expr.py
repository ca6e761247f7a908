"""Immutable symbolic expression trees over named real variables.

An :class:`Expr` is a finite tree of constants, variables, unary functions
(neg, sin, cos, tan, exp, log, sqrt, atan) and binary operations
(add, sub, mul, div, pow).  The module provides parsing from text,
exact symbolic differentiation, IEEE double evaluation at a point,
best-effort simplification, and rendering back to parseable text.

Simplification is value-preserving only; there is no symbolic
zero-testing.  Identities are checked numerically by the callers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

from .errors import EvalDomainError, ExprSyntaxError, UndeclaredVariableError

UNARY_OPS = ("neg", "sin", "cos", "tan", "exp", "log", "sqrt", "atan")
BINARY_OPS = ("add", "sub", "mul", "div", "pow")
FUNCTION_NAMES = ("sin", "cos", "tan", "exp", "log", "sqrt", "atan")


@dataclass(frozen=True)
class Expr:
    """One node of an expression tree.

    ``kind`` is ``"const"``, ``"var"``, a unary op or a binary op; leaves
    use ``value``/``name`` and interior nodes use ``args``.  Trees are
    immutable and hashable, hence safe to share across threads.
    """

    kind: str
    value: float = 0.0
    name: str = ""
    args: tuple["Expr", ...] = ()

    def __repr__(self):
        return f"Expr({render(self)!r})"

    # Arithmetic sugar so catalog code can write x1 * x2 + 1 directly.
    def __add__(self, other):
        return Expr("add", args=(self, _coerce(other)))

    def __radd__(self, other):
        return Expr("add", args=(_coerce(other), self))

    def __sub__(self, other):
        return Expr("sub", args=(self, _coerce(other)))

    def __rsub__(self, other):
        return Expr("sub", args=(_coerce(other), self))

    def __mul__(self, other):
        return Expr("mul", args=(self, _coerce(other)))

    def __rmul__(self, other):
        return Expr("mul", args=(_coerce(other), self))

    def __truediv__(self, other):
        return Expr("div", args=(self, _coerce(other)))

    def __rtruediv__(self, other):
        return Expr("div", args=(_coerce(other), self))

    def __pow__(self, other):
        return Expr("pow", args=(self, _coerce(other)))

    def __neg__(self):
        return Expr("neg", args=(self,))

    def variables(self) -> frozenset[str]:
        """Names of all variables appearing in the tree."""
        if self.kind == "var":
            return frozenset((self.name,))
        if self.kind == "const":
            return frozenset()
        out: frozenset[str] = frozenset()
        for a in self.args:
            out |= a.variables()
        return out

    def is_const(self, v=None) -> bool:
        if self.kind != "const":
            return False
        return v is None or self.value == v


def const(v) -> Expr:
    return Expr("const", value=float(v))


def var(name: str) -> Expr:
    return Expr("var", name=name)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def _unary(op: str, a) -> Expr:
    return Expr(op, args=(_coerce(a),))


def sin(a):
    return _unary("sin", a)


def cos(a):
    return _unary("cos", a)


def tan(a):
    return _unary("tan", a)


def exp(a):
    return _unary("exp", a)


def log(a):
    return _unary("log", a)


def sqrt(a):
    return _unary("sqrt", a)


def atan(a):
    return _unary("atan", a)


# ---------------------------------------------------------------------------
# Points


@dataclass(frozen=True)
class Point:
    """An evaluation site: one finite real value per declared variable."""

    coords: tuple[tuple[str, float], ...]
    _table: Mapping[str, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table = {}
        for name, v in self.coords:
            if name in table:
                raise ValueError(f"variable {name!r} listed twice in point")
            v = float(v)
            if not math.isfinite(v):
                raise ValueError(f"non-finite value for {name!r}: {v}")
            table[name] = v
        object.__setattr__(self, "_table", table)

    @classmethod
    def of(cls, mapping: Mapping[str, float] | Iterable[tuple[str, float]]) -> "Point":
        if isinstance(mapping, Mapping):
            return cls(tuple((k, float(v)) for k, v in mapping.items()))
        return cls(tuple((k, float(v)) for k, v in mapping))

    def __getitem__(self, name: str) -> float:
        return self._table[name]

    def __contains__(self, name: str) -> bool:
        return name in self._table

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.coords)

    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.coords)

    def as_dict(self) -> dict[str, float]:
        return dict(self._table)


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
  | (?P<ws>\s+)
    """,
    re.VERBOSE,
)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(src)))
    return out


class _Parser:
    def __init__(self, src: str, variables: Sequence[str]):
        self.src = src
        self.vars = frozenset(variables)
        self.toks = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect_op(self, op: str):
        kind, text, pos = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"unexpected {text or 'end of input'!r}", pos, (repr(op),))
        return self.take()

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"trailing input {text!r}", pos, ("end of input",))
        return e

    def expr(self) -> Expr:
        left = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                right = self.term()
                left = Expr("add" if text == "+" else "sub", args=(left, right))
            else:
                return left

    def term(self) -> Expr:
        left = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                right = self.factor()
                left = Expr("mul" if text == "*" else "div", args=(left, right))
            else:
                return left

    def factor(self) -> Expr:
        # '^' is right-associative and binds tighter than unary minus, so a
        # leading '-' wraps the whole power that follows it.
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            inner = self.factor()
            if inner.kind == "const":
                return const(-inner.value)
            return Expr("neg", args=(inner,))
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            return Expr("pow", args=(base, self.factor()))
        return base

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return const(float(text))
        if kind == "ident":
            k2, t2, _ = self.peek()
            if k2 == "op" and t2 == "(":
                if text not in FUNCTION_NAMES:
                    raise ExprSyntaxError(
                        f"unknown function {text!r}", pos,
                        tuple(FUNCTION_NAMES),
                    )
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Expr(text, args=(arg,))
            if text not in self.vars:
                raise UndeclaredVariableError(text, pos)
            return var(text)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(
            f"unexpected {text or 'end of input'!r}", pos,
            ("number", "identifier", "'('", "'-'"),
        )


def parse(src: str, variables: Sequence[str]) -> Expr:
    """Parse expression text over the declared variables.

    Grammar: ``expr := term (('+'|'-') term)*``,
    ``term := factor (('*'|'/') factor)*``,
    ``factor := '-' factor | atom ('^' factor)?``,
    ``atom := number | ident | ident '(' expr ')' | '(' expr ')'``.
    """
    return _Parser(src, variables).parse()


# ---------------------------------------------------------------------------
# Rendering

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _prec(e: Expr) -> int:
    if e.kind == "const" and e.value < 0:
        return _PREC["neg"]  # renders with a leading '-'
    return _PREC.get(e.kind, 5)


def _render_num(v: float) -> str:
    if math.isfinite(v) and v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _wrap(e: Expr, minprec: int) -> str:
    s = render(e)
    if _prec(e) < minprec:
        return f"({s})"
    return s


def render(e: Expr) -> str:
    """Serialize to text that reparses to a structurally equal tree."""
    if e.kind == "const":
        return _render_num(e.value)
    if e.kind == "var":
        return e.name
    if e.kind == "neg":
        return "-" + _wrap(e.args[0], 3)
    if e.kind == "pow":
        return f"{_wrap(e.args[0], 5)}^{_wrap(e.args[1], 3)}"
    if e.kind in _INFIX:
        a, b = e.args
        lhs = _wrap(a, _PREC[e.kind])
        rhs = _wrap(b, _PREC[e.kind] + 1)
        return f"{lhs} {_INFIX[e.kind]} {rhs}"
    return f"{e.kind}({render(e.args[0])})"


# ---------------------------------------------------------------------------
# Evaluation

_UNARY_EVAL: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "atan": math.atan,
}


def _eval_pow(base: float, ex: float, node: Expr) -> float:
    if ex == int(ex) and abs(ex) < 1e16:
        if base == 0.0 and ex < 0:
            raise EvalDomainError("0 raised to a negative power", node)
        try:
            return float(base ** int(ex))
        except OverflowError:
            raise EvalDomainError("overflow in pow", node) from None
    if base < 0.0:
        raise EvalDomainError("negative base with non-integer exponent", node)
    if base == 0.0 and ex < 0:
        raise EvalDomainError("0 raised to a negative power", node)
    try:
        return math.pow(base, ex)
    except (ValueError, OverflowError):
        raise EvalDomainError("invalid pow", node) from None


def evaluate(e: Expr, point: Point | Mapping[str, float]) -> float:
    """IEEE double-precision evaluation of ``e`` at ``point``.

    Raises :class:`EvalDomainError` carrying the offending subexpression
    for log of nonpositive, division by zero, sqrt of negative,
    0^negative, non-integer powers of negative bases, and overflow.
    """
    k = e.kind
    if k == "const":
        return e.value
    if k == "var":
        try:
            return point[e.name]
        except KeyError:
            raise UndeclaredVariableError(e.name) from None
    if k in BINARY_OPS:
        a = evaluate(e.args[0], point)
        b = evaluate(e.args[1], point)
        if k == "add":
            return a + b
        if k == "sub":
            return a - b
        if k == "mul":
            return a * b
        if k == "div":
            if b == 0.0:
                raise EvalDomainError("division by zero", e)
            return a / b
        return _eval_pow(a, b, e)
    a = evaluate(e.args[0], point)
    if k == "neg":
        return -a
    if k == "exp":
        try:
            return math.exp(a)
        except OverflowError:
            raise EvalDomainError("overflow in exp", e) from None
    if k == "log":
        if a <= 0.0:
            raise EvalDomainError("log of nonpositive value", e)
        return math.log(a)
    if k == "sqrt":
        if a < 0.0:
            raise EvalDomainError("sqrt of negative value", e)
        return math.sqrt(a)
    return _UNARY_EVAL[k](a)


# Compiled evaluators: positional-argument lambdas generated from the tree,
# used by the sampling and integration hot paths.  Semantics match
# evaluate() except that errors surface as bare ValueError /
# ZeroDivisionError / OverflowError from the math module.


def _codegen(e: Expr, index: Mapping[str, int]) -> str:
    k = e.kind
    if k == "const":
        return repr(e.value)
    if k == "var":
        return f"_v[{index[e.name]}]"
    if k in _INFIX:
        a = _codegen(e.args[0], index)
        b = _codegen(e.args[1], index)
        return f"({a} {_INFIX[k]} {b})"
    if k == "pow":
        base = _codegen(e.args[0], index)
        ex = e.args[1]
        if ex.kind == "const" and ex.value == int(ex.value):
            return f"({base})**({int(ex.value)})"
        return f"_pow({base}, {_codegen(ex, index)})"
    if k == "neg":
        return f"(-{_codegen(e.args[0], index)})"
    return f"_{k}({_codegen(e.args[0], index)})"


def _checked_pow(a: float, b: float) -> float:
    if a < 0.0:
        raise ValueError("negative base with non-integer exponent")
    return math.pow(a, b)


@lru_cache(maxsize=None)
def compile_evaluator(e: Expr, variables: tuple[str, ...]) -> Callable[[Sequence[float]], float]:
    """Compile to ``f(values) -> float`` with ``values`` ordered like
    ``variables``.  Used in inner loops; raises bare arithmetic errors."""
    missing = e.variables() - set(variables)
    if missing:
        raise UndeclaredVariableError(sorted(missing)[0])
    index = {name: i for i, name in enumerate(variables)}
    src = f"lambda _v: ({_codegen(e, index)})"
    namespace = {
        "_sin": math.sin,
        "_cos": math.cos,
        "_tan": math.tan,
        "_exp": math.exp,
        "_log": math.log,
        "_sqrt": math.sqrt,
        "_atan": math.atan,
        "_pow": _checked_pow,
    }
    return eval(src, namespace)  # noqa: S307 - source generated from our own AST


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions throughout the tree."""
    if e.kind == "var":
        return mapping.get(e.name, e)
    if e.kind == "const":
        return e
    return Expr(e.kind, value=e.value, name=e.name,
                args=tuple(substitute(a, mapping) for a in e.args))


# ---------------------------------------------------------------------------
# Differentiation

_ZERO = const(0.0)
_ONE = const(1.0)


def differentiate(e: Expr, name: str) -> Expr:
    """Exact symbolic partial derivative with respect to ``name``."""
    k = e.kind
    if k == "const":
        return _ZERO
    if k == "var":
        return _ONE if e.name == name else _ZERO
    if k == "add":
        return _add(differentiate(e.args[0], name), differentiate(e.args[1], name))
    if k == "sub":
        return _sub(differentiate(e.args[0], name), differentiate(e.args[1], name))
    if k == "mul":
        u, v = e.args
        return _add(_mul(differentiate(u, name), v), _mul(u, differentiate(v, name)))
    if k == "div":
        u, v = e.args
        num = _sub(_mul(differentiate(u, name), v), _mul(u, differentiate(v, name)))
        return _div(num, _pow(v, const(2.0)))
    if k == "pow":
        u, v = e.args
        du = differentiate(u, name)
        if v.kind == "const":
            return _mul(_mul(v, _pow(u, const(v.value - 1.0))), du)
        dv = differentiate(v, name)
        # d(u^v) = u^v * (v' log u + v u'/u); evaluation requires u > 0,
        # which matches the non-integer-exponent domain contract.
        return _mul(e, _add(_mul(dv, _un("log", u)), _div(_mul(v, du), u)))
    u = e.args[0]
    du = differentiate(u, name)
    if k == "neg":
        return _neg(du)
    if k == "sin":
        return _mul(_un("cos", u), du)
    if k == "cos":
        return _neg(_mul(_un("sin", u), du))
    if k == "tan":
        return _div(du, _pow(_un("cos", u), const(2.0)))
    if k == "exp":
        return _mul(e, du)
    if k == "log":
        return _div(du, u)
    if k == "sqrt":
        return _div(du, _mul(const(2.0), e))
    if k == "atan":
        return _div(du, _add(_ONE, _pow(u, const(2.0))))
    raise ValueError(f"cannot differentiate node kind {k!r}")


# ---------------------------------------------------------------------------
# Simplification
#
# Smart constructors assume already-simplified operands and return a tree
# whose root cannot be reduced further by these same rules, which makes
# simplify() idempotent by construction.


def _fold_binary(kind: str, a: float, b: float):
    probe = Expr(kind, args=(const(a), const(b)))
    try:
        return const(evaluate(probe, {}))
    except EvalDomainError:
        return None


def _add(a: Expr, b: Expr) -> Expr:
    if a.is_const() and b.is_const():
        folded = _fold_binary("add", a.value, b.value)
        if folded is not None:
            return folded
    if a.is_const(0.0):
        return b
    if b.is_const(0.0):
        return a
    return Expr("add", args=(a, b))


def _sub(a: Expr, b: Expr) -> Expr:
    if a.is_const() and b.is_const():
        folded = _fold_binary("sub", a.value, b.value)
        if folded is not None:
            return folded
    if b.is_const(0.0):
        return a
    if a.is_const(0.0):
        return _neg(b)
    return Expr("sub", args=(a, b))


def _mul(a: Expr, b: Expr) -> Expr:
    if a.is_const() and b.is_const():
        folded = _fold_binary("mul", a.value, b.value)
        if folded is not None:
            return folded
    if a.is_const(0.0) or b.is_const(0.0):
        return const(0.0)
    if a.is_const(1.0):
        return b
    if b.is_const(1.0):
        return a
    return Expr("mul", args=(a, b))


def _div(a: Expr, b: Expr) -> Expr:
    if a.is_const() and b.is_const():
        folded = _fold_binary("div", a.value, b.value)
        if folded is not None:
            return folded
    if b.is_const(1.0):
        return a
    return Expr("div", args=(a, b))


def _pow(a: Expr, b: Expr) -> Expr:
    if a.is_const() and b.is_const():
        folded = _fold_binary("pow", a.value, b.value)
        if folded is not None:
            return folded
    if b.is_const(1.0):
        return a
    if b.is_const(0.0):
        return const(1.0)
    return Expr("pow", args=(a, b))


def _neg(a: Expr) -> Expr:
    if a.is_const():
        return const(-a.value)
    if a.kind == "neg":
        return a.args[0]
    return Expr("neg", args=(a,))


def _un(kind: str, a: Expr) -> Expr:
    if kind == "neg":
        return _neg(a)
    if a.is_const():
        probe = Expr(kind, args=(a,))
        try:
            return const(evaluate(probe, {}))
        except EvalDomainError:
            return probe
    return Expr(kind, args=(a,))


_SMART_BINARY = {"add": _add, "sub": _sub, "mul": _mul, "div": _div, "pow": _pow}


def simplify(e: Expr) -> Expr:
    """Best-effort, value-preserving simplification.

    Folds constant subtrees, strips additive zeros and multiplicative
    units, collapses multiplication by zero and double negation.  Never
    changes the value at any point where the input evaluates.
    """
    if e.kind in ("const", "var"):
        return e
    args = tuple(simplify(a) for a in e.args)
    if e.kind in _SMART_BINARY:
        return _SMART_BINARY[e.kind](*args)
    return _un(e.kind, args[0])
