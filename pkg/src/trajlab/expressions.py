"""Scalar expression language for coordinate/time fields.

Metric entries, force components and potentials are given as textual
expressions over chart coordinates and the time name ``t``.  The module
provides parsing, IEEE-double evaluation, exact symbolic first derivatives
and compilation to plain Python callables for hot loops.

Grammar (EBNF, whitespace insensitive)::

    expr    = term    { ("+" | "-") term } ;
    term    = factor  { ("*" | "/") factor } ;
    factor  = "-" factor | power ;
    power   = atom [ "^" factor ] ;            (* right associative *)
    atom    = NUMBER | NAME | NAME "(" expr ")" | "(" expr ")" ;

``^`` binds tightest (so ``-x^2`` is ``-(x^2)``), then unary minus, then
``*``/``/``, then ``+``/``-``.  NAME is ``[A-Za-z_][A-Za-z0-9_]*``; the
recognised functions are sin, cos, sinh, cosh, tanh, exp, log, sqrt, abs
and sign (sign only appears in printed derivatives but re-parses).

Power semantics: an exponent that is syntactically a constant with an
integral value is an integer power, defined for any base.  Any other
exponent requires a positive base (``0^e`` is 0 for e > 0 and 1 for e = 0,
the continuous extension used by the blended scenario fields).

Expressions are immutable after construction and safe to share across
threads; parsing is reentrant.  Error offsets are 0-based character
offsets into the source (identical to byte offsets for ASCII input).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

__all__ = [
    "Expression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ExpressionError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "EvaluationError",
    "DomainError",
    "MissingBindingError",
    "parse",
    "differentiate",
    "substitute",
    "compile_expression",
    "FUNCTIONS",
]


class ExpressionError(Exception):
    """Base class for all expression-language errors."""


class ExprSyntaxError(ExpressionError):
    """Malformed source text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    """Identifier outside the allowed name set."""

    def __init__(self, name: str, allowed: Iterable[str], position: int):
        allowed = sorted(allowed)
        super().__init__(
            f"unknown identifier {name!r}; allowed: {', '.join(allowed)}", position
        )
        self.name = name
        self.allowed = allowed


class EvaluationError(ExpressionError):
    """Base class for evaluation-time failures."""


class DomainError(EvaluationError):
    """Operation evaluated outside its real domain."""

    def __init__(self, kind: str, subexpression: "Expression | None" = None):
        detail = f": {subexpression}" if subexpression is not None else ""
        super().__init__(f"{kind}{detail}")
        self.kind = kind
        self.subexpression = subexpression


class MissingBindingError(EvaluationError):
    def __init__(self, name: str):
        super().__init__(f"no binding for variable {name!r}")
        self.name = name


# Unary function table: name -> (callable, domain guard message or None).
_UNARY_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
    "sign": lambda x: 0.0 if x == 0.0 else math.copysign(1.0, x),
}

FUNCTIONS = frozenset(_UNARY_FUNCS) | {"neg"}

_BINARY_OPS = ("+", "-", "*", "/", "^")


@dataclass(frozen=True)
class Expression:
    """Immutable expression tree node (use the concrete subclasses)."""

    def evaluate(self, bindings: Mapping[str, float]) -> float:
        """Evaluate at a full binding of the free variables.

        Raises MissingBindingError for unbound variables and DomainError
        for log/sqrt/power/division domain violations or non-finite
        results.
        """
        value = self._eval(bindings)
        if not math.isfinite(value):
            raise DomainError("non-finite result", self)
        return value

    def _eval(self, bindings: Mapping[str, float]) -> float:
        raise NotImplementedError

    def free_variables(self) -> frozenset[str]:
        raise NotImplementedError

    def diff(self, name: str) -> "Expression":
        raise NotImplementedError

    def __str__(self) -> str:
        return _render(self, 0)


@dataclass(frozen=True)
class Const(Expression):
    value: float

    def _eval(self, bindings):
        return self.value

    def free_variables(self):
        return frozenset()

    def diff(self, name):
        return _ZERO


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def _eval(self, bindings):
        try:
            return float(bindings[self.name])
        except KeyError:
            raise MissingBindingError(self.name) from None

    def free_variables(self):
        return frozenset((self.name,))

    def diff(self, name):
        return _ONE if name == self.name else _ZERO


@dataclass(frozen=True)
class Unary(Expression):
    op: str
    arg: Expression

    def _eval(self, bindings):
        x = self.arg._eval(bindings)
        op = self.op
        if op == "neg":
            return -x
        if op == "log" and x <= 0.0:
            raise DomainError("log of non-positive value", self)
        if op == "sqrt" and x < 0.0:
            raise DomainError("sqrt of negative value", self)
        try:
            return _UNARY_FUNCS[op](x)
        except OverflowError:
            raise DomainError("overflow", self) from None

    def free_variables(self):
        return self.arg.free_variables()

    def diff(self, name):
        u = self.arg
        du = u.diff(name)
        op = self.op
        if op == "neg":
            return neg(du)
        if op == "sin":
            return mul(Unary("cos", u), du)
        if op == "cos":
            return neg(mul(Unary("sin", u), du))
        if op == "sinh":
            return mul(Unary("cosh", u), du)
        if op == "cosh":
            return mul(Unary("sinh", u), du)
        if op == "tanh":
            # 1 - tanh(u)^2
            return mul(sub(_ONE, pow_(Unary("tanh", u), Const(2.0))), du)
        if op == "exp":
            return mul(self, du)
        if op == "log":
            return div(du, u)
        if op == "sqrt":
            return div(du, mul(Const(2.0), self))
        if op == "abs":
            # sign(u) * u'; undefined at u = 0, sign(0) evaluates to 0.
            return mul(Unary("sign", u), du)
        if op == "sign":
            return _ZERO
        raise ValueError(f"unknown unary op {op!r}")


@dataclass(frozen=True)
class Binary(Expression):
    op: str
    left: Expression
    right: Expression

    def _eval(self, bindings):
        a = self.left._eval(bindings)
        b = self.right._eval(bindings)
        op = self.op
        try:
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if b == 0.0:
                    raise DomainError("division by zero", self)
                return a / b
            return _eval_pow(a, b, self)
        except OverflowError:
            raise DomainError("overflow", self) from None

    def free_variables(self):
        return self.left.free_variables() | self.right.free_variables()

    def diff(self, name):
        u, v = self.left, self.right
        du, dv = u.diff(name), v.diff(name)
        op = self.op
        if op == "+":
            return add(du, dv)
        if op == "-":
            return sub(du, dv)
        if op == "*":
            return add(mul(du, v), mul(u, dv))
        if op == "/":
            return sub(div(du, v), div(mul(u, dv), mul(v, v)))
        # power
        n = _integral_exponent(v)
        if n is not None:
            if n == 0:
                return _ZERO
            return mul(mul(Const(float(n)), pow_(u, Const(float(n - 1)))), du)
        # general u^v, valid for u > 0: u^v * (v' log u + v u'/u)
        return mul(
            self, add(mul(dv, Unary("log", u)), div(mul(v, du), u))
        )


_ZERO = Const(0.0)
_ONE = Const(1.0)


def _integral_exponent(e: Expression) -> int | None:
    """Exponent value when *e* is syntactically an integral constant."""
    if isinstance(e, Const) and float(e.value).is_integer() and abs(e.value) < 2**31:
        return int(e.value)
    return None


def _eval_pow(a: float, b: float, node: Expression | None) -> float:
    if node is not None and isinstance(node, Binary):
        n = _integral_exponent(node.right)
        if n is not None:
            if a == 0.0 and n < 0:
                raise DomainError("zero raised to negative power", node)
            return float(a**n)
    if a > 0.0:
        return math.pow(a, b)
    if a == 0.0:
        if b > 0.0:
            return 0.0
        if b == 0.0:
            return 1.0
        raise DomainError("zero raised to negative power", node)
    raise DomainError("negative base with non-integer exponent", node)


# ---------------------------------------------------------------------------
# Smart constructors.  Used when building derivatives and derived fields so
# the trees stay small; they only drop literal-constant identities.

def _const_fold(op: str, left: Expression, right: Expression) -> Expression | None:
    if isinstance(left, Const) and isinstance(right, Const):
        try:
            value = Binary(op, left, right)._eval({})
        except EvaluationError:
            return None
        if math.isfinite(value):
            return Const(value)
    return None


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return _const_fold("+", a, b) or Binary("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const) and b.value == 0.0:
        return a
    if isinstance(a, Const) and a.value == 0.0:
        return neg(b)
    return _const_fold("-", a, b) or Binary("-", a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const):
        if a.value == 0.0:
            return _ZERO
        if a.value == 1.0:
            return b
    if isinstance(b, Const):
        if b.value == 0.0:
            return _ZERO
        if b.value == 1.0:
            return a
    return _const_fold("*", a, b) or Binary("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and a.value == 0.0:
        return _ZERO
    if isinstance(b, Const) and b.value == 1.0:
        return a
    return _const_fold("/", a, b) or Binary("/", a, b)


def pow_(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const):
        if b.value == 1.0:
            return a
        if b.value == 0.0:
            return _ONE
    return _const_fold("^", a, b) or Binary("^", a, b)


# ---------------------------------------------------------------------------
# Parsing.

_TOKEN_SINGLE = set("+-*/^()")


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "−":  # typographic minus, normalised for convenience
            ch = "-"
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_SINGLE:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                seen_dot = seen_dot or source[j] == "."
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", i) from None
            tokens.append(("num", text, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, allowed_names, params):
        self.tokens = tokens
        self.pos = 0
        self.allowed = allowed_names
        self.params = params or {}

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, position = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected {op!r}", position)
        return self.advance()

    def parse(self) -> Expression:
        e = self.expr()
        kind, value, position = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected trailing input {value!r}", position)
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                e = self._fold(value, e, rhs)
            else:
                return e

    def term(self) -> Expression:
        e = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.factor()
                e = self._fold(value, e, rhs)
            else:
                return e

    def factor(self) -> Expression:
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            inner = self.factor()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Unary("neg", inner)
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            exponent = self.factor()
            return self._fold("^", base, exponent)
        return base

    def atom(self) -> Expression:
        kind, value, position = self.advance()
        if kind == "num":
            return Const(float(value))
        if kind == "name":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                if value not in _UNARY_FUNCS:
                    raise UnknownIdentifierError(value, _UNARY_FUNCS, position)
                self.advance()
                arg = self.expr()
                self.expect_op(")")
                if isinstance(arg, Const):
                    folded = self._try_fold_unary(value, arg)
                    if folded is not None:
                        return folded
                return Unary(value, arg)
            if value in self.params:
                return Const(float(self.params[value]))
            if self.allowed is not None and value not in self.allowed:
                raise UnknownIdentifierError(value, self.allowed, position)
            return Var(value)
        if kind == "op" and value == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", position)
        raise ExprSyntaxError(f"unexpected token {value!r}", position)

    @staticmethod
    def _fold(op: str, left: Expression, right: Expression) -> Expression:
        folded = _const_fold(op, left, right)
        return folded if folded is not None else Binary(op, left, right)

    @staticmethod
    def _try_fold_unary(op: str, arg: Const) -> Expression | None:
        try:
            value = Unary(op, arg)._eval({})
        except EvaluationError:
            return None
        return Const(value) if math.isfinite(value) else None


def parse(
    source: str,
    allowed_names: Iterable[str] | None = None,
    params: Mapping[str, float] | None = None,
) -> Expression:
    """Parse *source* into an Expression.

    allowed_names, when given, restricts variable identifiers (unknown
    ones raise UnknownIdentifierError).  params maps parameter names to
    numbers substituted as constants while parsing, so constant
    subexpressions such as ``1+2*eps`` fold to literal exponents.
    """
    allowed = None if allowed_names is None else frozenset(allowed_names)
    return _Parser(_tokenize(source), allowed, params).parse()


def differentiate(e: Expression, name: str) -> Expression:
    """Exact partial derivative of *e* with respect to *name*.

    ``abs`` differentiates to ``sign`` (undefined at zero; sign(0)
    evaluates to 0), so derivatives of expressions containing abs are
    valid away from the kink only.
    """
    return e.diff(name)


def substitute(e: Expression, mapping: Mapping[str, "Expression | float"]) -> Expression:
    """Replace variables by expressions (or numbers), rebuilding the tree."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        repl = mapping.get(e.name)
        if repl is None:
            return e
        return Const(float(repl)) if isinstance(repl, (int, float)) else repl
    if isinstance(e, Unary):
        arg = substitute(e.arg, mapping)
        return e if arg is e.arg else Unary(e.op, arg)
    if isinstance(e, Binary):
        left = substitute(e.left, mapping)
        right = substitute(e.right, mapping)
        if left is e.left and right is e.right:
            return e
        return Binary(e.op, left, right)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Pretty printing with minimal parentheses.

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _render(e: Expression, parent_prec: int) -> str:
    if isinstance(e, Const):
        return repr(float(e.value)) if e.value >= 0 else f"({float(e.value)!r})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = _render(e.arg, _PREC["neg"])
            text = f"-{inner}"
            return f"({text})" if parent_prec > _PREC["neg"] else text
        return f"{e.op}({_render(e.arg, 0)})"
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        if e.op == "^":
            # right associative: left child needs parens at equal precedence
            left = _render(e.left, prec + 1)
            right = _render(e.right, prec)
        else:
            left = _render(e.left, prec)
            # left associative; parenthesise equal-precedence rhs so the
            # reparsed tree (and its rounding) is identical
            right = _render(e.right, prec + 1)
        text = f"{left} {e.op} {right}" if e.op in "+-" else f"{left}{e.op}{right}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Compilation to plain Python callables (fast path for integrator loops).

def _cg_log(x):
    if x <= 0.0:
        raise DomainError("log of non-positive value")
    return math.log(x)


def _cg_sqrt(x):
    if x < 0.0:
        raise DomainError("sqrt of negative value")
    return math.sqrt(x)


def _cg_div(a, b):
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def _cg_pow(a, b):
    return _eval_pow(a, b, None)


def _cg_sign(x):
    return 0.0 if x == 0.0 else math.copysign(1.0, x)


_CG_NAMESPACE = {
    "math": math,
    "_log": _cg_log,
    "_sqrt": _cg_sqrt,
    "_div": _cg_div,
    "_pow": _cg_pow,
    "_sign": _cg_sign,
}

_CG_UNARY = {
    "sin": "math.sin({})",
    "cos": "math.cos({})",
    "sinh": "math.sinh({})",
    "cosh": "math.cosh({})",
    "tanh": "math.tanh({})",
    "exp": "math.exp({})",
    "log": "_log({})",
    "sqrt": "_sqrt({})",
    "abs": "abs({})",
    "sign": "_sign({})",
    "neg": "(-{})",
}


def _codegen(e: Expression, argnames: Mapping[str, str]) -> str:
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        try:
            return argnames[e.name]
        except KeyError:
            raise MissingBindingError(e.name) from None
    if isinstance(e, Unary):
        return _CG_UNARY[e.op].format(_codegen(e.arg, argnames))
    if isinstance(e, Binary):
        a = _codegen(e.left, argnames)
        b = _codegen(e.right, argnames)
        if e.op in "+-*":
            return f"({a}{e.op}{b})"
        if e.op == "/":
            return f"_div({a},{b})"
        n = _integral_exponent(e.right)
        if n is not None:
            return f"({a}**{n})" if n >= 0 else f"_div(1.0,({a}**{-n}))"
        return f"_pow({a},{b})"
    raise TypeError(f"not an expression: {e!r}")


def compile_expression(e: Expression, names: Sequence[str]) -> Callable[..., float]:
    """Compile to ``f(*values)`` with positional args in *names* order.

    The compiled function raises the same DomainError kinds as
    ``evaluate`` but without subexpression context.  All free variables
    of *e* must appear in *names*.
    """
    argnames = {name: f"_a{i}" for i, name in enumerate(names)}
    body = _codegen(e, argnames)
    source = f"lambda {', '.join(argnames.values()) or '_unused'}: {body}"
    return eval(source, dict(_CG_NAMESPACE))  # noqa: S307 - generated from our own AST
