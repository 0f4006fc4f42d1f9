import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajlab.expressions import (
    Binary,
    Const,
    DomainError,
    ExprSyntaxError,
    MissingBindingError,
    Unary,
    UnknownIdentifierError,
    Var,
    compile_expression,
    differentiate,
    parse,
    substitute,
)


def test_parse_shapes_follow_precedence():
    e = parse("x^2 + sin(t)")
    assert isinstance(e, Binary) and e.op == "+"
    assert isinstance(e.left, Binary) and e.left.op == "^"
    assert e.left.left == Var("x") and e.left.right == Const(2.0)
    assert e.right == Unary("sin", Var("t"))


def test_power_is_right_associative_and_tightest():
    e = parse("2^3^2")
    assert e == Const(512.0)  # constant-folded as 2^(3^2)
    e = parse("-x^2")
    assert isinstance(e, Unary) and e.op == "neg"
    assert e.evaluate({"x": 3.0}) == -9.0
    assert parse("2*x^2").evaluate({"x": 3.0}) == 18.0


def test_unary_minus_in_exponent():
    assert parse("x^-2").evaluate({"x": 2.0}) == 0.25


def test_incomplete_input_reports_position():
    with pytest.raises(ExprSyntaxError) as err:
        parse("2*")
    assert err.value.position == 2


def test_unknown_function_lists_alternatives():
    with pytest.raises(UnknownIdentifierError) as err:
        parse("foo(x)")
    assert "sin" in err.value.allowed


def test_allowed_names_restrict_variables():
    parse("x + t", allowed_names=["x", "t"])
    with pytest.raises(UnknownIdentifierError) as err:
        parse("x + y", allowed_names=["x", "t"])
    assert err.value.name == "y"


def test_parameter_substitution_folds_constants():
    e = parse("(1+eps)*x^(1+2*eps)", params={"eps": 0.5})
    assert isinstance(e, Binary) and e.op == "*"
    assert e.left == Const(1.5)
    assert e.right.right == Const(2.0)
    # integral exponent applies to any base
    assert e.evaluate({"x": -2.0}) == pytest.approx(6.0)
    assert e.evaluate({"x": 4.0}) == pytest.approx(24.0)


def test_evaluate_basics():
    assert parse("x^2").evaluate({"x": 3.0}) == 9.0
    assert parse("abs(x)*x").evaluate({"x": -2.0}) == -4.0
    with pytest.raises(DomainError):
        parse("log(x)").evaluate({"x": -1.0})
    with pytest.raises(DomainError):
        parse("sqrt(x)").evaluate({"x": -4.0})
    with pytest.raises(DomainError):
        parse("1/x").evaluate({"x": 0.0})
    with pytest.raises(MissingBindingError):
        parse("x + y").evaluate({"x": 1.0})


def test_power_domain_rules():
    with pytest.raises(DomainError):
        parse("x^t").evaluate({"x": -2.0, "t": 0.5})
    # continuous extension at zero base
    assert parse("x^t").evaluate({"x": 0.0, "t": 1.5}) == 0.0
    assert parse("x^t").evaluate({"x": 0.0, "t": 0.0}) == 1.0
    with pytest.raises(DomainError):
        parse("x^t").evaluate({"x": 0.0, "t": -1.0})


def test_differentiate_simple_forms():
    dx = differentiate(parse("x^2"), "x")
    assert dx.evaluate({"x": 5.0}) == 10.0
    d = differentiate(parse("sin(x)*t"), "x")
    for x, t in [(0.3, 2.0), (-1.2, 0.5)]:
        assert d.evaluate({"x": x, "t": t}) == pytest.approx(math.cos(x) * t)


def test_differentiate_abs_uses_sign():
    d = differentiate(parse("abs(x)"), "x")
    assert d.evaluate({"x": 2.5}) == 1.0
    assert d.evaluate({"x": -2.5}) == -1.0
    assert d.evaluate({"x": 0.0}) == 0.0  # documented convention at the kink


def _random_smooth(rng: random.Random, depth: int):
    """Random smooth expression over x and t, bounded on [-2, 2]^2."""
    if depth == 0:
        return rng.choice(["x", "t", repr(rng.uniform(-2.0, 2.0))])
    a = _random_smooth(rng, depth - 1)
    b = _random_smooth(rng, depth - 1)
    return rng.choice(
        [
            f"({a} + {b})",
            f"({a} - {b})",
            f"({a}) * ({b})",
            f"({a}) / (({b})^2 + 1.5)",
            f"sin({a})",
            f"cos({a})",
            f"tanh({a})",
            f"exp(0.3*({a}))",
            f"sqrt(({a})^2 + 1)",
            f"log(({a})^2 + 1.25)",
            f"({a})^2",
            f"({a})^3",
        ]
    )


def test_derivative_matches_finite_differences():
    rng = random.Random(20240811)
    checked = 0
    while checked < 100:
        source = _random_smooth(rng, rng.randint(1, 3))
        e = parse(source)
        d = differentiate(e, "x")
        x = rng.uniform(-2.0, 2.0)
        t = rng.uniform(-2.0, 2.0)
        h = 1e-6 * max(1.0, abs(x))
        try:
            sym = d.evaluate({"x": x, "t": t})
            fd = (
                e.evaluate({"x": x + h, "t": t}) - e.evaluate({"x": x - h, "t": t})
            ) / (2.0 * h)
        except DomainError:
            continue
        if abs(sym) > 1e6 or abs(fd) > 1e6:
            continue
        assert abs(sym - fd) <= 1e-5 * max(1.0, abs(sym)), source
        checked += 1


def test_derivative_linearity():
    rng = random.Random(7)
    for _ in range(25):
        e1 = parse(_random_smooth(rng, 2))
        e2 = parse(_random_smooth(rng, 2))
        a = rng.uniform(-3.0, 3.0)
        combined = parse(f"{a!r}*({e1}) + ({e2})")
        d_combined = differentiate(combined, "x")
        d1 = differentiate(e1, "x")
        d2 = differentiate(e2, "x")
        for _ in range(4):
            b = {"x": rng.uniform(-2.0, 2.0), "t": rng.uniform(-2.0, 2.0)}
            try:
                lhs = d_combined.evaluate(b)
                rhs = a * d1.evaluate(b) + d2.evaluate(b)
            except DomainError:
                continue
            assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


_SAMPLES = [
    "x^2 + sin(t)",
    "(1.5)*x^2 - abs(x)/2",
    "exp(0.25*x)*cos(t) + sqrt(x^2 + 1)",
    "log(x^2 + 2)/(1 + tanh(t))",
    "-x^3 + x^-2",
    "sinh(x) - cosh(t) + sign(x)",
]


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(_SAMPLES),
    st.floats(min_value=-3.0, max_value=3.0).filter(lambda v: abs(v) > 1e-3),
    st.floats(min_value=-3.0, max_value=3.0),
)
def test_print_parse_round_trip(source, x, t):
    e = parse(source)
    back = parse(str(e))
    bindings = {"x": x, "t": t}
    assert back.evaluate(bindings) == e.evaluate(bindings)


def test_round_trip_of_derivatives():
    rng = random.Random(99)
    for _ in range(50):
        e = differentiate(parse(_random_smooth(rng, 3)), "x")
        back = parse(str(e))
        b = {"x": rng.uniform(-2.0, 2.0), "t": rng.uniform(-2.0, 2.0)}
        try:
            expected = e.evaluate(b)
        except DomainError:
            continue
        assert back.evaluate(b) == expected


def test_free_variables():
    e = parse("x^2 + sin(t)*y")
    assert e.free_variables() == {"x", "t", "y"}
    assert parse("1 + 2").free_variables() == frozenset()


def test_substitute_renames_and_binds():
    e = parse("x + sin(t)")
    renamed = substitute(e, {"t": Var("tau")})
    assert renamed.free_variables() == {"x", "tau"}
    bound = substitute(e, {"x": 2.0})
    assert bound.evaluate({"t": 0.0}) == 2.0


def test_compiled_matches_evaluate():
    rng = random.Random(4242)
    for _ in range(40):
        e = parse(_random_smooth(rng, 3))
        f = compile_expression(e, ["x", "t"])
        for _ in range(5):
            x, t = rng.uniform(-2, 2), rng.uniform(-2, 2)
            try:
                expected = e.evaluate({"x": x, "t": t})
            except DomainError:
                continue
            assert f(x, t) == expected


def test_compiled_raises_domain_errors():
    f = compile_expression(parse("log(x)"), ["x"])
    with pytest.raises(DomainError):
        f(-1.0)
    g = compile_expression(parse("1/x"), ["x"])
    with pytest.raises(DomainError):
        g(0.0)
