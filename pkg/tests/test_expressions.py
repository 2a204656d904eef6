"""Expression parser and evaluator, including positioned errors."""

import math
import random

import numpy as np
import pytest

from fbsde import parse_expression
from fbsde.errors import (
    ArityError,
    ExpressionDomainError,
    ExpressionSyntaxError,
    UnknownIdentifier,
)


class TestParsing:
    def test_readme_style_expression(self):
        expr = parse_expression("-y + 0.1*tanh(x)")
        got = expr.evaluate({"x": 1.0, "y": 2.0})
        assert got == pytest.approx(-2.0 + 0.1 * math.tanh(1.0), abs=1e-15)

    def test_power_is_right_associative(self):
        assert parse_expression("2^3^2").evaluate({}) == 512.0

    def test_power_binds_tighter_than_unary_minus(self):
        assert parse_expression("-2^2").evaluate({}) == -4.0
        assert parse_expression("2^-3").evaluate({}) == 0.125

    def test_precedence_chain(self):
        assert parse_expression("1 + 2*3^2").evaluate({}) == 19.0
        assert parse_expression("(1 + 2)*3").evaluate({}) == 9.0
        assert parse_expression("--2").evaluate({}) == 2.0
        assert parse_expression("6/3/2").evaluate({}) == 1.0

    def test_literals(self):
        assert parse_expression("1e3").evaluate({}) == 1000.0
        assert parse_expression("2.5E-2").evaluate({}) == 0.025
        assert parse_expression(".5").evaluate({}) == 0.5

    def test_functions(self):
        env = {"x": 0.3}
        assert parse_expression("sin(x)").evaluate(env) == pytest.approx(math.sin(0.3))
        assert parse_expression("min(x, 0)").evaluate(env) == 0.0
        assert parse_expression("max(x, 2*x)").evaluate(env) == pytest.approx(0.6)
        assert parse_expression("abs(-x)").evaluate(env) == pytest.approx(0.3)

    def test_variable_inventory(self):
        expr = parse_expression("t + x*y - z2 + w")
        assert expr.variables == {"t", "x", "y", "z2", "w"}


class TestPositionedErrors:
    def test_unterminated_call(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("min(x, ")
        assert info.value.position == 7

    def test_unknown_function(self):
        with pytest.raises(UnknownIdentifier) as info:
            parse_expression("fog(x)")
        assert info.value.position == 0
        assert info.value.name == "fog"

    def test_wrong_arity(self):
        with pytest.raises(ArityError) as info:
            parse_expression("min(x)")
        assert info.value.position == 0
        assert info.value.expected == 2

    def test_unknown_variable_offset(self):
        with pytest.raises(UnknownIdentifier) as info:
            parse_expression("x + volatility")
        assert info.value.position == 4

    def test_unexpected_character(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("x + $")
        assert info.value.position == 4

    def test_trailing_garbage(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("x 1")
        assert info.value.position == 2

    def test_missing_operand(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("1 + * 2")
        assert info.value.position == 4

    def test_unclosed_paren(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("(x + 1")
        assert info.value.position == 6

    def test_z_index_rules(self):
        assert parse_expression("z1 + z12").variables == {"z1", "z12"}
        with pytest.raises(UnknownIdentifier):
            parse_expression("z0")
        with pytest.raises(UnknownIdentifier):
            parse_expression("z")

    def test_missing_env_variable(self):
        expr = parse_expression("x + y")
        with pytest.raises(UnknownIdentifier) as info:
            expr.evaluate({"x": 1.0})
        assert info.value.position == 4


class TestDomainErrors:
    def test_division_by_zero_is_positioned(self):
        expr = parse_expression("x/(y - y)")
        with pytest.raises(ExpressionDomainError) as info:
            expr.evaluate({"x": 1.0, "y": 3.0})
        assert info.value.position == 1

    def test_overflow(self):
        with pytest.raises(ExpressionDomainError):
            parse_expression("exp(x)").evaluate({"x": 1000.0})
        with pytest.raises(ExpressionDomainError):
            parse_expression("x^y").evaluate({"x": 10.0, "y": 400.0})

    def test_fractional_power_of_negative(self):
        with pytest.raises(ExpressionDomainError):
            parse_expression("x^0.5").evaluate({"x": -2.0})

    def test_zero_to_negative_power(self):
        with pytest.raises(ExpressionDomainError):
            parse_expression("x^-1").evaluate({"x": 0.0})


def random_source(rng, depth=0):
    """Random grammar-valid expression source."""
    variables = ["t", "x", "y", "w", "z1"]
    if depth >= 4 or rng.random() < 0.3:
        kind = rng.choice(["num", "var"])
        if kind == "num":
            value = rng.choice(["0", "1", "2.5", "0.3", "1e2", ".25", "7"])
            return str(value)
        return str(rng.choice(variables))
    kind = rng.choice(["binary", "unary", "call", "paren"])
    if kind == "binary":
        op = rng.choice(["+", "-", "*", "/", "^"])
        return f"({random_source(rng, depth + 1)} {op} {random_source(rng, depth + 1)})"
    if kind == "unary":
        return f"(-{random_source(rng, depth + 1)})"
    if kind == "call":
        name = rng.choice(["sin", "cos", "exp", "tanh", "abs", "min", "max"])
        if name in ("min", "max"):
            return f"{name}({random_source(rng, depth + 1)}, {random_source(rng, depth + 1)})"
        return f"{name}({random_source(rng, depth + 1)})"
    return f"({random_source(rng, depth + 1)})"


def test_fuzzed_sources_parse_and_evaluate_or_raise_domain_errors():
    rng = np.random.default_rng(123)
    env = {"t": 1.0, "x": 0.7, "y": -1.3, "w": 2.0, "z1": 0.4}
    finite = 0
    domain = 0
    for _ in range(300):
        source = random_source(rng)
        expr = parse_expression(source)  # grammar-valid strings always parse
        try:
            value = expr.evaluate(env)
        except ExpressionDomainError as err:
            assert isinstance(err.position, int)
            assert 0 <= err.position < len(source)
            domain += 1
            continue
        assert math.isfinite(value)
        finite += 1
    assert finite > 0 and domain > 0
