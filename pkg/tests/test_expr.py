from __future__ import annotations

import math

import numpy as np
import pytest

from dtorus.expr import (
    ArityError,
    DimensionError,
    ExpressionSyntaxError,
    UnknownIdentifierError,
    constant_value,
    evaluate,
    parse,
    unparse,
)


@pytest.mark.parametrize(
    "src, phi, expected",
    [
        ("tanh(phi)", [0.0], 0.0),
        ("sinh(phi)/cosh(phi)^3", [0.0], 0.0),
        ("sinh(phi)/cosh(phi)^3", [1.0], math.sinh(1.0) / math.cosh(1.0) ** 3),
        ("2.5", [7.0], 2.5),
        ("phi1+phi2", [1.0, 2.0], 3.0),
        ("tanh(phi)", [2.0], math.tanh(2.0)),
        ("2+3*4", [], 14.0),
        ("-2^2", [], -4.0),
        ("2^-1", [], 0.5),
        ("2^3^2", [], 512.0),
        ("(1+2)*3", [], 9.0),
        ("8/4/2", [], 1.0),
        ("sh(phi)/ch(phi)^4", [0.5], math.sinh(0.5) / math.cosh(0.5) ** 4),
        ("th(phi) - tanh(phi)", [0.3], 0.0),
        ("cos(pi)", [], -1.0),
        ("log(e)", [], 1.0),
        ("sqrt(abs(-16))", [], 4.0),
        ("1.5e-3 * 2", [], 3e-3),
    ],
)
def test_evaluate_examples(src, phi, expected):
    assert evaluate(parse(src), phi) == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_spot_values_from_a_desk_calculator():
    # 0.3198500, not the 0.302069 sometimes listed for this example
    assert evaluate(parse("sinh(phi)/cosh(phi)^3"), [1.0]) == pytest.approx(0.3198500042246123, abs=1e-12)
    assert evaluate(parse("tanh(phi)"), [2.0]) == pytest.approx(0.964027, abs=1e-6)


def test_evaluation_is_deterministic():
    e = parse("sinh(phi)/cosh(phi)^3 + exp(-phi^2)")
    assert evaluate(e, [0.7]) == evaluate(e, [0.7])


def test_non_finite_results_are_returned():
    assert math.isinf(evaluate(parse("1/phi"), [0.0]))
    assert math.isnan(evaluate(parse("log(phi)"), [-1.0]))


def test_array_phase_broadcasts():
    xs = np.linspace(-2, 2, 9)
    out = parse("phi1 * cosh(phi2)").evaluate([xs, 0.0])
    np.testing.assert_allclose(out, xs)


@pytest.mark.parametrize(
    "src, offset",
    [
        ("2phi", 1),
        ("1 +", 3),
        ("sin(1", 5),
        ("(1+2))", 5),
        ("1 + # 2", 4),
        ("1 + φ", 4),
        ("*2", 0),
    ],
)
def test_syntax_errors_carry_byte_offset(src, offset):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse(src)
    assert info.value.offset == offset
    assert info.value.expected
    assert f"byte {offset}" in str(info.value)


def test_empty_source_is_rejected():
    with pytest.raises(ExpressionSyntaxError):
        parse("   ")


@pytest.mark.parametrize("src, name", [("foo(1)", "foo"), ("x + 1", "x"), ("phi0", "phi0")])
def test_unknown_identifier(src, name):
    with pytest.raises(UnknownIdentifierError) as info:
        parse(src)
    assert info.value.name == name


@pytest.mark.parametrize("src, got", [("sin(1, 2)", 2), ("cos()", 0), ("tanh + 1", 0)])
def test_arity(src, got):
    with pytest.raises(ArityError, match=f"got {got}"):
        parse(src)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate(parse("phi1 + phi3"), [1.0, 2.0])


def test_constant_value():
    assert constant_value(parse("2*pi")) == pytest.approx(2 * math.pi)
    assert constant_value(parse("phi")) is None


def test_unparse_is_fully_parenthesised():
    assert unparse(parse("-2^2")) == "(-(2.0 ^ 2.0))"
    assert unparse(parse("1e999")) == "1e999"


_FUNCS = ["sin", "cos", "tan", "tanh", "sinh", "cosh", "exp", "log", "sqrt", "abs", "th", "ch", "sh"]


def _random_source(rng: np.random.Generator, depth: int) -> str:
    if depth == 0 or rng.random() < 0.25:
        pick = rng.integers(4)
        if pick == 0:
            return repr(round(float(rng.uniform(0, 5)), int(rng.integers(0, 6))))
        if pick == 1:
            return "pi"
        return f"phi{int(rng.integers(1, 3))}"
    kind = rng.integers(4)
    if kind == 0:
        return f"-{_random_source(rng, depth - 1)}"
    if kind == 1:
        return f"{_FUNCS[int(rng.integers(len(_FUNCS)))]}({_random_source(rng, depth - 1)})"
    op = "+-*/^"[int(rng.integers(5))]
    left, right = _random_source(rng, depth - 1), _random_source(rng, depth - 1)
    if rng.random() < 0.5:
        return f"({left}) {op} ({right})"
    return f"{left} {op} {right}"


def test_round_trip_corpus(rng):
    phis = rng.uniform(-3, 3, size=(2, 100))
    for _ in range(60):
        src = _random_source(rng, 4)
        e = parse(src)
        again = parse(unparse(e))
        np.testing.assert_array_equal(again.evaluate(list(phis)), e.evaluate(list(phis)), err_msg=src)
