import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflab.errors import DimensionError, ExpressionSyntaxError
from dflab.expr import BinOp, Const, Func, Neg, Pow, Var, compose_unitary, parse, scale, to_text
from dflab.jet import eval_value

from oracles import random_unitary


def test_sugar_expands_to_real_parts():
    e = parse("abs2(z2) + re(z1) - im(z1)", 2)
    p = np.array([0.3, -0.7, 1.5, 2.0])
    assert eval_value(e, p) == pytest.approx(1.5**2 + 2.0**2 + 0.3 + 0.7)


def test_precedence_and_associativity():
    p = np.zeros(2)
    assert eval_value(parse("2^3^2", 1), p) == pytest.approx(2.0**9)
    assert eval_value(parse("-2^2", 1), p) == pytest.approx(-4.0)
    assert eval_value(parse("8/4/2", 1), p) == pytest.approx(1.0)
    assert eval_value(parse("1 - 2 - 3", 1), p) == pytest.approx(-4.0)
    assert eval_value(parse("2*pi", 1), p) == pytest.approx(2 * math.pi)


def test_negative_literal_folds_into_constant():
    assert parse("-2", 1).ast == Const(-2.0)
    assert parse("-2^2", 1).ast == Neg(Pow(Const(2.0), Const(2.0)))


@pytest.mark.parametrize(
    "text, pos",
    [("x1 +", 4), ("x1 * * y1", 5), ("exp x1", 4), ("(x1", 3), ("foo(x1)", 0), ("x1 $ y1", 3), ("abs2(x1)", 5)],
)
def test_syntax_errors_report_position(text, pos):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse(text, 1)
    assert info.value.position == pos
    assert "^" in str(info.value)


@pytest.mark.parametrize("text", ["x3", "abs2(z3)", "y0"])
def test_variable_index_checked_against_dimension(text):
    with pytest.raises(DimensionError):
        parse(text, 2)


def test_dimension_range():
    with pytest.raises(DimensionError):
        parse("x1", 5)


def test_compose_unitary_matches_direct_evaluation():
    rng = np.random.default_rng(3)
    U = random_unitary(rng, 2)
    e = parse("abs2(z1) + abs2(z2)^2 - 1 + x1*y2", 2)
    ue = compose_unitary(e, U)
    z = rng.normal(size=2) + 1j * rng.normal(size=2)
    w = U @ z
    p = np.array([z[0].real, z[0].imag, z[1].real, z[1].imag])
    q = np.array([w[0].real, w[0].imag, w[1].real, w[1].imag])
    assert eval_value(ue, p) == pytest.approx(eval_value(e, q), rel=1e-12)


def test_scale():
    e = parse("x1 - 1", 1)
    assert eval_value(scale(e, 3.0), np.array([2.0, 0.0])) == pytest.approx(3.0)


# -- round trip -----------------------------------------------------------------

N = 2
leaves = st.one_of(
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_subnormal=False).map(Const),
    st.builds(Var, st.integers(1, N), st.sampled_from("xy")),
)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from("+-*/"), children, children),
        st.builds(Pow, children, children),
        st.builds(Func, st.sampled_from(["exp", "log", "sqrt", "sin", "cos"]), children),
    )


trees = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    assert parse(to_text(tree), N).ast == tree


@settings(max_examples=100, deadline=None)
@given(trees)
def test_printed_form_is_a_fixed_point(tree):
    text = to_text(tree)
    assert to_text(parse(text, N).ast) == text
