"""Tests for the rate-expression parser and printer."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from quasiergodic.errors import RateSyntaxError
from quasiergodic.expr import (BinOp, Num, Pow, Var, binop, num, parse_rate, power,
                               shift_index, to_source, var)

numbers = st.one_of(
    st.integers(min_value=-50, max_value=50).map(float),
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False),
)


def _safe(build):
    """Apply a folding constructor, mapping non-finite constants to ``None``."""
    def wrapped(args):
        try:
            return build(*args)
        except ZeroDivisionError:
            return None
    return wrapped


def _trees(children):
    ops = st.sampled_from(["+", "-", "*", "/"])
    return st.one_of(
        st.tuples(ops, children, children).map(_safe(binop)),
        st.tuples(children, st.integers(0, 4)).map(_safe(power)),
    ).filter(lambda node: node is not None)


leaves = st.one_of(numbers.map(num), st.just(var()))
expressions = st.recursive(leaves, _trees, max_leaves=12)
# small integers keep shifted evaluation free of cancellation noise
integer_expressions = st.recursive(
    st.one_of(st.integers(1, 9).map(num), st.just(var())), _trees, max_leaves=8)


def _depth(node):
    if isinstance(node, BinOp):
        return 1 + max(_depth(node.left), _depth(node.right))
    if isinstance(node, Pow):
        return 1 + _depth(node.base)
    return 0


class TestParse:
    def test_constant_folding(self):
        assert parse_rate("(1+2)*i") == BinOp("*", Num(3.0), Var())
        assert parse_rate("2^3") == Num(8.0)

    def test_precedence_and_associativity(self):
        node = parse_rate("i-1-2")
        assert node.evaluate(np.array([10.0]))[0] == 7.0
        assert parse_rate("2*i^2").evaluate(3.0) == 18.0
        assert parse_rate("8/2/2").value == 2.0

    def test_scientific_numbers(self):
        assert parse_rate("1.5e2*i").evaluate(2.0) == 300.0
        assert parse_rate(".5").value == 0.5

    def test_evaluates_elementwise(self):
        node = parse_rate("(i+1)^2")
        np.testing.assert_array_equal(node.evaluate(np.arange(1.0, 4.0)), [4.0, 9.0, 16.0])

    @pytest.mark.parametrize("source, column", [
        ("i*", 3),
        ("i + x", 5),
        ("(i+1", 5),
        ("i^1.5", 3),
        ("3 i", 3),
        ("1/0", 2),
    ])
    def test_syntax_error_location(self, source, column):
        with pytest.raises(RateSyntaxError) as info:
            parse_rate(source)
        assert info.value.line == 1
        assert info.value.column == column

    def test_error_on_second_line(self):
        with pytest.raises(RateSyntaxError) as info:
            parse_rate("i+\n*2")
        assert (info.value.line, info.value.column) == (2, 1)

    def test_syntax_error_is_value_error(self):
        with pytest.raises(ValueError):
            parse_rate("")


class TestPrinter:
    @pytest.mark.parametrize("source, canonical", [
        ("(i+1)^2", "(i+1)^2"),
        ("i - (1 - i)", "i-(1-i)"),
        ("(i*2)/(i*3)", "i*2/(i*3)"),
        ("0-3", "(0-3)"),
    ])
    def test_canonical_text(self, source, canonical):
        assert to_source(parse_rate(source)) == canonical

    @settings(max_examples=300, deadline=None)
    @given(expressions)
    def test_round_trip(self, node):
        assume(_depth(node) <= 6)
        assert parse_rate(to_source(node)) == node

    @settings(max_examples=200, deadline=None)
    @given(integer_expressions, st.integers(-5, 5))
    def test_shift_substitutes_index(self, node, k):
        assume(_depth(node) <= 6)
        i = np.arange(1.0, 6.0)
        with np.errstate(all="ignore"):
            expected = np.asarray(node.evaluate(i + k), dtype=float)
            got = np.asarray(shift_index(node, k).evaluate(i), dtype=float)
        np.testing.assert_allclose(got, expected, rtol=1e-10, atol=1e-10)


def test_shift_folds_offsets():
    assert to_source(shift_index(parse_rate("(i+2)^2"), -1)) == "(i+1)^2"
    assert to_source(shift_index(parse_rate("i+3"), 1)) == "i+4"
    assert to_source(shift_index(parse_rate("i-1"), 1)) == "i"
