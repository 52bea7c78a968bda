from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermalphi.wick import (WickPolynomial, exponential_partial_sum, interaction_polynomial,
                             parse_poly, wick_order, wick_pairing, wick_reorder)

c = Fraction(3, 7)


def test_low_orders():
    assert wick_order(0, c).coeffs == (1,)
    assert wick_order(2, c).coeffs == (-c, 0, 1)
    assert wick_order(4, c).coeffs == (3 * c**2, 0, -6 * c, 0, 1)
    with pytest.raises(ValueError):
        wick_order(-1, c)


def test_generating_series_matches_expansion():
    # coefficient of alpha^n / n! in e^{alpha phi - alpha^2 c / 2}
    phi = np.linspace(-2, 2, 7)
    cf = 0.37
    approx = exponential_partial_sum(phi, 0.8, cf, 30)
    np.testing.assert_allclose(approx, np.exp(0.8 * phi - 0.32 * cf), rtol=1e-12)


def test_evaluation_agrees_with_monomials():
    P = WickPolynomial((1, -2, 0, 5, 1), 0.6, exact=False)
    phi = np.linspace(-3, 3, 11)
    mono = np.polynomial.polynomial.polyval(phi, P.monomial_coeffs())
    np.testing.assert_allclose(P(phi), mono, rtol=1e-12, atol=1e-12)


def test_reorder_identity_and_shift():
    P = WickPolynomial((1, 2, 3), c)
    assert wick_reorder(P, c, c) == P
    c2 = Fraction(5, 2)
    q = wick_reorder(WickPolynomial((0, 0, 1), c), c, c2)
    assert q.coeffs == (c2 - c, 0, 1)
    with pytest.raises(ValueError):
        wick_reorder(P, c2, c)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.fractions(min_value=-10, max_value=10, max_denominator=12), min_size=1, max_size=9),
       st.fractions(min_value=0, max_value=5, max_denominator=9),
       st.fractions(min_value=0, max_value=5, max_denominator=9))
def test_reorder_roundtrip_is_exact(coeffs, c1, c2):
    P = WickPolynomial(tuple(coeffs), c1)
    Q = wick_reorder(P, c1, c2)
    assert wick_reorder(Q, c2, c1) == P
    assert Q.monomial_coeffs() == P.monomial_coeffs()


def test_pairing_formula():
    assert wick_pairing(1, 2, 0.3) == 0.0
    assert wick_pairing(2, 2, 0.3) == pytest.approx(2 * 0.09)
    assert wick_pairing(0, 0, 0.3) == 1.0
    with pytest.raises(ValueError):
        wick_pairing(-1, 0, 0.3)


def test_bounded_below():
    assert WickPolynomial((0, 0, 0, 0, 1)).is_bounded_below()
    assert not WickPolynomial((0, 0, 0, 1)).is_bounded_below()
    assert not WickPolynomial((0, 0, -1)).is_bounded_below()
    assert WickPolynomial((2,)).is_bounded_below()


@pytest.mark.parametrize("text,expect", [
    ("x^4", (0, 0, 0, 0, 1)),
    ("0.1*x^4 + 0.5*x^2", (0, 0, Fraction(1, 2), 0, Fraction(1, 10))),
    ("3/4 - x", (Fraction(3, 4), -1)),
    ("1e-2*x^2", (0, 0, Fraction(1, 100))),
    ("x + x", (0, 2)),
])
def test_parse(text, expect):
    assert parse_poly(text) == expect


@pytest.mark.parametrize("text", ["", "x^", "2**x", "*x", "y^2", "1.2.3"])
def test_parse_rejects(text):
    with pytest.raises(ValueError):
        parse_poly(text)


def test_float_mode_and_scaling():
    P = interaction_polynomial((0, 0, 0, 0, 0.1), 0.25)
    assert not P.exact and P.degree == 4
    assert P.scaled(2).coeffs[-1] == pytest.approx(0.2)
    assert WickPolynomial((c, 1), c).to_float().wick_constant == pytest.approx(float(c))
