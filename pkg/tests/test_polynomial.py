import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epf.polynomial import (
    Poly,
    logistic_derivative_polys,
    logistic_series,
    logistic_taylor_coefficients,
    monomial_powers,
    poly_add,
    poly_eval,
    poly_mul,
    poly_scale,
    remainder_bound,
    taylor_log1p_sq,
    taylor_logistic,
    taylor_sin,
)


def sparse_polys(nvars=2, max_terms=5, max_exp=3):
    exps = st.tuples(*[st.integers(0, max_exp)] * nvars)
    coefs = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
    return st.dictionaries(exps, coefs, max_size=max_terms).map(lambda t: Poly(t, nvars))


class TestPolyBasics:
    def test_square_of_affine(self):
        a = Poly.univariate([1.0, 2.0])
        assert a * a == Poly.univariate([1.0, 4.0, 4.0])

    def test_zero_polynomial_evaluates_to_zero(self):
        z = Poly({}, 2)
        assert poly_eval(z, [0.3, -1.2]) == 0.0
        assert z.degree() == -1

    def test_no_stored_zeros(self):
        p = Poly({(1,): 2.0, (2,): 0.0})
        assert len(p) == 1
        assert len(p - p) == 0

    def test_sin_square_cross_check(self):
        h = taylor_sin(1.0, 3).poly
        expected = Poly.univariate([0, 0, 1.0, 0, -1.0 / 3.0, 0, 1.0 / 36.0])
        got = h * h
        for k in range(7):
            assert got.coefficient((k,)) == pytest.approx(expected.coefficient((k,)), abs=1e-15)
        assert got(0.5) == pytest.approx((0.5 - 0.5**3 / 6) ** 2, rel=1e-14)

    def test_mul_degree_is_sum(self):
        a = Poly({(2, 1): 1.0, (0, 0): 3.0}, 2)
        b = Poly({(1, 3): -2.0}, 2)
        assert poly_mul(a, b).degree() == a.degree() + b.degree()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            Poly.variable(0, 1) + Poly.variable(0, 2)

    def test_module_functions_match_operators(self):
        a = Poly({(1, 0): 1.5, (0, 2): -1.0}, 2)
        b = Poly({(1, 1): 2.0}, 2)
        assert poly_add(a, b) == a + b
        assert poly_scale(a, 3.0) == a.scale(3.0)
        assert poly_mul(a, b) == a * b

    def test_vectorized_eval(self):
        p = Poly({(1, 0): 2.0, (1, 1): -1.0, (0, 0): 0.5}, 2)
        pts = np.array([[0.1, 0.2], [1.0, -1.0], [2.0, 3.0]])
        expected = 2 * pts[:, 0] - pts[:, 0] * pts[:, 1] + 0.5
        np.testing.assert_allclose(p(pts), expected, rtol=1e-15)

    def test_text_round_trip(self):
        p = Poly({(2, 0): 0.1, (0, 1): -3.25, (1, 1): 1e-300}, 2)
        text = p.to_text()
        assert text.splitlines() == sorted(text.splitlines())
        assert Poly.from_text(text, 2) == p

    def test_compose_and_shift(self):
        outer = Poly.univariate([1.0, -2.0, 0.5])
        inner = Poly({(1, 0): 1.0, (0, 1): -0.3}, 2)
        composed = outer.compose(inner)
        pts = np.array([[0.4, 1.2], [-1.0, 2.0]])
        np.testing.assert_allclose(composed(pts), outer(inner(pts)), rtol=1e-13)
        shifted = composed.shift([0.5, -1.0])
        np.testing.assert_allclose(shifted(pts), composed(pts - [0.5, -1.0]), rtol=1e-12)

    def test_drop_constant_leading(self):
        p = Poly({(0, 0): 1.0, (0, 2): 4.0, (1, 1): 2.0}, 2)
        assert p.drop_constant() == Poly({(0, 2): 4.0, (1, 1): 2.0}, 2)
        assert p.drop_constant(1) == Poly({(1, 1): 2.0}, 2)

    def test_monomial_powers(self):
        pts = np.array([[2.0, 3.0]])
        exps = np.array([[0, 0], [1, 2], [3, 0]])
        np.testing.assert_array_equal(monomial_powers(pts, exps), [[1.0, 18.0, 8.0]])


class TestRingAxioms:
    @settings(max_examples=50, deadline=None)
    @given(sparse_polys(), sparse_polys(), sparse_polys())
    def test_distributive(self, a, b, c):
        pts = np.random.default_rng(0).uniform(-1.5, 1.5, (20, 2))
        lhs = ((a + b) * c)(pts)
        rhs = (a * c + b * c)(pts)
        scale = np.maximum(1.0, np.abs(rhs))
        assert np.all(np.abs(lhs - rhs) / scale < 1e-10)

    @settings(max_examples=50, deadline=None)
    @given(sparse_polys(), sparse_polys())
    def test_commutative(self, a, b):
        assert a + b == b + a
        pts = np.random.default_rng(1).uniform(-1, 1, (20, 2))
        np.testing.assert_allclose((a * b)(pts), (b * a)(pts), rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(sparse_polys(), sparse_polys(), sparse_polys())
    def test_associative_mul(self, a, b, c):
        pts = np.random.default_rng(2).uniform(-1, 1, (20, 2))
        lhs = ((a * b) * c)(pts)
        rhs = (a * (b * c))(pts)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(sparse_polys())
    def test_identities(self, a):
        assert a + Poly({}, 2) == a
        assert a * Poly.constant(1.0, 2) == a
        assert (a - a).is_zero()


class TestTaylorSin:
    def test_unit_state_order_three(self):
        h = taylor_sin(1.0, 3).poly
        assert h == Poly.univariate([0.0, 1.0, 0.0, -1.0 / 6.0])

    def test_zero_state_is_zero_polynomial(self):
        assert taylor_sin(0.0, 7).poly.is_zero()

    def test_state_two_order_five(self):
        te = taylor_sin(2.0, 5)
        assert te.poly == Poly.univariate([0, 2.0, 0, -8.0 / 6.0, 0, 32.0 / 120.0])
        err = abs(math.sin(0.5 * 2.0) - te(0.5))
        assert err <= remainder_bound(2.0**6, 0.5, 5)

    def test_coefficients_alternate(self):
        h = taylor_sin(1.7, 9).poly
        for k in range(10):
            if k % 2 == 0:
                assert h.coefficient((k,)) == 0.0
            else:
                expected = (-1) ** (k // 2) * 1.7**k / math.factorial(k)
                assert h.coefficient((k,)) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("M", [1, 3, 5, 7, 9])
    def test_remainder_bound(self, M):
        theta = np.linspace(-1, 1, 41)
        for x in np.linspace(-2, 2, 9):
            err = np.abs(np.sin(theta * x) - taylor_sin(x, M)(theta))
            assert np.all(err <= remainder_bound(2.0 ** (M + 1), 1.0, M) * (1 + 1e-12) + 1e-15)

    def test_order_validation(self):
        with pytest.raises(ValueError):
            taylor_sin(1.0, 0)

    @pytest.mark.parametrize("center", [0.3, 0.7, -0.5])
    def test_centred_expansion(self, center):
        x = 1.8
        te = taylor_sin(x, 9, center)
        theta = np.linspace(center - 0.4, center + 0.4, 9)
        np.testing.assert_allclose(te(theta), np.sin(theta * x), atol=1e-6)
        np.testing.assert_allclose(te.in_theta()(theta), te(theta), rtol=1e-12, atol=1e-14)


class TestLog1pSq:
    def test_order_four(self):
        assert taylor_log1p_sq(4) == Poly.univariate([0, 0, 1.0, 0, -0.5])

    def test_order_eight(self):
        assert taylor_log1p_sq(8) == Poly.univariate([0, 0, 1.0, 0, -0.5, 0, 1.0 / 3.0, 0, -0.25])

    def test_zero_at_origin(self):
        assert taylor_log1p_sq(6)(0.0) == 0.0

    @pytest.mark.parametrize("M", [2, 4, 8, 12])
    def test_alternating_series_bound(self, M):
        # inside |v| < 1 the error is below the first omitted term v^(M+2) / (M/2 + 1)
        v = np.linspace(-0.5, 0.5, 101)
        err = np.abs(taylor_log1p_sq(M)(v) - np.log1p(v * v))
        assert np.all(err <= np.abs(v) ** (M + 2) / (M // 2 + 1) * (1 + 1e-9) + 1e-16)

    def test_accuracy_small_residuals(self):
        v = np.linspace(-0.2, 0.2, 101)
        assert np.max(np.abs(taylor_log1p_sq(8)(v) - np.log1p(v * v))) < 1e-6

    def test_diverges_outside_radius(self):
        assert abs(taylor_log1p_sq(10)(1.5) - math.log1p(2.25)) > 1.0

    @pytest.mark.parametrize("M", [0, 3, -2])
    def test_order_validation(self, M):
        with pytest.raises(ValueError):
            taylor_log1p_sq(M)


class TestLogistic:
    def test_series_leading_terms(self):
        s = logistic_series(5)
        assert s[:6] == (Fraction(1, 2), Fraction(1, 4), 0, Fraction(-1, 48), 0, Fraction(1, 480))

    def test_series_matches_function(self):
        coefs = [float(c) for c in logistic_series(15)]
        u = np.linspace(-1, 1, 21)
        approx = sum(c * u**k for k, c in enumerate(coefs))
        np.testing.assert_allclose(approx, 1 / (1 + np.exp(-u)), atol=1e-8)

    def test_derivative_polys(self):
        # sigma' = s - s^2, sigma'' = s - 3 s^2 + 2 s^3
        P = logistic_derivative_polys(2)
        assert P[1] == (0, 1, -1)
        assert P[2] == (0, 1, -3, 2)

    def test_taylor_coefficients_at_point(self):
        w0 = 0.8
        c = logistic_taylor_coefficients(w0, 6)
        h = 1e-3
        approx = sum(ck * h**k for k, ck in enumerate(c))
        assert approx == pytest.approx(1 / (1 + math.exp(-(w0 + h))), abs=1e-15)

    def test_order_zero_is_half(self):
        te = taylor_logistic(2.3, 0)
        assert te.poly == Poly.constant(0.5, 2)

    def test_gate_half_at_threshold(self):
        x = 1.7
        assert taylor_logistic(x, 3)((1.0, x)) == pytest.approx(0.5, abs=1e-15)

    def test_three_term_example(self):
        # u = gamma (c - x) = 0.5: 1/2 - u/4 + u^3/48
        value = taylor_logistic(0.0, 3)((0.5, 1.0))
        assert value == pytest.approx(0.5 - 0.5 / 4 + 0.5**3 / 48, abs=1e-15)
        assert abs(value - 1 / (1 + math.exp(0.5))) < 1e-4

    def test_gamma_degree(self):
        te = taylor_logistic(1.0, 9)
        assert te.poly.var_degree(0) <= 9

    @pytest.mark.parametrize("center", [(1.0, 3.0), (2.0, 2.0)])
    def test_centred_expansion(self, center):
        x = 4.0
        te = taylor_logistic(x, 9, center)
        pts = np.array(center) + np.array([[0.0, 0.0], [0.1, -0.2], [-0.2, 0.3]])
        exact = 1 / (1 + np.exp(-pts[:, 0] * (x - pts[:, 1])))
        np.testing.assert_allclose(te(pts), exact, atol=1e-5)

    def test_centre_zero_matches_default(self):
        a = taylor_logistic(-1.3, 7)
        b = taylor_logistic(-1.3, 7, (0.0, 5.0))
        pts = np.array([[0.3, 0.1], [0.5, -0.4]])
        np.testing.assert_allclose(a(pts), b.in_theta()(pts), rtol=1e-12)


class TestRemainderBound:
    def test_unit(self):
        assert remainder_bound(1.0, 1.0, 0) == pytest.approx(1.0)

    def test_factorial(self):
        assert remainder_bound(1.0, 1.0, 9) == pytest.approx(1 / math.factorial(10), rel=1e-12)

    def test_zero_derivative_bound(self):
        assert remainder_bound(0.0, 2.0, 4) == 0.0

    def test_no_overflow(self):
        got = remainder_bound(1e300, 50.0, 400)
        expected = math.exp(300 * math.log(10) + 401 * math.log(50.0) - math.lgamma(402))
        assert got == pytest.approx(expected, rel=1e-9)

    def test_decreasing_past_a(self):
        a = 3.0
        vals = [remainder_bound(1.0, a, M) for M in range(3, 30)]
        assert all(x > y for x, y in zip(vals, vals[1:]))
