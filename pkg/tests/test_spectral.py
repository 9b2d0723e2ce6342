"""Orthogonal-polynomial recurrence, truncated zeros and the decay parameter."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import polynomial_entrance_spec
from quasiergodic import (BirthDeathSpec, decay_parameter, eigenfunction, eval_polynomials,
                          polynomial_zeros, qsd, spectrum)
from quasiergodic.errors import NotSummable, PreconditionFailed, ToleranceNotMet
from quasiergodic.spectral import boundary_value, jacobi_matrix, truncated_eigenvalues

EPS = np.finfo(float).eps


def plain_recurrence(spec, x, n):
    """``Q_n(x)`` with ordinary floats, as an independent reference."""
    b, d = spec.rates(n)
    prev, cur = 0.0, 1.0
    for k in range(n - 1):
        prev, cur = cur, ((b[k] + d[k] - x) * cur - d[k] * prev) / b[k]
    return cur


def bisection_zeros(spec, n_max):
    """Zeros of ``Q_2 .. Q_{n_max}`` by bracketing between the previous zeros."""
    diag, off = jacobi_matrix(spec, n_max)
    upper = float(np.max(diag) + 2 * np.max(np.abs(off))) * 1.01
    zeros = {1: np.array([])}
    for n in range(2, n_max + 1):
        edges = np.concatenate([[0.0], zeros[n - 1], [upper]])
        f = lambda x, n=n: plain_recurrence(spec, x, n)
        zeros[n] = np.array([brentq(f, lo, hi, xtol=1e-14, rtol=4 * EPS)
                             for lo, hi in zip(edges[:-1], edges[1:])])
    return zeros


def interlace(coarse, fine, rel=8 * EPS):
    """Strict interlacing up to a rounding allowance relative to the zero scale."""
    slack = rel * max(abs(fine[-1]), 1.0)
    return bool(np.all(fine[:-1] < coarse + slack) and np.all(coarse < fine[1:] + slack))


class TestRecurrence:
    def test_closed_form_at_decay_parameter(self, closed_form):
        i = np.arange(1, 11)
        q = eval_polynomials(closed_form, 2.0, 10).values()
        np.testing.assert_allclose(q, 3 * i / (i + 2), rtol=1e-10)

    def test_forward_recurrence_loses_bounded_branch(self, closed_form):
        # rounding excites the growing solution; hence the backward route
        q = eval_polynomials(closed_form, 2.0, 60).values()
        assert abs(q[-1]) > 1e6

    def test_residuals_vanish(self, closed_form):
        table = eval_polynomials(closed_form, 7.3, 300)
        assert np.max(table.residuals()) < 1e-12

    def test_rescaling_keeps_magnitudes(self, closed_form):
        # large x makes Q grow like a factorial power
        table = eval_polynomials(closed_form, 1e4, 400)
        assert np.all(np.isfinite(table.log_abs[1:]))
        assert table.log_abs[-1] > 700

    def test_requires_absorbed(self, reflecting_primal):
        with pytest.raises(PreconditionFailed):
            eval_polynomials(reflecting_primal, 1.0, 5)


class TestZeros:
    def test_match_bisection_oracle(self, closed_form):
        oracle = bisection_zeros(closed_form, 12)
        for n in range(2, 13):
            np.testing.assert_allclose(polynomial_zeros(closed_form, n), oracle[n],
                                       rtol=1e-12)

    def test_second_polynomial(self, closed_form):
        # Q_2(x) = (8 - x)/4
        np.testing.assert_allclose(polynomial_zeros(closed_form, 2), [8.0])

    def test_interlacing_closed_form(self, closed_form):
        for n in range(2, 80):
            assert interlace(polynomial_zeros(closed_form, n), polynomial_zeros(closed_form, n + 1))

    def test_smallest_zero_decreases_to_lambda(self, closed_form):
        first = [polynomial_zeros(closed_form, n)[0] for n in range(2, 60)]
        assert np.all(np.diff(first) <= 8 * EPS * 2)
        assert first[-1] == pytest.approx(2.0, abs=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_interlacing_random_families(self, seed):
        spec = polynomial_entrance_spec(np.random.default_rng(seed))
        zs = [polynomial_zeros(spec, n) for n in range(2, 42)]
        assert all(np.all(z > 0) for z in zs)
        assert all(interlace(a, b) for a, b in zip(zs, zs[1:]))

    def test_degree_one_has_no_zeros(self, closed_form):
        with pytest.raises(ValueError):
            polynomial_zeros(closed_form, 1)

    def test_partial_and_full_solvers_agree(self, closed_form):
        full = truncated_eigenvalues(closed_form, 200)
        part = truncated_eigenvalues(closed_form, 200, 10, solver_tol=1e-13)
        np.testing.assert_allclose(part, full[:10], rtol=1e-11)


class TestDecayParameter:
    def test_closed_form(self, closed_form):
        t0 = time.perf_counter()
        summary = decay_parameter(closed_form, 1e-6, n_cap=2 ** 14)
        assert time.perf_counter() - t0 < 5.0
        assert summary.lambda_ == pytest.approx(2.0, abs=1e-6)
        assert summary.refined

    def test_tight_tolerance(self, closed_form):
        assert decay_parameter(closed_form, 1e-12).lambda_ == pytest.approx(2.0, abs=1e-13)

    def test_witness_nonincreasing(self, closed_form):
        s = decay_parameter(closed_form, 1e-10)
        assert len(s.witness) == len(s.truncation_sizes) >= 2
        assert all(np.diff(s.truncation_sizes) > 0)
        # partial eigensolves are accurate to 0.1 * tol
        assert np.all(np.diff(s.witness) <= 1e-11)

    def test_unrefined_estimate(self, closed_form):
        s = decay_parameter(closed_form, 1e-8, refine=False)
        assert not s.refined
        assert s.lambda_ == pytest.approx(2.0, abs=1e-8)

    def test_natural_boundary_rejected(self):
        spec = BirthDeathSpec.from_expressions("i", "2*i")
        with pytest.raises(PreconditionFailed, match="natural"):
            decay_parameter(spec)

    def test_cap_reached(self, closed_form):
        with pytest.raises(ToleranceNotMet) as info:
            decay_parameter(closed_form, 1e-14, n_cap=32, refine=False)
        assert info.value.best_estimate == pytest.approx(2.0, abs=1e-3)

    def test_summary_serialises(self, closed_form):
        doc = decay_parameter(closed_form).to_dict()
        assert doc["lambda"] == pytest.approx(2.0)
        assert len(doc["witness"]) == len(doc["truncation_sizes"])

    def test_random_families_equal_eigenfunction_root(self, entrance_specs):
        for spec in entrance_specs:
            lam = decay_parameter(spec, 1e-10).lambda_
            assert abs(eigenfunction(spec, lam, 64).boundary) < 1e-9
            assert lam == pytest.approx(polynomial_zeros(spec, 400)[0], rel=1e-9)


class TestPositivity:
    @pytest.mark.parametrize("factor, positive", [(1 - 1e-3, True), (1 + 1e-3, False)])
    def test_closed_form(self, closed_form, closed_form_lambda, factor, positive):
        table = eval_polynomials(closed_form, closed_form_lambda * factor, 400)
        assert bool(np.all(table.sign[1:] > 0)) == positive

    def test_random_families(self, entrance_specs):
        for spec in entrance_specs:
            lam = decay_parameter(spec, 1e-10).lambda_
            assert np.all(eval_polynomials(spec, lam * (1 - 1e-3), 400).sign[1:] > 0)
            assert np.any(eval_polynomials(spec, lam * (1 + 1e-3), 400).sign[1:] <= 0)


class TestSpectrum:
    def test_leading_points(self, closed_form):
        s = spectrum(closed_form, 8, 1e-10)
        assert s.xi[0] == pytest.approx(2.0, rel=1e-10)
        assert all(np.diff(s.xi) > 0)
        deep = truncated_eigenvalues(closed_form, 2048, 8, solver_tol=0.0)
        np.testing.assert_allclose(s.xi, deep, rtol=1e-9)

    def test_invalid_k(self, closed_form):
        with pytest.raises(ValueError):
            spectrum(closed_form, 0)


class TestEigenfunction:
    def test_closed_form(self, closed_form):
        q = eigenfunction(closed_form, 2.0, 100)
        i = np.arange(1, 101)
        np.testing.assert_allclose(q.values, 3 * i / (i + 2), rtol=1e-12)
        assert abs(q.boundary) < 1e-13

    def test_boundary_changes_sign_at_lambda(self, closed_form):
        assert boundary_value(closed_form, 2.0 - 1e-6) * boundary_value(closed_form, 2.0 + 1e-6) < 0

    def test_scaled(self, closed_form):
        q = eigenfunction(closed_form, 2.0, 10).scaled(3.0)
        assert q.values[0] == 3.0 and q.with_zero()[0] == 0.0

    def test_minimal_solution_stays_bounded(self, closed_form):
        # the forward recurrence loses the bounded branch; the backward one keeps it
        q = eigenfunction(closed_form, 2.0, 3000)
        assert q.values[-1] == pytest.approx(3.0, rel=1e-3)
        assert math.isfinite(q.values.max())

    def test_residual_is_boundary_value(self, closed_form):
        x = 1.5
        q = eigenfunction(closed_form, x, 5)
        b, d = closed_form.rates(1)
        # row 1: b_1 Q_2 - (b_1 + d_1) Q_1 + d_1 Q_0 = -x Q_1 with Q_0 = boundary
        lhs = b[0] * q.values[1] - (b[0] + d[0]) * q.values[0] + d[0] * q.boundary
        assert lhs == pytest.approx(-x * q.values[0], rel=1e-12)

    def test_overshoot_detected_downstream(self, closed_form):
        # above lambda the bounded solution is positive but misses Q_0 = 0
        q = eigenfunction(closed_form, 2.5, 60)
        assert np.all(q.values > 0) and q.boundary < 0
        assert np.any(eval_polynomials(closed_form, 2.5, 60).sign[1:] < 0)
        with pytest.raises(NotSummable):
            qsd(closed_form, 2.5)
