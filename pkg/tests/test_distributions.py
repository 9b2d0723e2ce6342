"""Quasi-stationary and quasi-ergodic laws, the h-process and the ratio order."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import polynomial_entrance_spec
from quasiergodic import (BoundaryKind, DistributionVector, decay_parameter, eigenfunction,
                          h_process, monotonicity_certificate, ordering_check,
                          potential_coefficients, qed, qsd)
from quasiergodic.distributions import invariance_residuals
from quasiergodic.errors import DegenerateRatio, NotSummable, PreconditionFailed

EPS = np.finfo(float).eps
I20 = np.arange(1, 21)


def nu_exact(i):
    return np.array([k / math.factorial(k + 1) for k in i], dtype=float)


def qed_weights_exact(i):
    return np.array([k * k / ((k + 2) * math.factorial(k + 1)) for k in i], dtype=float)


def rational_qed_weights(n):
    """``pi_i Q_i^2`` in exact arithmetic for the closed-form model at ``x = 2``."""
    b = [Fraction(i + 3) for i in range(1, n + 1)]
    d = [Fraction((i + 1) ** 2) for i in range(1, n + 1)]
    q = [Fraction(0), Fraction(1)]
    for k in range(n - 1):
        q.append(((b[k] + d[k] - 2) * q[-1] - d[k] * q[-2]) / b[k])
    pi = [Fraction(1)]
    for k in range(n - 1):
        pi.append(pi[-1] * b[k] / d[k + 1])
    return [p * qi ** 2 for p, qi in zip(pi, q[1:])]


class TestQSD:
    def test_closed_form(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda)
        np.testing.assert_allclose(nu.probabilities()[:20], nu_exact(I20), rtol=1e-8)

    def test_mass_under_truncation(self, closed_form, closed_form_lambda):
        total = qsd(closed_form, closed_form_lambda).total()
        # normalised by its own sum, so the excess is rounding only
        assert 1 - 1e-10 <= total <= 1 + 4 * EPS

    def test_diagnostics(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda)
        assert nu.diagnostics["identity_residual"] < 1e-12
        assert nu.truncation_error_bound < 1e-15

    def test_explicit_truncation(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda, 8)
        assert len(nu) == 8
        exact = nu_exact(range(1, 9))
        np.testing.assert_allclose(nu.probabilities(), exact / exact.sum(), rtol=1e-12)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_invariant_to_eigenvector_scale(self, closed_form, closed_form_lambda, c):
        eig = eigenfunction(closed_form, closed_form_lambda, 200)
        base = qsd(closed_form, closed_form_lambda)
        scaled = qsd(closed_form, closed_form_lambda, len(base), eigen=eig.scaled(c))
        np.testing.assert_allclose(scaled.probabilities(), base.probabilities(), rtol=1e-13)

    def test_off_lambda_fails_identity(self, closed_form):
        with pytest.raises(NotSummable):
            qsd(closed_form, 1.9)

    def test_reflecting_rejected(self, reflecting_primal):
        with pytest.raises(PreconditionFailed):
            qsd(reflecting_primal, 1.0)

    def test_serialisation(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda)
        doc = json.loads(nu.to_json())
        assert len(doc["weights"]) == len(nu)
        lines = nu.to_csv().splitlines()
        assert lines[0] == "state,weight,cumulative"
        assert float(lines[-1].split(",")[2]) == pytest.approx(1.0)
        assert nu[1] == pytest.approx(0.5, rel=1e-12)


class TestQED:
    def test_closed_form(self, closed_form, closed_form_lambda):
        m = qed(closed_form, closed_form_lambda)
        w = qed_weights_exact(range(1, len(m) + 1))
        np.testing.assert_allclose(m.probabilities(), w / w.sum(), rtol=1e-8)

    def test_first_two_weights_equal(self, closed_form, closed_form_lambda):
        exact = rational_qed_weights(4)
        assert exact[0] == exact[1] == 1
        w = qed(closed_form, closed_form_lambda).weights.values()
        assert w[0] == pytest.approx(w[1], rel=4 * EPS, abs=0)

    def test_normalised_first_weight(self, closed_form, closed_form_lambda):
        assert qed(closed_form, closed_form_lambda)[1] == pytest.approx(oracles.M1, rel=1e-8)

    def test_rational_weights_match(self, closed_form, closed_form_lambda):
        exact = np.array([float(v) for v in rational_qed_weights(15)])
        got = qed(closed_form, closed_form_lambda).weights.values()[:15]
        np.testing.assert_allclose(got, exact, rtol=1e-13)


class TestOrdering:
    def test_closed_form_ratio(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda)
        m = qed(closed_form, closed_form_lambda, len(nu))
        res = ordering_check(m, nu)
        assert res.is_lr_ordered
        ratio = np.array(res.ratio)
        shape = I20[:len(ratio)] / (I20[:len(ratio)] + 2)
        np.testing.assert_allclose(ratio / ratio[0], shape / shape[0], rtol=1e-10)

    def test_reversed_is_not_ordered(self, closed_form, closed_form_lambda):
        nu = qsd(closed_form, closed_form_lambda)
        m = qed(closed_form, closed_form_lambda, len(nu))
        assert not ordering_check(nu, m).is_lr_ordered

    def test_zero_reference_weight(self):
        m = DistributionVector.from_log_weights([0.0, 0.0])
        nu = DistributionVector.from_log_weights([0.0, -np.inf])
        with pytest.raises(DegenerateRatio):
            ordering_check(m, nu)

    def test_length_mismatch(self):
        with pytest.raises(PreconditionFailed):
            ordering_check(DistributionVector.from_log_weights([0.0]),
                           DistributionVector.from_log_weights([0.0, 0.0]))

    def test_random_families_ordered(self, entrance_specs):
        for spec in entrance_specs:
            lam = decay_parameter(spec, 1e-10).lambda_
            nu = qsd(spec, lam)
            assert ordering_check(qed(spec, lam, len(nu)), nu).is_lr_ordered


class TestHProcess:
    def test_stationary_is_qed(self, closed_form, closed_form_lambda):
        h = h_process(closed_form, closed_form_lambda)
        m = qed(closed_form, closed_form_lambda, h.n)
        np.testing.assert_allclose(h.stationary().probabilities(), m.probabilities(),
                                   rtol=0, atol=1e-10)
        assert h.pi_bar_residual < 1e-10

    def test_rates(self, closed_form, closed_form_lambda):
        h = h_process(closed_form, closed_form_lambda)
        b, d = h.rates(5)
        i = np.arange(1, 6)
        q = 3 * i / (i + 2)
        qn = 3 * (i + 1) / (i + 3)
        qp = 3 * (i - 1) / (i + 1)
        np.testing.assert_allclose(b, (i + 3) * qn / q, rtol=1e-12)
        np.testing.assert_allclose(d, (i + 1) ** 2 * qp / q, rtol=1e-12, atol=1e-15)
        assert d[0] == 0.0

    def test_entrance_persists(self, closed_form, closed_form_lambda):
        h = h_process(closed_form, closed_form_lambda)
        assert h.boundary.kind is BoundaryKind.ENTRANCE
        json.dumps(h.to_dict())

    def test_random_families(self, entrance_specs):
        for spec in entrance_specs[:5]:
            lam = decay_parameter(spec, 1e-10).lambda_
            h = h_process(spec, lam)
            m = qed(spec, lam, h.n)
            np.testing.assert_allclose(h.stationary().probabilities(), m.probabilities(),
                                       atol=1e-10)

    def test_reflecting_rejected(self, reflecting_primal):
        with pytest.raises(PreconditionFailed):
            h_process(reflecting_primal, 1.0)


class TestMonotonicity:
    def test_closed_form(self, closed_form, closed_form_lambda):
        cert = monotonicity_certificate(closed_form, closed_form_lambda, 30)
        assert cert.strictly_increasing
        assert cert.argmin == 1 and cert.minimum == pytest.approx(1.0)
        # Q_2 - Q_1 = 1/2, Q_3 - Q_2 = 3/10
        assert cert.gaps[:2] == pytest.approx((0.5, 0.3), rel=1e-12)
        assert max(cert.residuals) < 1e-10

    def test_gap_identity_holds_below_lambda(self, closed_form):
        # it follows from the recurrence for the bounded solution at any x
        cert = monotonicity_certificate(closed_form, 1.5, 10)
        assert cert.strictly_increasing and max(cert.residuals) < 1e-10

    def test_requires_two_states(self, closed_form):
        with pytest.raises(ValueError):
            monotonicity_certificate(closed_form, 2.0, 1)


class TestInvariance:
    def test_closed_form(self, closed_form, closed_form_lambda):
        r = invariance_residuals(closed_form, closed_form_lambda, 60)
        assert r["left"].max() < 1e-12
        assert r["right"].max() < 1e-12

    def test_wrong_lambda_leaves_residual(self, closed_form):
        r = invariance_residuals(closed_form, 2.1, 30)
        assert r["right"].max() > 1e-3

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_families(self, seed):
        spec = polynomial_entrance_spec(np.random.default_rng(seed))
        lam = decay_parameter(spec, 1e-10).lambda_
        r = invariance_residuals(spec, lam, 60)
        assert r["left"].max() < 1e-12 and r["right"].max() < 1e-12
        nu = qsd(spec, lam)
        assert 1 - 1e-10 <= nu.total() <= 1 + 4 * EPS


def test_potential_times_eigenfunction_is_qsd_shape(closed_form):
    pi = potential_coefficients(closed_form, 10).values()
    q = eigenfunction(closed_form, 2.0, 10).values
    # pi_i Q_i = 2(i+2)/(3(i+1)!) * 3i/(i+2) = 2 i/(i+1)!
    np.testing.assert_allclose(pi * q, 2 * nu_exact(range(1, 11)), rtol=1e-13)
