"""Quasi-stationary and quasi-ergodic laws of an absorbing birth-death chain.

With ``Q_i = Q_i(lambda)`` the bounded eigenfunction (``Q_1 = 1``) and
``pi`` the potential coefficients:

* the quasi-stationary law is ``nu_i ∝ pi_i Q_i``;
* the quasi-ergodic law is ``m_i ∝ pi_i Q_i^2``;
* the conditioned-to-survive (h-) process is a birth-death chain with
  rates ``b_i Q_{i+1}/Q_i`` and ``d_i Q_{i-1}/Q_i`` whose potential
  coefficients are ``pi_i Q_i^2``.

Both laws are normalised by their truncated sums.  The identity
``lambda * sum pi_i Q_i = d_1 Q_1`` is kept as a separate diagnostic so a
poor ``lambda`` is reported rather than absorbed into the normaliser.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chain_model import (BirthDeathSpec, BoundaryClass, BoundarySeries, Convention,
                          RateFunction, boundary_series, classify_boundary,
                          potential_coefficients)
from .errors import (DegenerateRatio, IdentityViolation, NotSummable, PreconditionFailed,
                     SpectralFailure)
from .logweights import LogWeightVector
from .spectral import Eigenfunction, eigenfunction

__all__ = ["DistributionVector", "HProcessSpec", "OrderingResult", "MonotonicityCertificate",
           "qsd", "qed", "h_process", "ordering_check", "monotonicity_certificate",
           "invariance_residuals", "eigenvector_weights"]

DROP_NATS = 40.0
IDENTITY_TOL = 1e-4
MAX_STATES = 2 ** 16
# Trailing ratios used for the geometric tail majorant.
_TAIL_WINDOW = 8


@dataclass(frozen=True, eq=False)
class DistributionVector:
    """A probability vector on states ``1..N`` held as unnormalised log weights.

    Attributes
    ----------
    weights : LogWeightVector
        Unnormalised weights.
    log_normalizer : float
        Log of their sum over the truncation range.
    truncation_error_bound : float
        Upper bound on the discarded mass relative to the retained mass.
    diagnostics : dict
        Identity residuals and provenance; JSON-serialisable.
    """

    weights: LogWeightVector
    log_normalizer: float
    truncation_error_bound: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_log_weights(cls, log_w, start=1, tail_bound=None, diagnostics=None):
        w = LogWeightVector(np.asarray(log_w, dtype=float), start)
        bound = _tail_bound(w.log_values) if tail_bound is None else tail_bound
        return cls(w, w.log_total(), bound, dict(diagnostics or {}))

    def __len__(self):
        return len(self.weights)

    @property
    def states(self):
        return self.weights.states

    def log_probabilities(self):
        return self.weights.log_values - self.log_normalizer

    def probabilities(self):
        return np.exp(self.log_probabilities())

    def __getitem__(self, state):
        return float(math.exp(self.weights.log_values[state - self.weights.start]
                              - self.log_normalizer))

    def total(self):
        return math.fsum(self.probabilities())

    def to_csv(self, path=None):
        p = self.probabilities()
        cumulative = np.cumsum(p)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state", "weight", "cumulative"])
        for s, w, c in zip(self.states, p, cumulative):
            writer.writerow([int(s), repr(float(w)), repr(float(c))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        return {
            "states": [int(s) for s in self.states],
            "weights": [float(v) for v in self.probabilities()],
            "log_normalizer": self.log_normalizer,
            "truncation_error_bound": self.truncation_error_bound,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _tail_bound(log_w):
    """Geometric majorant for the mass past the end, relative to the total."""
    n = len(log_w)
    if n < 2:
        return math.inf
    steps = np.diff(log_w[-min(n, _TAIL_WINDOW + 1):])
    q_log = float(np.max(steps))
    if not q_log < 0:
        return math.inf
    log_tail = log_w[-1] + q_log - math.log(-math.expm1(q_log))
    total = float(np.logaddexp.reduce(log_w))
    return math.exp(min(log_tail - total, 700.0))


def _check_positive(q: Eigenfunction):
    if not np.all(q.values > 0):
        k = int(np.argmax(~(q.values > 0))) + 1
        raise SpectralFailure(f"Q_{k}(lambda) = {q.values[k - 1]!r} is not positive; "
                              "lambda overshoots the decay parameter")


def _auto_length(spec, lam, power, drop_nats, max_states):
    """Smallest ``n`` past the peak where ``log pi_i + power log Q_i`` has dropped ``drop_nats``."""
    n = 64
    while True:
        n = spec.available(n)
        q = eigenfunction(spec, lam, n)
        _check_positive(q)
        lw = potential_coefficients(spec, n).log_values + power * np.log(q.values)
        peak = int(np.argmax(lw))
        below = np.nonzero(lw[peak:] < lw[peak] - drop_nats)[0]
        if len(below):
            return peak + int(below[0]) + 1
        if n >= max_states or spec.available(2 * n) <= n:
            raise NotSummable(f"weights do not drop {drop_nats} nats within {n} states")
        n *= 2


def eigenvector_weights(spec: BirthDeathSpec, lam: float, n: int,
                        q: Eigenfunction | None = None):
    """``(log pi_i, Q_i)`` for ``i = 1..n``; ``q`` overrides the computed eigenfunction."""
    if q is None:
        q = eigenfunction(spec, lam, n)
    elif q.n < n:
        raise PreconditionFailed(f"eigenfunction has {q.n} values, need {n}")
    _check_positive(q)
    return potential_coefficients(spec, n).log_values, q.values[:n]


def _identity_residual(spec, lam, log_pi, qv):
    """``|lambda sum pi_i Q_i - d_1 Q_1| / (d_1 Q_1)`` over the given range plus its tail."""
    log_theta = log_pi + np.log(qv)
    tail = _tail_bound(log_theta)
    total = math.exp(float(np.logaddexp.reduce(log_theta)))
    d1 = float(spec.death.values(1))
    target = d1 * qv[0]
    return abs(lam * total - target) / target, tail


def _distribution(spec, lam, n, power, eigen, drop_nats, identity_tol, kind):
    if spec.convention is not Convention.ABSORBED:
        raise PreconditionFailed(f"{kind} needs the absorbed-at-zero convention")
    if lam <= 0:
        raise PreconditionFailed("lambda must be positive")
    if n is None:
        n = _auto_length(spec, lam, power, drop_nats, MAX_STATES)
    if n < 1:
        raise ValueError("n must be at least 1")
    log_pi, qv = eigenvector_weights(spec, lam, n, eigen)
    # The identity needs the full mass of pi Q, not just the requested range.
    n_id = _auto_length(spec, lam, 1, drop_nats, MAX_STATES)
    if n_id <= n:
        residual, theta_tail = _identity_residual(spec, lam, log_pi[:n_id], qv[:n_id])
    else:
        q_id = eigen if eigen is not None and eigen.n >= n_id else None
        residual, theta_tail = _identity_residual(
            spec, lam, *eigenvector_weights(spec, lam, n_id, q_id))
    diagnostics = {
        "kind": kind,
        "lambda": float(lam),
        "n": int(n),
        "identity_residual": float(residual),
        "identity_tail_bound": float(theta_tail),
    }
    if not residual <= identity_tol:
        raise NotSummable(
            f"lambda * sum pi Q differs from d_1 by relative {residual:.3g} "
            f"(> {identity_tol:g}); lambda is off the decay parameter or the "
            "boundary is not entrance")
    log_w = log_pi + power * np.log(qv)
    return DistributionVector.from_log_weights(log_w, 1, diagnostics=diagnostics)


def qsd(spec: BirthDeathSpec, lam: float, n: int | None = None, *,
        eigen: Eigenfunction | None = None, drop_nats: float = DROP_NATS,
        identity_tol: float = IDENTITY_TOL) -> DistributionVector:
    """Quasi-stationary law ``nu_i ∝ pi_i Q_i(lambda)`` on states ``1..n``.

    Parameters
    ----------
    spec : BirthDeathSpec
    lam : float
        Decay parameter, typically from ``decay_parameter``.
    n : int, optional
        Truncation; by default the weights are cut ``drop_nats`` below their peak.
    eigen : Eigenfunction, optional
        Precomputed (possibly rescaled) ``Q(lambda)``.
    identity_tol : float
        Allowed relative residual of ``lambda sum pi Q = d_1 Q_1``.

    Raises
    ------
    NotSummable
        If the identity residual exceeds ``identity_tol``.
    SpectralFailure
        If some ``Q_i(lambda) <= 0``.
    """
    return _distribution(spec, lam, n, 1, eigen, drop_nats, identity_tol, "qsd")


def qed(spec: BirthDeathSpec, lam: float, n: int | None = None, *,
        eigen: Eigenfunction | None = None, drop_nats: float = DROP_NATS,
        identity_tol: float = IDENTITY_TOL) -> DistributionVector:
    """Quasi-ergodic law ``m_i ∝ pi_i Q_i(lambda)^2``; arguments as ``qsd``."""
    return _distribution(spec, lam, n, 2, eigen, drop_nats, identity_tol, "qed")


@dataclass(frozen=True, eq=False)
class HProcessSpec:
    """The chain conditioned never to be absorbed.

    ``spec`` is a reflecting-convention spec whose index ``k`` is state
    ``k + 1`` of the original chain; ``rates`` and ``stationary`` use the
    original labels.
    """

    spec: BirthDeathSpec
    base: BirthDeathSpec
    lam: float
    eigen: Eigenfunction
    log_pi_bar: LogWeightVector
    series: BoundarySeries
    boundary: BoundaryClass
    pi_bar_residual: float
    n: int

    def rates(self, n: int | None = None):
        """``(b_bar, d_bar)`` at states ``1..n`` (``d_bar_1 = 0``)."""
        return self.spec.rates(self.n if n is None else n)

    @property
    def n_tabulated(self):
        return int(self.spec.last_state()) + 1

    def stationary(self) -> DistributionVector:
        return DistributionVector.from_log_weights(
            self.log_pi_bar.log_values, 1,
            diagnostics={"kind": "h-process stationary", "lambda": self.lam})

    def to_dict(self):
        b, d = self.rates()
        return {
            "lambda": self.lam,
            "n": self.n,
            "birth": [float(v) for v in b],
            "death": [float(v) for v in d],
            "pi_bar": [float(v) for v in self.log_pi_bar.values()],
            "pi_bar_residual": self.pi_bar_residual,
            "boundary": self.boundary.kind.value,
            "series": self.series.to_dict(),
        }


def h_process(spec: BirthDeathSpec, lam: float, n: int | None = None, *,
              series_terms: int = 256, eigen: Eigenfunction | None = None,
              drop_nats: float = DROP_NATS, pi_tol: float = 1e-10) -> HProcessSpec:
    """Rates, potential coefficients and boundary series of the h-process.

    Rates are tabulated far enough past ``n`` for the boundary series to
    be assessed over ``max(n, series_terms)`` terms.

    Raises
    ------
    SpectralFailure
        If some ``Q_i(lambda) <= 0``.
    IdentityViolation
        If the recursively built potential coefficients differ from
        ``pi_i Q_i^2`` by more than ``pi_tol``.
    """
    if spec.convention is not Convention.ABSORBED:
        raise PreconditionFailed("h_process needs the absorbed-at-zero convention")
    if n is None:
        n = _auto_length(spec, lam, 2, drop_nats, MAX_STATES)
    terms = max(n, series_terms)
    n_tab = spec.available(2 * terms + 2)
    if eigen is None:
        eigen = eigenfunction(spec, lam, n_tab + 1)
    if eigen.n < n_tab + 1:
        n_tab = eigen.n - 1
    _check_positive(eigen)
    q = eigen.with_zero()[:n_tab + 2]
    b, d = spec.rates(n_tab)
    b_bar = b * q[2:n_tab + 2] / q[1:n_tab + 1]
    d_bar = d * q[0:n_tab] / q[1:n_tab + 1]
    # Reflecting index k <-> h-state k+1; death table begins at index 1.
    hspec = BirthDeathSpec(RateFunction.from_table(b_bar, start=0),
                           RateFunction.from_table(d_bar[1:], start=1),
                           Convention.REFLECTING)
    log_pi_bar = potential_coefficients(hspec, n).log_values
    expected = potential_coefficients(spec, n).log_values + 2 * np.log(q[1:n + 1] / q[1])
    residual = float(np.max(np.abs(np.expm1(log_pi_bar - expected))))
    if not residual <= pi_tol:
        raise IdentityViolation(f"pi_bar differs from Q^2 pi by relative {residual:.3g}")
    series = boundary_series(hspec, max_terms=max(16, min(terms, hspec.available(terms))))
    return HProcessSpec(hspec, spec, float(lam), eigen,
                        LogWeightVector(log_pi_bar, 1), series,
                        classify_boundary(series), residual, int(n))


@dataclass(frozen=True)
class OrderingResult:
    is_lr_ordered: bool
    ratio: tuple
    states: tuple

    def to_dict(self):
        return {"is_lr_ordered": self.is_lr_ordered, "states": list(self.states),
                "ratio": list(self.ratio)}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def ordering_check(m: DistributionVector, nu: DistributionVector,
                   rtol: float = 1e-12) -> OrderingResult:
    """Likelihood-ratio order test: is ``m_i / nu_i`` nondecreasing in ``i``?

    Steps down by less than ``rtol`` in relative terms count as ties.
    """
    if len(m) != len(nu) or m.weights.start != nu.weights.start:
        raise PreconditionFailed("distributions must cover the same states")
    if np.any(nu.weights.log_values == -np.inf):
        k = int(np.argmax(nu.weights.log_values == -np.inf)) + nu.weights.start
        raise DegenerateRatio(f"zero reference weight at state {k}")
    log_ratio = m.log_probabilities() - nu.log_probabilities()
    ordered = bool(np.all(np.diff(log_ratio) >= math.log1p(-rtol)))
    return OrderingResult(ordered, tuple(map(float, np.exp(log_ratio))),
                          tuple(int(s) for s in m.states))


@dataclass(frozen=True)
class MonotonicityCertificate:
    """Both sides of ``Q_{k+1} - Q_k = lambda/(b_k pi_k) sum_{i>k} pi_i Q_i``."""

    gaps: tuple
    tail_side: tuple
    residuals: tuple
    minimum: float
    argmin: int

    @property
    def strictly_increasing(self):
        return all(g > 0 for g in self.gaps)

    def to_dict(self):
        return {"gaps": list(self.gaps), "tail_side": list(self.tail_side),
                "residuals": list(self.residuals), "minimum": self.minimum,
                "argmin": self.argmin, "strictly_increasing": self.strictly_increasing}


def monotonicity_certificate(spec: BirthDeathSpec, lam: float, n: int, tol: float = 1e-8,
                             drop_nats: float = DROP_NATS) -> MonotonicityCertificate:
    """Certify ``Q(lambda)`` increasing with minimum ``Q_1`` for ``k = 1..n-1``.

    Tail sums run until ``pi_i Q_i`` has dropped ``drop_nats`` below its value at ``n``.

    Raises
    ------
    IdentityViolation
        If a residual exceeds ``tol`` or a gap is not positive.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    depth = 2 * n
    while True:
        depth = spec.available(depth)
        q = eigenfunction(spec, lam, depth)
        _check_positive(q)
        log_theta = potential_coefficients(spec, depth).log_values + np.log(q.values)
        if log_theta[-1] < log_theta[n - 1] - drop_nats or depth >= MAX_STATES \
                or spec.available(2 * depth) <= depth:
            break
        depth *= 2
    qv = q.values
    b, _ = spec.rates(n - 1)
    log_pi = potential_coefficients(spec, n - 1).log_values
    # suffix[k] = log sum_{i >= k} theta_i (0-based)
    suffix = np.logaddexp.accumulate(log_theta[::-1])[::-1]
    gaps = qv[1:n] - qv[:n - 1]
    tail_side = lam * np.exp(suffix[1:n] - np.log(b) - log_pi)
    residuals = np.abs(gaps - tail_side) / np.abs(tail_side)
    if not np.all(residuals <= tol):
        k = int(np.argmax(residuals)) + 1
        raise IdentityViolation(f"gap identity fails at k={k}: residual {residuals[k - 1]:.3g}")
    if not np.all(gaps > 0):
        raise IdentityViolation("Q(lambda) is not strictly increasing")
    k_min = int(np.argmin(qv[:n])) + 1
    return MonotonicityCertificate(tuple(map(float, gaps)), tuple(map(float, tail_side)),
                                   tuple(map(float, residuals)), float(qv[k_min - 1]), k_min)


def invariance_residuals(spec: BirthDeathSpec, lam: float, n: int,
                         eigen: Eigenfunction | None = None):
    """Row residuals of ``theta L = -lambda theta`` and ``L Q = -lambda Q``.

    ``L`` is the generator killed at 0 and ``theta_i = pi_i Q_i``.  Each
    residual is relative to the largest term in its row; rows ``2..n-1``
    (left) and ``1..n-1`` (right) are reported.
    """
    q = eigen if eigen is not None else eigenfunction(spec, lam, n + 1)
    q0 = np.concatenate([[0.0], q.values[:n + 1]])
    b, d = spec.rates(n + 1)
    log_pi = potential_coefficients(spec, n + 1).log_values

    right = np.empty(n - 1)
    for k in range(n - 1):
        i = k + 1
        terms = (b[k] * q0[i + 1], -(b[k] + d[k]) * q0[i], d[k] * q0[i - 1], lam * q0[i])
        right[k] = abs(math.fsum(terms)) / max(abs(t) for t in terms)

    left = np.empty(max(n - 2, 0))
    for k in range(1, n - 1):
        # column k (state k+1), scaled by 1/pi_{k+1} to stay in range
        rel = np.exp(log_pi[k - 1:k + 2] - log_pi[k])
        theta = rel * q0[k:k + 3]
        terms = (theta[0] * b[k - 1], -theta[1] * (b[k] + d[k]),
                 theta[2] * d[k + 1], lam * theta[1])
        left[k - 1] = abs(math.fsum(terms)) / max(abs(t) for t in terms)
    return {"left": left, "right": right}
