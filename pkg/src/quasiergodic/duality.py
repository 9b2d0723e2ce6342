"""Duality between a reflecting chain and an absorbed chain, and the eigentime identity.

A reflecting chain on ``0, 1, ...`` with rates ``(bt_i, dt_i)`` is paired
with the chain absorbed at 0 whose rates are ``b_i = dt_i`` and
``d_{i+1} = bt_i``.  Under this map

* ``pi_i = bt_0 / (dt_i pt_i)`` and ``1/(b_i pi_i) = pt_i / bt_0``;
* ``A = (Bt - 1)/bt_0``, ``B = bt_0 At``, ``R = St``, ``S = Rt - At``,

where ``pt`` and ``At..St`` belong to the reflecting chain.  When the
reflecting chain has an exit boundary, the expected passage time to
infinity ``Rt`` equals the sum of reciprocal spectrum points of the
absorbed chain (the eigentime identity).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .chain_model import (BirthDeathSpec, BoundaryKind, BoundarySeries, Convention,
                          boundary_series, classify_boundary, potential_coefficients)
from .errors import IdentityViolation, InvalidSpec, NotSummable, PreconditionFailed
from .spectral import eigenfunction, spectrum

__all__ = ["DualPair", "DualPolynomials", "EigentimeReport", "SummabilityReport",
           "dualize", "dual_polynomials", "eigentime_identity", "summability_check",
           "reflecting_polynomials"]

TRANSFER_TOL = 1e-8
ENTRYWISE_TOL = 1e-12
POLY_TOL = 1e-8
VALIDATION_TERMS = 2000


@dataclass(frozen=True, eq=False)
class DualPair:
    """A reflecting ``primal`` chain and its absorbed ``dual``.

    ``transfer`` maps each identity name to its residual (``None`` when
    the series involved are not all convergent) plus the verdicts seen.
    """

    primal: BirthDeathSpec
    dual: BirthDeathSpec
    transfer: dict = field(default_factory=dict)

    @property
    def b0(self) -> float:
        """Birth rate of the primal at 0, which is the dual's ``d_1``."""
        return float(self.primal.birth.values(0))


def _dual_rates(spec: BirthDeathSpec) -> BirthDeathSpec:
    if spec.convention is Convention.REFLECTING:
        return BirthDeathSpec(spec.death, spec.birth.shifted(-1), Convention.ABSORBED)
    return BirthDeathSpec(spec.death.shifted(1), spec.birth, Convention.REFLECTING)


def dualize(spec: BirthDeathSpec, *, validate: bool = True, n_check: int = 64,
            max_terms: int = VALIDATION_TERMS, tol: float = TRANSFER_TOL) -> DualPair:
    """Pair ``spec`` with its dual.

    A reflecting ``spec`` becomes the primal; an absorbed ``spec`` becomes
    the dual and the primal is recovered by the inverse map.

    Raises
    ------
    InvalidSpec
        If the convention is not one of the two supported.
    IdentityViolation
        If validation finds an entrywise or series transfer identity off.
    """
    if spec.convention is Convention.REFLECTING:
        primal, dual = spec, _dual_rates(spec)
    elif spec.convention is Convention.ABSORBED:
        primal, dual = _dual_rates(spec), spec
    else:
        raise InvalidSpec(f"unknown convention {spec.convention!r}")
    if not validate:
        return DualPair(primal, dual)
    transfer = transfer_residuals(primal, dual, n_check, max_terms)
    bad = [k for k, v in transfer.items()
           if isinstance(v, float) and not v <= (ENTRYWISE_TOL if k.startswith("entry") else tol)]
    if bad:
        raise IdentityViolation(f"duality transfer identities fail: "
                                + ", ".join(f"{k}={transfer[k]:.3g}" for k in bad))
    return DualPair(primal, dual, transfer)


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def transfer_residuals(primal, dual, n_check=64, max_terms=VALIDATION_TERMS):
    """Residuals of the entrywise and series transfer identities."""
    n = min(n_check, primal.available(n_check + 1) - 1, dual.available(n_check))
    b0 = float(primal.birth.values(0))
    log_pt = potential_coefficients(primal, n + 1).log_values  # pt_0 .. pt_n
    log_pi = potential_coefficients(dual, n).log_values        # pi_1 .. pi_n
    db, _ = dual.rates(n)
    dt = primal.death.values(np.arange(1, n + 1))
    # pi_i = bt_0 / (dt_i pt_i); 1/(b_i pi_i) = pt_i / bt_0
    entry_pi = np.abs(np.expm1(log_pi - (math.log(b0) - np.log(dt) - log_pt[1:])))
    entry_inv = np.abs(np.expm1(-(np.log(db) + log_pi) - (log_pt[1:] - math.log(b0))))
    out = {"entry_pi": float(entry_pi.max()), "entry_inv_bpi": float(entry_inv.max())}

    sp = boundary_series(primal, max_terms=max_terms)
    sd = boundary_series(dual, max_terms=max_terms)
    verdicts = {}

    def check(name, dual_est, value_fn, primal_ests):
        verdicts[name] = [dual_est.verdict.value] + [e.verdict.value for e in primal_ests]
        if dual_est.convergent and all(e.convergent for e in primal_ests):
            out[name] = float(_rel(dual_est.value, value_fn()))
        else:
            out[name] = None

    check("A=(Bt-1)/bt0", sd.A, lambda: (sp.B.value - 1.0) / b0, [sp.B])
    check("B=bt0*At", sd.B, lambda: b0 * sp.A.value, [sp.A])
    check("R=St", sd.R, lambda: sp.S.value, [sp.S])
    check("S=Rt-At", sd.S, lambda: sp.R.value - sp.A.value, [sp.R, sp.A])
    out["verdicts"] = verdicts
    return out


@dataclass(frozen=True, eq=False)
class DualPolynomials:
    """``Qt_1(x) .. Qt_n(x)`` with the independent routes used to compute them.

    ``values`` is the tail-sum route; ``routes`` holds every route and
    ``residuals`` the largest absolute disagreement of each with ``values``.
    """

    x: float
    values: np.ndarray
    routes: dict
    residuals: dict
    difference_residual: float

    @property
    def n(self):
        return len(self.values)

    def to_dict(self):
        return {"x": self.x, "values": [float(v) for v in self.values],
                "residuals": self.residuals,
                "difference_residual": self.difference_residual}


def reflecting_polynomials(spec: BirthDeathSpec, x: float, n: int) -> np.ndarray:
    """``R_0 .. R_{n-1}`` of a reflecting chain: ``R_0 = 1``, forward recurrence."""
    if spec.convention is not Convention.REFLECTING:
        raise PreconditionFailed("needs the reflecting convention")
    b, d = spec.rates(max(n - 1, 1))
    r = np.empty(n)
    r[0] = 1.0
    if n > 1:
        r[1] = (b[0] - x) / b[0]
    for k in range(1, n - 1):
        r[k + 1] = ((b[k] + d[k] - x) * r[k] - d[k] * r[k - 1]) / b[k]
    return r


def dual_polynomials(pair: DualPair, lam: float, n: int, tol: float = POLY_TOL,
                     reflecting_terms: int | None = None) -> DualPolynomials:
    """Reflecting-side polynomials at ``lam`` from the absorbed side's eigenfunction.

    Routes compared (absolute differences, all values lie in ``[0, 1]``):

    ``prefix``
        ``1 - (x/d_1) sum_{j<i} pi_j Q_j``.
    ``tail``
        ``(x/d_1) sum_{j>=i} pi_j Q_j``, equal to ``prefix`` when
        ``x`` is the decay parameter; accurate where ``prefix`` cancels.
    ``difference``
        ``(Q_i - Q_{i-1}) / pt_{i-1}``.
    ``reflecting``
        The reflecting chain's own recurrence, shifted one index; the first
        ``reflecting_terms`` (default all ``n``) are compared.

    Raises
    ------
    IdentityViolation
        If any route disagrees with ``tail`` by more than ``tol`` or the
        difference identity ``Qt_i - Qt_{i+1} = (x/d_1) pi_i Q_i`` fails.
    """
    dual, primal = pair.dual, pair.primal
    d1 = pair.b0
    # Deep enough that the tail sums have converged.
    depth = max(2 * n, n + 64)
    depth = dual.available(depth)
    q = eigenfunction(dual, lam, depth)
    log_theta = potential_coefficients(dual, depth).log_values + np.log(q.values)
    theta = np.exp(log_theta)
    suffix = np.exp(np.logaddexp.accumulate(log_theta[::-1])[::-1])
    prefix_sums = np.concatenate([[0.0], np.cumsum(theta[:n - 1])])

    tail = lam / d1 * suffix[:n]
    prefix = 1.0 - lam / d1 * prefix_sums
    qz = q.with_zero()
    log_pt = potential_coefficients(primal, n).log_values  # pt_0 .. pt_{n-1}
    difference = (qz[1:n + 1] - qz[:n]) * np.exp(-log_pt)
    m = n if reflecting_terms is None else min(n, reflecting_terms)
    reflecting = reflecting_polynomials(primal, lam, m)

    routes = {"tail": tail, "prefix": prefix, "difference": difference,
              "reflecting": reflecting}
    residuals = {k: float(np.max(np.abs(v - tail[:len(v)]))) for k, v in routes.items()
                 if k != "tail"}
    # Qt_i - Qt_{i+1} against (x/d_1) pi_i Q_i using the difference route.
    rhs = lam / d1 * theta[:n - 1]
    lhs = difference[:-1] - difference[1:]
    diff_res = float(np.max(np.abs(lhs - rhs))) if n > 1 else 0.0
    failed = {k: v for k, v in residuals.items() if not v <= tol}
    if failed or not diff_res <= tol:
        raise IdentityViolation(f"dual polynomial routes disagree: {failed}, "
                                f"difference identity residual {diff_res:.3g}")
    return DualPolynomials(float(lam), tail, routes, residuals, diff_res)


@dataclass(frozen=True)
class SummabilityReport:
    partial_sums: tuple
    bound: float
    last_term: float

    def to_dict(self):
        return {"partial_sums": list(self.partial_sums), "bound": self.bound,
                "last_term": self.last_term}


def summability_check(pair: DualPair, lam: float, n: int,
                      bound_depth: int = 4096) -> SummabilityReport:
    """Partial sums of ``sum_{i>=1} pt_{i-1} Qt_i(lam)^2`` against ``sup Q(lam)``.

    The supremum of the increasing ``Q(lam)`` is taken as its value
    ``bound_depth`` states out.
    """
    poly = dual_polynomials(pair, lam, n)
    log_pt = potential_coefficients(pair.primal, n).log_values
    terms = np.exp(log_pt + 2 * np.log(np.maximum(poly.values, 1e-300)))
    partial = np.cumsum(terms)
    depth = pair.dual.available(max(bound_depth, n))
    bound = float(np.max(eigenfunction(pair.dual, lam, depth).values))
    if np.any(partial > bound * (1 + 1e-12)):
        k = int(np.argmax(partial > bound * (1 + 1e-12))) + 1
        raise IdentityViolation(f"partial sum {partial[k - 1]!r} at n={k} exceeds {bound!r}")
    return SummabilityReport(tuple(map(float, partial)), bound, float(terms[-1]))


@dataclass(frozen=True)
class EigentimeReport:
    r_tilde: float
    series_alt: float
    spectral_sum: float
    partial_spectral_sum: float
    tail_estimate: float
    tail_bound: float
    k_max: int
    rel_errors: dict
    growth_exponent: float

    def to_dict(self):
        return {
            "r_tilde": self.r_tilde,
            "series_alt": self.series_alt,
            "spectral_sum": self.spectral_sum,
            "partial_spectral_sum": self.partial_spectral_sum,
            "tail_estimate": self.tail_estimate,
            "tail_bound": self.tail_bound,
            "k_max": self.k_max,
            "growth_exponent": self.growth_exponent,
            "rel_errors": self.rel_errors,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _power_tail(xi, k_max):
    """``sum_{k > k_max} 1/xi_k`` for ``xi_k ~ C k^p`` fitted on the last octave."""
    k_lo = k_max // 2
    p = math.log(xi[-1] / xi[k_lo - 1]) / math.log(k_max / k_lo)
    if p <= 1.0 + 1e-3:
        raise NotSummable(f"spectrum grows like k^{p:.3f}; reciprocal sum diverges")
    C = xi[-1] / k_max ** p
    # Midpoint integral comparison from k_max + 1/2.
    return (k_max + 0.5) ** (1 - p) / (C * (p - 1)), p


def _poly_tail(xi, k_max, degree, k_far=2 ** 20):
    """Tail from a least-squares polynomial in ``k`` fitted to the upper half."""
    k = np.arange(k_max // 2, k_max + 1, dtype=float)
    coef = np.polynomial.polynomial.polyfit(k / k_max, xi[k_max // 2 - 1:], degree)
    ks = np.arange(k_max + 1, k_far + 1, dtype=float)
    model = np.polynomial.polynomial.polyval(ks / k_max, coef)
    if np.any(model <= 0):
        return None
    lead = coef[-1] / k_max ** degree
    far = k_far ** (1 - degree) / (lead * (degree - 1)) if degree > 1 else math.inf
    return float(math.fsum(1.0 / model) + far)


def eigentime_identity(pair: DualPair, k_max: int = 200, tol: float = 1e-10, *,
                       max_terms: int = 10_000) -> EigentimeReport:
    """Three evaluations of the expected passage time to infinity.

    ``r_tilde`` sums the reflecting chain's series directly,
    ``series_alt = B/d_1 + S`` uses the absorbed chain's series, and
    ``spectral_sum`` is ``sum_{k<=k_max} 1/xi_k`` plus a tail from the
    observed growth of ``xi_k``.  ``tail_bound`` is the spread between a
    power-law and a polynomial tail model; ``tol`` is the relative
    convergence tolerance for each ``xi_k``.

    Raises
    ------
    PreconditionFailed
        If the primal boundary is not exit or the dual's ``B`` or ``S`` diverges.
    """
    if k_max < 16:
        raise ValueError("k_max must be at least 16")
    sd = boundary_series(pair.dual, max_terms=max_terms)
    if not (sd.B.convergent and sd.S.convergent):
        raise PreconditionFailed(
            f"dual series B ({sd.B.verdict.value}) and S ({sd.S.verdict.value}) must converge")
    sp = boundary_series(pair.primal, max_terms=max_terms)
    kind = classify_boundary(sp).kind
    if kind is not BoundaryKind.EXIT:
        raise PreconditionFailed(f"primal boundary is {kind.value}, not exit")
    r_tilde = sp.R.value
    alt = sd.B.value / pair.b0 + sd.S.value

    summary = spectrum(pair.dual, k_max, tol, assert_entrance=True)
    xi = np.asarray(summary.xi)
    partial = math.fsum(1.0 / xi)
    power_tail, p = _power_tail(xi, k_max)
    degree = max(2, int(math.ceil(p - 0.05)))
    poly_tail = _poly_tail(xi, k_max, degree)
    tail = poly_tail if poly_tail is not None else power_tail
    tail_bound = abs(power_tail - tail) if poly_tail is not None else power_tail
    spectral_sum = partial + tail
    rel = {
        "series_alt": _rel(alt, r_tilde),
        "spectral": _rel(spectral_sum, r_tilde),
        "spectral_bound": float(tail_bound / r_tilde),
    }
    return EigentimeReport(float(r_tilde), float(alt), float(spectral_sum), float(partial),
                           float(tail), float(tail_bound), int(k_max), rel, float(p))
