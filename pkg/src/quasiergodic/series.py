"""Convergence verdicts for positive series given in log domain.

The verdict combines three signals on the trailing window of terms:

* a ratio test whose limit is extrapolated from the window, giving a
  geometric tail majorant when the extrapolated ratio stays below one;
* a log-log slope of the terms, i.e. the power ``p`` in ``a_i ~ i^-p``;
  ``p > 1`` series are summed by Richardson extrapolation of partial sums
  in powers of ``1/M``, ``p <= 1`` (and non-vanishing terms) diverge;
* a cap on the partial sum.

Anything else is ``UNDETERMINED``; the heuristic never returns a
convergent verdict without an error estimate under the acceptance level.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericOverflow

__all__ = ["Verdict", "SeriesEstimate", "assess_series", "richardson_limit"]

RATIO_DELTA = 1e-3
POWER_DELTA = 0.05
# Richardson estimates are accepted as convergent values at this level
# even when the caller's tolerance is tighter; ``error`` keeps the truth.
ALGEBRAIC_ACCEPT = 1e-6
RICHARDSON_STEP = 1.5
RICHARDSON_ORDER = 6
LOG_CAP = math.log(1e300)


class Verdict(str, enum.Enum):
    CONVERGENT = "convergent"
    DIVERGENT = "divergent"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class SeriesEstimate:
    """Partial sum of a series plus a convergence verdict.

    ``value`` and ``error`` are only set for convergent series; ``value``
    includes the tail estimate, ``partial_sum`` does not.
    """

    partial_sum: float
    n_terms: int
    verdict: Verdict
    value: float | None = None
    error: float | None = None
    log_partial_sum: float = -math.inf
    method: str = ""

    @property
    def convergent(self):
        return self.verdict is Verdict.CONVERGENT

    @property
    def divergent(self):
        return self.verdict is Verdict.DIVERGENT

    def to_dict(self):
        return {
            "partial_sum": self.partial_sum,
            "n_terms": self.n_terms,
            "verdict": self.verdict.value,
            "value": self.value,
            "error": self.error,
            "method": self.method,
        }

    @classmethod
    def forced(cls, verdict, log_terms, method):
        """Verdict implied by another series (e.g. ``A = inf`` forces ``R = inf``)."""
        lps = _log_partial(log_terms)
        return cls(_exp(lps), len(log_terms), verdict, log_partial_sum=lps,
                   method=method)


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def _log_partial(log_terms):
    if len(log_terms) == 0:
        return -math.inf
    return float(np.logaddexp.reduce(log_terms))


def richardson_limit(partial_sums, M, exponent, order=RICHARDSON_ORDER,
                     step=RICHARDSON_STEP, min_terms=16):
    """Extrapolate ``P(M) = L + sum_k c_k M^-(exponent+k)`` to ``M -> inf``.

    Parameters
    ----------
    partial_sums : ndarray
        ``partial_sums[m-1]`` is the sum of the first ``m`` terms.
    M : int
        Largest truncation used.
    exponent : float
        Leading power of the remainder (``p - 1`` for terms ``~ i^-p``).

    Returns
    -------
    (limit, error)
        ``error`` is the change between the two highest orders.
    """
    sizes = []
    k = 0
    while True:
        m = int(round(M / step ** k))
        if m < min_terms or (sizes and m == sizes[-1]):
            break
        sizes.append(m)
        k += 1
        if len(sizes) > order:
            break
    if len(sizes) < 3:
        return None, math.inf
    sizes = np.array(sizes, dtype=float)
    values = np.asarray(partial_sums)[sizes.astype(int) - 1]
    estimates = []
    for n in (len(sizes) - 1, len(sizes)):
        s = sizes[:n]
        cols = [np.ones(n)] + [s ** -(exponent + j) for j in range(n - 1)]
        A = np.column_stack(cols)
        # Column scaling keeps the Vandermonde-like system well conditioned.
        scale = np.abs(A).max(axis=0)
        coef = np.linalg.solve(A / scale, values[:n])
        estimates.append(coef[0] / scale[0])
    return float(estimates[-1]), float(abs(estimates[-1] - estimates[-2]))


def assess_series(log_terms, tol=1e-10, log_cap=LOG_CAP, window=None):
    """Sum a positive series and judge whether it converges.

    Parameters
    ----------
    log_terms : array_like
        Natural logs of the terms (``-inf`` for zero terms).
    tol : float
        Relative tolerance demanded of a geometric tail bound.
    log_cap : float
        Log of the partial-sum cap beyond which the series is divergent.
    window : int, optional
        Trailing window length; defaults to ``max(16, M // 4)``.
    """
    L = np.asarray(log_terms, dtype=float)
    if np.any(np.isnan(L)) or np.any(L == np.inf):
        raise NumericOverflow("non-finite term in log-domain series")
    M = len(L)
    lps = _log_partial(L)
    partial = _exp(lps)

    def result(verdict, value=None, error=None, method=""):
        return SeriesEstimate(partial, M, verdict, value, error, lps, method)

    if M < 16:
        return result(Verdict.UNDETERMINED, method="too few terms")
    if np.all(L[M // 2:] == -np.inf):
        return result(Verdict.CONVERGENT, partial, 0.0, "terminating")
    if np.any(L[M // 2:] == -np.inf):
        return result(Verdict.UNDETERMINED, method="intermittent zero terms")

    W = window or max(16, M // 4)
    W = min(W, M - 1)
    tail = L[M - W:]
    r = np.diff(tail)
    half = len(r) // 2
    ia = (M - W) + 0.5 * half + 1.0
    ib = (M - W) + half + 0.5 * (len(r) - half) + 1.0
    ra = float(np.mean(r[:half]))
    rb = float(np.mean(r[half:]))
    r_inf = (rb * ib - ra * ia) / (ib - ia)
    r_end = float(np.max(r[half:]))

    # Growing or non-vanishing terms.
    if ra >= 0 and rb >= 0 or lps > log_cap:
        return result(Verdict.DIVERGENT, method="non-vanishing terms"
                      if lps <= log_cap else "partial sum cap")

    q_log = max(r_end, r_inf)
    if q_log < math.log1p(-RATIO_DELTA):
        q = math.exp(q_log)
        log_bound = L[-1] + q_log - math.log1p(-q)
        bound = _exp(log_bound)
        if log_bound - lps <= math.log(tol):
            return result(Verdict.CONVERGENT, partial, bound, "ratio test")
        return result(Verdict.UNDETERMINED, method="ratio test: tail too large")

    # Power-law decay a_i ~ i^-p, from slopes on two adjacent octaves.
    i1, i2, i3 = M // 4, M // 2, M
    p_hi = -(L[i3 - 1] - L[i2 - 1]) / math.log(i3 / i2)
    p_lo = -(L[i2 - 1] - L[i1 - 1]) / math.log(i2 / i1)
    if abs(p_hi - p_lo) > 0.25 * max(1.0, abs(p_hi)):
        return result(Verdict.UNDETERMINED, method="unstable power-law slope")
    if p_hi <= 1.0 + POWER_DELTA:
        if p_hi < 1.0 - POWER_DELTA or lps > 0.5 * log_cap or p_lo <= 1.0 + POWER_DELTA:
            return result(Verdict.DIVERGENT, method=f"power-law terms, p={p_hi:.3f}")
        return result(Verdict.UNDETERMINED, method="borderline power law")

    p = round(p_hi) if abs(p_hi - round(p_hi)) < POWER_DELTA else p_hi
    shift = float(L.max())
    partial_sums = np.cumsum(np.exp(L - shift))
    limit, err = richardson_limit(partial_sums, M, p - 1.0)
    if limit is None:
        return result(Verdict.UNDETERMINED, method="too few terms for extrapolation")
    limit *= math.exp(shift)
    err *= math.exp(shift)
    accept = max(tol, ALGEBRAIC_ACCEPT)
    if limit > 0 and err <= accept * limit and limit >= partial * (1 - accept):
        return result(Verdict.CONVERGENT, limit, err, f"richardson, p={p:g}")
    return result(Verdict.UNDETERMINED, method="richardson did not settle")
