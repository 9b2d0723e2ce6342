"""Birth-death polynomials, their zeros, and the leading spectrum.

``Q_0 = 0``, ``Q_1 = 1`` and
``b_i Q_{i+1} - (b_i + d_i) Q_i + d_i Q_{i-1} = -x Q_i``.
The zeros of ``Q_i`` are the eigenvalues of the ``(i-1) x (i-1)``
symmetric tridiagonal matrix with diagonal ``b_j + d_j`` and
off-diagonal ``-sqrt(b_j d_{j+1})``.

Forward evaluation of the recurrence is what the polynomial table
exposes, but at ``x = lambda`` (entrance boundary) the bounded
eigenfunction is the recessive solution and forward rounding errors are
amplified by the dominant, factorially growing one.  ``eigenfunction``
therefore evaluates ``Q(lambda)`` by backward recurrence from a deep
start, which converges onto the bounded solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigvalsh_tridiagonal
from scipy.optimize import brentq

from .chain_model import (BirthDeathSpec, BoundaryKind, Convention, boundary_series,
                          classify_boundary)
from .errors import PreconditionFailed, SpectralFailure, ToleranceNotMet

__all__ = ["PolynomialTable", "SpectralSummary", "Eigenfunction",
           "eval_polynomials", "polynomial_zeros", "jacobi_matrix",
           "truncated_eigenvalues", "decay_parameter", "spectrum",
           "eigenfunction", "boundary_value"]

N_START = 32
N_CAP = 2 ** 16
SOLVER_TOL = 1e-10
_RESCALE = 1e150


@dataclass(frozen=True, eq=False)
class PolynomialTable:
    """``Q_0(x) .. Q_n(x)`` as sign and log-magnitude.

    ``sign`` is 0 where ``Q_i(x)`` is exactly zero.
    """

    x: float
    sign: np.ndarray
    log_abs: np.ndarray
    spec: BirthDeathSpec = field(repr=False)

    @property
    def n(self):
        return len(self.sign) - 1

    def values(self):
        """``Q_1 .. Q_n`` as floats (may overflow to ``inf``)."""
        with np.errstate(over="ignore"):
            return self.sign[1:] * np.exp(self.log_abs[1:])

    def residuals(self):
        """Recurrence residual at ``i = 1 .. n-1``, relative to the largest term."""
        n = self.n
        if n < 2:
            return np.zeros(0)
        b, d = self.spec.rates(n - 1)
        la = self.log_abs
        sg = self.sign
        out = np.empty(n - 1)
        for k in range(n - 1):
            i = k + 1
            ref = max(la[i - 1], la[i], la[i + 1])
            q = [sg[j] * math.exp(la[j] - ref) if sg[j] else 0.0 for j in (i - 1, i, i + 1)]
            terms = (b[k] * q[2], -(b[k] + d[k]) * q[1], d[k] * q[0], self.x * q[1])
            scale = max(abs(t) for t in terms)
            out[k] = abs(math.fsum(terms)) / scale if scale else 0.0
        return out


def eval_polynomials(spec: BirthDeathSpec, x: float, n: int) -> PolynomialTable:
    """Forward recurrence for ``Q_0 .. Q_n`` at ``x`` in sign/log form.

    Parameters
    ----------
    spec : BirthDeathSpec
        Must use the absorbed convention.
    x : float
    n : int
        Highest polynomial degree + 1 to evaluate (``n >= 1``).
    """
    _require_absorbed(spec)
    if n < 1:
        raise ValueError("n must be at least 1")
    b, d = spec.rates(max(n - 1, 1))
    sign = np.zeros(n + 1, dtype=np.int8)
    log_abs = np.full(n + 1, -np.inf)
    sign[1], log_abs[1] = 1, 0.0
    prev, cur, scale = 0.0, 1.0, 0.0
    for k in range(n - 1):
        nxt = ((b[k] + d[k] - x) * cur - d[k] * prev) / b[k]
        prev, cur = cur, nxt
        if abs(cur) > _RESCALE:
            prev /= _RESCALE
            cur /= _RESCALE
            scale += math.log(_RESCALE)
        sign[k + 2] = np.sign(cur)
        log_abs[k + 2] = math.log(abs(cur)) + scale if cur else -np.inf
    return PolynomialTable(float(x), sign, log_abs, spec)


def _require_absorbed(spec):
    if spec.convention is not Convention.ABSORBED:
        raise PreconditionFailed("operation needs the absorbed-at-zero convention")


def jacobi_matrix(spec: BirthDeathSpec, size: int):
    """Diagonal and off-diagonal of the symmetrised ``size x size`` truncation."""
    _require_absorbed(spec)
    b, d = spec.rates(size)
    d_next = spec.death_next(size - 1) if size > 1 else np.zeros(0)
    return b + d, -np.sqrt(b[:-1] * d_next)


def truncated_eigenvalues(spec: BirthDeathSpec, size: int, k: int | None = None,
                          solver_tol: float = SOLVER_TOL):
    """Smallest ``k`` eigenvalues (all if ``None``) of the ``size`` truncation."""
    diag, off = jacobi_matrix(spec, size)
    k = size if k is None else min(k, size)
    try:
        if k == size:
            w = eigvalsh_tridiagonal(diag, off)
        else:
            w = eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, k - 1),
                                     lapack_driver="stebz", tol=solver_tol)
    except (LinAlgError, ValueError) as exc:
        raise SpectralFailure(f"tridiagonal eigensolver failed: {exc}") from exc
    return np.asarray(w, dtype=float)


def _noise(diag, off):
    return 16 * np.finfo(float).eps * (np.max(np.abs(diag)) + 2 * np.max(np.abs(off), initial=0))


def polynomial_zeros(spec: BirthDeathSpec, i: int):
    """Ascending zeros ``x_{i,1} < ... < x_{i,i-1}`` of ``Q_i``."""
    if i < 2:
        raise ValueError("Q_i has zeros only for i >= 2")
    w = truncated_eigenvalues(spec, i - 1)
    if np.any(w <= 0) or np.any(np.diff(w) <= 0):
        raise SpectralFailure(f"zeros of Q_{i} are not positive and simple")
    return w


@dataclass(frozen=True)
class SpectralSummary:
    """Decay parameter and leading spectrum points with their audit trail.

    ``witness`` holds the smallest truncated zero for each size in
    ``truncation_sizes``; ``converged``/``achieved_tol`` are per eigenvalue.
    """

    lambda_: float
    xi: tuple
    truncation_sizes: tuple
    witness: tuple
    converged: tuple
    achieved_tol: tuple
    refined: bool = False

    def to_dict(self):
        return {
            "lambda": self.lambda_,
            "xi": list(self.xi),
            "truncation_sizes": list(self.truncation_sizes),
            "witness": list(self.witness),
            "converged": list(self.converged),
            "achieved_tol": list(self.achieved_tol),
            "refined": self.refined,
        }


def _assert_entrance(spec, assert_entrance):
    if assert_entrance:
        return
    kind = classify_boundary(boundary_series(spec)).kind
    if kind is not BoundaryKind.ENTRANCE:
        raise PreconditionFailed(f"infinity is classified {kind.value}, not entrance")


def decay_parameter(spec: BirthDeathSpec, tol: float = 1e-6, *, assert_entrance=False,
                    n_start=N_START, n_cap=N_CAP, solver_tol=SOLVER_TOL,
                    refine=True) -> SpectralSummary:
    """``lambda = lim x_{i,1}`` by doubling the truncation.

    Stops when successive smallest zeros differ by at most ``tol``.  With
    ``refine`` the converged value is polished to a root of the
    backward-recurrence boundary value, which is accurate to rounding;
    the refinement is kept only if it lies within ``tol`` of the
    truncation estimate.

    Raises
    ------
    PreconditionFailed
        If infinity is not an entrance boundary (skip with ``assert_entrance``).
    SpectralFailure
        If the witness sequence increases beyond rounding noise.
    ToleranceNotMet
        If the cap is reached first; carries the best estimate.
    """
    _require_absorbed(spec)
    _assert_entrance(spec, assert_entrance)
    # The eigensolver must resolve finer than the truncation test.
    solver_tol = min(solver_tol, 0.1 * tol)
    sizes, witness = [], []
    N = n_start
    while True:
        if spec.available(N) < N:
            raise ToleranceNotMet("spec table too short for truncation doubling",
                                  witness[-1] if witness else None)
        diag, off = jacobi_matrix(spec, N)
        x = truncated_eigenvalues(spec, N, 1, solver_tol)[0]
        if witness and x > witness[-1] + _noise(diag, off) + solver_tol:
            raise SpectralFailure(
                f"smallest zero increased from {witness[-1]!r} to {x!r} at N={N}")
        sizes.append(N)
        witness.append(float(x))
        if len(witness) >= 2 and abs(witness[-1] - witness[-2]) <= tol:
            break
        if 2 * N > n_cap:
            raise ToleranceNotMet(f"truncation cap {n_cap} reached", witness[-1])
        N *= 2
    lam = witness[-1]
    drift = abs(witness[-1] - witness[-2])
    refined = False
    if refine:
        polished = _refine_root(spec, lam, max(tol, 1e-9), sizes[-1])
        if polished is not None and abs(polished - lam) <= tol:
            lam, refined = polished, True
    return SpectralSummary(lam, (lam,), tuple(sizes), tuple(witness), (True,),
                           (drift,), refined)


def spectrum(spec: BirthDeathSpec, k: int, tol: float = 1e-8, *, assert_entrance=False,
             n_cap=N_CAP, solver_tol=0.0) -> SpectralSummary:
    """``xi_1 .. xi_k``, each converged by truncation doubling.

    ``tol`` is relative: ``|x^(N)_j - x^(2N)_j| <= tol * max(1, x_j)``.
    """
    _require_absorbed(spec)
    if k < 1:
        raise ValueError("k must be at least 1")
    _assert_entrance(spec, assert_entrance)
    N = max(N_START, 2 * k)
    sizes, witness = [], []
    prev = None
    while True:
        if spec.available(N) < N:
            raise ToleranceNotMet("spec table too short for truncation doubling", prev)
        x = truncated_eigenvalues(spec, N, k, solver_tol)
        sizes.append(N)
        witness.append(float(x[0]))
        if prev is not None:
            drift = np.abs(x - prev) / np.maximum(1.0, np.abs(x))
            if np.all(drift <= tol):
                break
        if 2 * N > n_cap:
            raise ToleranceNotMet(f"truncation cap {n_cap} reached", x)
        prev = x
        N *= 2
    if np.any(np.diff(x) <= 0):
        raise SpectralFailure("leading spectrum is not strictly increasing")
    return SpectralSummary(float(x[0]), tuple(map(float, x)), tuple(sizes),
                           tuple(witness), tuple(bool(v) for v in drift <= tol),
                           tuple(map(float, drift)))


@dataclass(frozen=True, eq=False)
class Eigenfunction:
    """``Q_1(x) .. Q_n(x)`` of the solution bounded at infinity.

    ``boundary`` is the value the same solution takes at state 0; it
    vanishes exactly when ``x`` is an eigenvalue, so ``values`` is then
    the ``x``-invariant function with ``Q_0 = 0``.
    """

    x: float
    values: np.ndarray
    boundary: float

    @property
    def n(self):
        return len(self.values)

    def with_zero(self):
        """``Q_0 .. Q_n`` with ``Q_0 := 0``."""
        return np.concatenate([[0.0], self.values])

    def scaled(self, c: float) -> "Eigenfunction":
        return Eigenfunction(self.x, self.values * c, self.boundary * c)


def _backward(b, d, x, depth):
    """Backward recurrence from ``Q_{depth+1} = Q_depth = 1``; returns ``Q_0..Q_depth``."""
    q = np.empty(depth + 2)
    q[depth + 1] = q[depth] = 1.0
    for i in range(depth, 0, -1):
        # b, d are indexed from state 1
        q[i - 1] = ((b[i - 1] + d[i - 1] - x) * q[i] - b[i - 1] * q[i + 1]) / d[i - 1]
        if abs(q[i - 1]) > _RESCALE:
            q[i - 1:] /= _RESCALE
    if q[1] == 0:
        raise SpectralFailure("bounded solution vanishes at state 1")
    return q[:depth + 1] / q[1]


def eigenfunction(spec: BirthDeathSpec, x: float, n: int, rtol: float = 1e-12,
                  max_depth: int = 2 ** 16) -> Eigenfunction:
    """Bounded solution of the recurrence at ``x``, normalised so ``Q_1 = 1``.

    The start depth doubles until the first ``n + 1`` values are stable to
    ``rtol``.
    """
    _require_absorbed(spec)
    depth = max(2 * n, n + 64)
    prev = None
    while True:
        avail = spec.available(depth + 1)
        limited = avail < depth + 1
        depth = min(depth, avail - 1) if limited else depth
        b, d = spec.rates(depth)
        q = _backward(b, d, x, depth)[:n + 2]
        if prev is not None:
            # q[0] is compared absolutely; it is measured in units of q[1] = 1.
            change = np.abs(q - prev) / np.maximum(np.abs(q), 1e-300)
            change[0] = abs(q[0] - prev[0])
            if np.max(change) <= rtol:
                break
        if limited or 2 * depth > max_depth:
            if prev is None:
                break
            raise ToleranceNotMet("backward recurrence did not settle", q)
        prev = q
        depth *= 2
    return Eigenfunction(float(x), q[1:n + 1].copy(), float(q[0]))


def boundary_value(spec: BirthDeathSpec, x: float, depth: int = 256) -> float:
    """Value at state 0 of the bounded solution with ``Q_1 = 1``."""
    n = min(depth, spec.available(depth + 1) - 1)
    b, d = spec.rates(n)
    return float(_backward(b, d, x, n)[0])


def _refine_root(spec, x0, width, depth):
    depth = max(depth, 256)
    f = lambda x: boundary_value(spec, x, depth)
    lo, hi = x0 - width, x0 + width
    try:
        flo, fhi = f(lo), f(hi)
    except SpectralFailure:
        return None
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        return None
    return float(brentq(f, lo, hi, xtol=4 * np.finfo(float).eps * max(1.0, abs(x0)),
                        rtol=4 * np.finfo(float).eps))
