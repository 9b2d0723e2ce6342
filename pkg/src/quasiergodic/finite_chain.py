"""Exact computations for finite absorbing chains.

A chain lives on states ``1..N`` plus a cemetery; ``generator`` is the
sub-Markovian block on the live states and ``absorption`` the killing
rates, so rows of ``generator`` sum to ``-absorption``.

Semigroup actions use uniformisation: with ``L = max_i |Q_ii|`` and
``P = I + Q/L``, ``exp(hQ) = sum_k Poisson(k; Lh) P^k``.  Every term is
nonnegative, so there is no cancellation; long horizons are reached by
squaring with a separate log scale, which keeps survival probabilities
representable far past underflow depth.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .chain_model import BirthDeathSpec, Convention
from .distributions import DistributionVector
from .errors import HorizonTooDeep, InvalidSpec, NotIrreducible, SpectralFailure

__all__ = ["FiniteAbsorbingChain", "PerronData", "ScaledOperator", "perron_data",
           "qed_finite", "conditional_marginal", "conditional_time_average",
           "eta_limit_check", "h_generator", "random_chain", "semigroup",
           "stationary_gth"]

POISSON_TAIL = 1e-15
# Uniformisation steps are kept at L*h <= this before squaring.
MAX_POISSON_MEAN = 20.0
PERRON_TOL = 1e-10
QUAD_TOL = 1e-10
_GL_CACHE = {}


@dataclass(frozen=True, eq=False)
class FiniteAbsorbingChain:
    """Generator block on ``N`` live states plus absorption rates.

    Parameters
    ----------
    generator : ndarray, shape (N, N)
    absorption : ndarray, shape (N,)
    labels : tuple, optional
        Display labels, default ``1..N``.
    """

    generator: np.ndarray
    absorption: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        Q = np.array(self.generator, dtype=float)
        kappa = np.array(self.absorption, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or kappa.shape != (Q.shape[0],):
            raise InvalidSpec("generator must be square and match absorption length")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0) or not np.all(np.isfinite(Q)):
            raise InvalidSpec("off-diagonal rates must be finite and nonnegative")
        if np.any(kappa < 0) or not np.any(kappa > 0):
            raise InvalidSpec("absorption rates must be nonnegative with at least one positive")
        scale = max(1.0, float(np.max(np.abs(Q))))
        if np.max(np.abs(Q.sum(axis=1) + kappa)) > 1e-12 * scale * Q.shape[0]:
            raise InvalidSpec("row sums plus absorption must vanish")
        Q.setflags(write=False)
        kappa.setflags(write=False)
        object.__setattr__(self, "generator", Q)
        object.__setattr__(self, "absorption", kappa)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(range(1, Q.shape[0] + 1)))

    @property
    def n_states(self):
        return self.generator.shape[0]

    @classmethod
    def from_rates(cls, n_states, rates, absorption, labels=()):
        """Build from ``(i, j, rate)`` transitions and ``(i, rate)`` killing, 1-based."""
        Q = np.zeros((n_states, n_states))
        kappa = np.zeros(n_states)
        for i, j, r in rates:
            if not (1 <= i <= n_states and 1 <= j <= n_states) or i == j:
                raise InvalidSpec(f"bad transition ({i}, {j})")
            if r < 0:
                raise InvalidSpec(f"negative rate {r} on ({i}, {j})")
            Q[i - 1, j - 1] += r
        for i, r in absorption:
            if not 1 <= i <= n_states:
                raise InvalidSpec(f"bad absorbing state {i}")
            kappa[i - 1] += r
        np.fill_diagonal(Q, -(Q.sum(axis=1) + kappa))
        return cls(Q, kappa, tuple(labels))

    @classmethod
    def from_dict(cls, doc):
        try:
            states = doc["states"]
            n = states if isinstance(states, int) else len(states)
            labels = () if isinstance(states, int) else tuple(states)
            return cls.from_rates(n, doc["rates"], doc["absorption"], labels)
        except KeyError as exc:
            raise InvalidSpec(f"missing key {exc}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        n = self.n_states
        rates = [[i + 1, j + 1, float(self.generator[i, j])]
                 for i in range(n) for j in range(n) if i != j and self.generator[i, j] > 0]
        absorption = [[i + 1, float(k)] for i, k in enumerate(self.absorption) if k > 0]
        return {"states": n, "rates": rates, "absorption": absorption}

    @classmethod
    def from_birth_death(cls, spec: BirthDeathSpec, n_states: int):
        """Truncate to states ``1..N``; births out of ``N`` are suppressed.

        Absorption happens only from state 1 at rate ``d_1``.
        """
        if spec.convention is not Convention.ABSORBED:
            raise InvalidSpec("truncation needs the absorbed-at-zero convention")
        b, d = spec.rates(n_states)
        Q = np.zeros((n_states, n_states))
        idx = np.arange(n_states - 1)
        Q[idx, idx + 1] = b[:-1]
        Q[idx + 1, idx] = d[1:]
        kappa = np.zeros(n_states)
        kappa[0] = d[0]
        np.fill_diagonal(Q, -(Q.sum(axis=1) + kappa))
        return cls(Q, kappa)

    def is_irreducible(self) -> bool:
        n, _ = connected_components(self.generator != 0, directed=True, connection="strong")
        return n == 1

    def initial(self, init) -> np.ndarray:
        """Probability vector for a 1-based state or a distribution."""
        if np.ndim(init) == 0:
            k = int(init)
            if not 1 <= k <= self.n_states:
                raise InvalidSpec(f"initial state {k} outside 1..{self.n_states}")
            p = np.zeros(self.n_states)
            p[k - 1] = 1.0
            return p
        p = np.asarray(init, dtype=float)
        if p.shape != (self.n_states,) or np.any(p < 0) or not p.sum() > 0:
            raise InvalidSpec("initial distribution must be a nonnegative vector on E")
        return p / p.sum()


@dataclass(frozen=True, eq=False)
class PerronData:
    """``Q eta = -lam eta``, ``nu Q = -lam nu``, ``sum nu = 1``, ``sum eta nu = 1``."""

    lam: float
    eta: np.ndarray
    nu: np.ndarray
    gap: float
    residuals: dict = field(default_factory=dict)

    def to_dict(self):
        return {"lambda": self.lam, "eta": self.eta.tolist(), "nu": self.nu.tolist(),
                "gap": self.gap, "residuals": self.residuals}


def perron_data(chain: FiniteAbsorbingChain, tol: float = PERRON_TOL) -> PerronData:
    """Dominant eigen-pair of the generator block with both normalisations.

    ``gap`` is the distance from ``-lam`` to the real part of the next eigenvalue.

    Raises
    ------
    NotIrreducible
    SpectralFailure
        If the eigensolver fails, the Perron vectors are not positive, or
        the residuals exceed ``tol``.
    """
    if not chain.is_irreducible():
        raise NotIrreducible("live states do not form one communicating class")
    Q = chain.generator
    try:
        w, vl, vr = linalg.eig(Q, left=True, right=True)
    except linalg.LinAlgError as exc:
        raise SpectralFailure(f"eigensolver failed: {exc}") from exc
    order = np.argsort(-w.real)
    top = order[0]
    if abs(w[top].imag) > 1e-9 * max(1.0, abs(w[top])):
        raise SpectralFailure("dominant eigenvalue is not real")
    lam = -float(w[top].real)
    eta = np.real(vr[:, top])
    eta = eta * np.sign(eta[np.argmax(np.abs(eta))])
    if np.any(eta <= 0):
        raise SpectralFailure("right Perron vector is not strictly positive")
    # nu from the h-generator's stationary law: subtraction-free, so tiny
    # entries keep full relative accuracy where a dense left eigenvector would not.
    h_off = Q * eta[None, :] / eta[:, None]
    m = stationary_gth(h_off)
    nu = m / eta
    nu = nu / nu.sum()
    eta = eta / float(eta @ nu)
    gap = float(-w[order[1]].real - lam) if len(w) > 1 else math.inf
    right = float(np.max(np.abs(Q @ eta + lam * eta)) / np.max(np.abs(eta)))
    left = float(np.sum(np.abs(nu @ Q + lam * nu)))
    if not (right <= tol and left <= tol):
        raise SpectralFailure(f"Perron residuals {right:.3g}, {left:.3g} exceed {tol:g}")
    return PerronData(lam, eta, nu, gap, {"right": right, "left": left})


def stationary_gth(rates: np.ndarray) -> np.ndarray:
    """Stationary law of an irreducible generator from its off-diagonal rates.

    Grassmann-Taksar-Heyman elimination; the diagonal is never read.
    """
    A = np.array(rates, dtype=float)
    n = A.shape[0]
    np.fill_diagonal(A, 0.0)
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if not s > 0:
            raise NotIrreducible(f"state {k + 1} has no path to lower states")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


def qed_finite(pd: PerronData) -> DistributionVector:
    """``m = eta * nu`` as a distribution on ``1..N``."""
    log_w = np.log(pd.eta) + np.log(pd.nu)
    return DistributionVector.from_log_weights(
        log_w, 1, tail_bound=0.0, diagnostics={"kind": "qed_finite", "lambda": pd.lam})


@dataclass(frozen=True, eq=False)
class ScaledOperator:
    """``exp(h Q) = exp(log_scale) * matrix`` with ``matrix`` nonnegative."""

    matrix: np.ndarray
    log_scale: float


def semigroup(chain: FiniteAbsorbingChain, h: float, tail: float = POISSON_TAIL) -> ScaledOperator:
    """``exp(h Q_E)`` by uniformisation and scaled squaring."""
    return _semigroup_cached(chain, float(h), tail)


@lru_cache(maxsize=256)
def _semigroup_cached(chain, h, tail):
    Q = chain.generator
    n = Q.shape[0]
    if h < 0:
        raise ValueError("h must be nonnegative")
    rate = float(np.max(-np.diag(Q)))
    if h == 0 or rate == 0:
        return ScaledOperator(np.eye(n), 0.0)
    squarings = max(0, math.ceil(math.log2(rate * h / MAX_POISSON_MEAN)))
    mu = rate * h / 2 ** squarings
    P = np.eye(n) + Q / rate
    P[P < 0] = 0.0  # rounding on the diagonal
    K = int(poisson.isf(tail, mu)) + 1
    w = poisson.pmf(np.arange(K + 1), mu)
    M = w[K] * np.eye(n)
    for k in range(K - 1, -1, -1):
        M = M @ P
        M[np.diag_indices(n)] += w[k]
    c = 0.0
    for _ in range(squarings):
        M = M @ M
        top = float(M.max())
        if not top > 0:
            raise HorizonTooDeep("semigroup underflowed during squaring")
        M /= top
        c = 2 * c + math.log(top)
    return ScaledOperator(M, c)


def _forward(chain, p, h):
    """``p exp(hQ)`` as (normalised row vector, log of its mass)."""
    op = semigroup(chain, h)
    v = p @ op.matrix
    s = float(v.sum())
    if not (s > 0 and math.isfinite(s)):
        raise HorizonTooDeep("survival probability vanished; shorten the horizon")
    return v / s, op.log_scale + math.log(s)


def _backward(chain, u, h):
    """``exp(hQ) u`` as (vector scaled to max 1, log of that scale)."""
    op = semigroup(chain, h)
    v = op.matrix @ u
    s = float(v.max())
    if not (s > 0 and math.isfinite(s)):
        raise HorizonTooDeep("survival probability vanished; shorten the horizon")
    return v / s, op.log_scale + math.log(s)


@dataclass(frozen=True)
class ConditionalMarginal:
    distribution: np.ndarray
    log_survival: float


def conditional_marginal(chain: FiniteAbsorbingChain, init, t: float) -> ConditionalMarginal:
    """Law of ``X_t`` given survival to ``t``, and ``log P(T > t)``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    p = chain.initial(init)
    v, log_mass = _forward(chain, p, t)
    return ConditionalMarginal(v, log_mass)


def _gauss_legendre(k):
    if k not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(k)
        _GL_CACHE[k] = ((x + 1) / 2, w / 2)
    return _GL_CACHE[k]


@dataclass(frozen=True)
class TimeAverage:
    value: float
    error_estimate: float
    panels: int
    quad_points: int


def _time_average_panels(chain, p0, t, f, panels, quad_points):
    x, w = _gauss_legendre(quad_points)
    H = t / panels
    one = np.ones(chain.n_states)
    # Panel starts, forward from p0 and backward from the all-ones vector.
    fwd = [(p0, 0.0)]
    bwd = [(one, 0.0)]
    for _ in range(panels):
        v, lv = _forward(chain, fwd[-1][0], H)
        fwd.append((v, fwd[-1][1] + lv))
        u, lu = _backward(chain, bwd[-1][0], H)
        bwd.append((u, bwd[-1][1] + lu))
    log_total = fwd[-1][1]
    node_fwd = [semigroup(chain, H * xj) for xj in x]
    acc = []
    for p in range(panels):
        a, la = fwd[p]
        b, lb = bwd[panels - 1 - p]
        for j in range(quad_points):
            op_f = node_fwd[j]
            # Gauss nodes are symmetric: H (1 - x_j) = H x_{J-1-j}.
            op_b = node_fwd[quad_points - 1 - j]
            av = a @ op_f.matrix
            bv = op_b.matrix @ b
            weight = math.exp(la + lb + op_f.log_scale + op_b.log_scale - log_total)
            acc.append(w[j] * weight * float(av @ (f * bv)))
    return math.fsum(acc) / panels


def conditional_time_average(chain: FiniteAbsorbingChain, init, t: float, f,
                             quad_points: int = 8, tol: float = QUAD_TOL,
                             max_panels: int = 4096) -> TimeAverage:
    """``E[(1/t) int_0^t f(X_s) ds | T > t]`` by composite Gauss-Legendre in ``s``.

    Panels double until successive estimates differ by at most ``tol``;
    the last difference is reported as the error estimate.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if quad_points < 8:
        raise ValueError("quad_points must be at least 8")
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.n_states,):
        raise InvalidSpec("f must be a vector on the live states")
    p0 = chain.initial(init)
    panels = 1
    prev = _time_average_panels(chain, p0, t, f, panels, quad_points)
    while True:
        panels *= 2
        cur = _time_average_panels(chain, p0, t, f, panels, quad_points)
        err = abs(cur - prev)
        if err <= tol or panels >= max_panels:
            return TimeAverage(cur, err, panels, quad_points)
        prev = cur


def eta_limit_check(chain: FiniteAbsorbingChain, pd: PerronData, t_grid) -> np.ndarray:
    """``sup_x |exp(lam t) P_x(T > t) - eta_x|`` at each ``t`` in ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    one = np.ones(chain.n_states)
    out = np.empty(len(t_grid))
    for k, t in enumerate(t_grid):
        u, lu = _backward(chain, one, t)
        out[k] = float(np.max(np.abs(np.exp(np.log(u) + lu + pd.lam * t) - pd.eta)))
    return out


@dataclass(frozen=True, eq=False)
class HGeneratorCheck:
    generator: np.ndarray
    constants_residual: float
    stationary_residual: float


def h_generator(chain: FiniteAbsorbingChain, pd: PerronData) -> HGeneratorCheck:
    """``Lbar f = (1/eta) Q (eta f) + lam f`` and its two defining residuals.

    ``Lbar`` must annihilate constants and have ``m = eta nu`` as its
    stationary law; both residuals are relative to ``max |Lbar_ij|``.
    """
    eta = pd.eta
    L = chain.generator * eta[None, :] / eta[:, None] + pd.lam * np.eye(chain.n_states)
    scale = float(np.max(np.abs(L)))
    m = pd.eta * pd.nu
    m = m / m.sum()
    return HGeneratorCheck(L, float(np.max(np.abs(L.sum(axis=1)))) / scale,
                           float(np.max(np.abs(m @ L))) / scale)


def random_chain(rng: np.random.Generator, n_states: int, rate_range=(0.1, 1.0),
                 absorb_fraction: float = 0.5) -> FiniteAbsorbingChain:
    """Fully connected random chain; about ``absorb_fraction`` of the states leak."""
    lo, hi = rate_range
    Q = rng.uniform(lo, hi, size=(n_states, n_states))
    np.fill_diagonal(Q, 0.0)
    kappa = np.where(rng.random(n_states) < absorb_fraction,
                     rng.uniform(0.0, 1.0, n_states), 0.0)
    if not np.any(kappa > 0):
        kappa[rng.integers(n_states)] = rng.uniform(lo, hi)
    np.fill_diagonal(Q, -(Q.sum(axis=1) + kappa))
    return FiniteAbsorbingChain(Q, kappa)
