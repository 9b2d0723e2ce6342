"""Birth-death specifications, potential coefficients and boundary series.

Two indexing conventions are supported:

``ABSORBED``
    States ``1, 2, ...`` with ``0`` absorbing; ``b_i, d_i > 0`` for
    ``i >= 1`` and the potential coefficients start at ``pi_1 = 1``.
``REFLECTING``
    States ``0, 1, ...`` with ``0`` reflecting; ``b_i > 0`` for ``i >= 0``,
    ``d_i > 0`` for ``i >= 1`` and ``pi_0 = 1``.

In both cases ``pi_{i+1} = pi_i * b_i / d_{i+1}`` and the four series
are ``A = sum 1/(b_i pi_i)``, ``B = sum pi_i``,
``R = sum 1/(b_i pi_i) sum_{j<=i} pi_j`` and
``S = sum 1/(b_i pi_i) sum_{j>i} pi_j``, summed from the first state.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import InvalidSpec
from .expr import Expr, parse_rate, shift_index, to_source
from .logweights import LogWeightVector
from .series import SeriesEstimate, Verdict, assess_series

__all__ = [
    "Convention", "RateFunction", "BirthDeathSpec", "BoundarySeries",
    "BoundaryKind", "BoundaryClass", "potential_coefficients",
    "boundary_series", "classify_boundary", "load_spec",
]

DEFAULT_TOL_SERIES = 1e-10
DEFAULT_MAX_TERMS = 10_000
# Inner tails of S are summed this many nats past the outer truncation.
_TAIL_PAD_NATS = 50.0


class Convention(str, enum.Enum):
    ABSORBED = "absorbed"
    REFLECTING = "reflecting"

    @property
    def first(self):
        return 1 if self is Convention.ABSORBED else 0


@dataclass(frozen=True)
class RateFunction:
    """A rate sequence ``i -> r_i``.

    Exactly one source is used: a closed-form ``expr``, a ``table`` whose
    first entry sits at index ``start`` (optionally continued by
    ``extend``), or a vectorised Python callable ``func``.  ``shift``
    evaluates the source at ``i + shift``; duality maps are shifts.
    """

    expr: Optional[Expr] = None
    table: Optional[tuple] = None
    start: int = 1
    extend: Optional[Expr] = None
    func: Optional[Callable] = field(default=None, compare=False)
    shift: int = 0
    name: str = ""

    def __post_init__(self):
        sources = sum(x is not None for x in (self.expr, self.table, self.func))
        if sources != 1:
            raise InvalidSpec("a rate needs exactly one of expr, table, func")
        if self.table is not None:
            object.__setattr__(self, "table", tuple(float(v) for v in self.table))

    @classmethod
    def from_expr(cls, source: str):
        return cls(expr=parse_rate(source))

    @classmethod
    def from_table(cls, values, start=1, extend: str | None = None):
        return cls(table=tuple(values), start=start,
                   extend=parse_rate(extend) if extend else None)

    @classmethod
    def from_callable(cls, func, name=""):
        return cls(func=func, name=name or getattr(func, "__name__", "callable"))

    def shifted(self, k: int) -> "RateFunction":
        return replace(self, shift=self.shift + k)

    def last_index(self) -> float:
        """Largest index at which the rate is defined (``inf`` if unbounded)."""
        if self.table is not None and self.extend is None:
            return self.start + len(self.table) - 1 - self.shift
        return math.inf

    def __call__(self, i):
        return self.values(np.asarray(i))

    def values(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64) + self.shift
        scalar = idx.ndim == 0
        idx = np.atleast_1d(idx)
        if self.expr is not None:
            out = np.asarray(self.expr.evaluate(idx.astype(float)), dtype=float)
        elif self.func is not None:
            out = np.asarray(self.func(idx), dtype=float)
            out = np.broadcast_to(out, idx.shape).astype(float)
        else:
            table = np.asarray(self.table)
            out = np.full(idx.shape, np.nan)
            pos = idx - self.start
            inside = (pos >= 0) & (pos < len(table))
            out[inside] = table[pos[inside]]
            beyond = pos >= len(table)
            if self.extend is not None and beyond.any():
                out[beyond] = self.extend.evaluate(idx[beyond].astype(float))
        return out[0] if scalar else out

    def to_json(self, first: int):
        """JSON form at role index ``first``; tables are re-based there."""
        if self.func is not None:
            raise TypeError("callable rates cannot be serialised")
        if self.expr is not None:
            return {"expr": to_source(shift_index(self.expr, self.shift))}
        n = self.start + len(self.table) - self.shift - first
        values = [float(v) for v in self.values(np.arange(first, first + n))] if n > 0 else []
        ext = to_source(shift_index(self.extend, self.shift)) if self.extend else None
        return {"table": values, "extend": ext}

    @classmethod
    def from_json(cls, doc, first: int):
        if "expr" in doc:
            return cls.from_expr(doc["expr"])
        if "table" in doc:
            return cls.from_table(doc["table"], start=first, extend=doc.get("extend"))
        raise InvalidSpec(f"rate must have 'expr' or 'table', got {sorted(doc)}")


@dataclass(frozen=True)
class BirthDeathSpec:
    """Birth and death rates plus the indexing convention."""

    birth: RateFunction
    death: RateFunction
    convention: Convention = Convention.ABSORBED

    @classmethod
    def from_expressions(cls, birth: str, death: str, convention="absorbed"):
        return cls(RateFunction.from_expr(birth), RateFunction.from_expr(death),
                   Convention(convention))

    @property
    def first(self) -> int:
        return self.convention.first

    def last_state(self) -> float:
        """Largest state with a defined birth rate (``inf`` if unbounded)."""
        return min(self.birth.last_index(), self.death.last_index() - 1)

    def available(self, n: int) -> int:
        """Clip ``n`` states to the declared table range."""
        last = self.last_state()
        if math.isinf(last):
            return n
        return max(0, min(n, int(last) - self.first + 1))

    def rates(self, n: int):
        """``(b, d)`` at states ``first .. first+n-1``; ``d[0] = 0`` if reflecting."""
        idx = np.arange(self.first, self.first + n)
        b = self.birth.values(idx)
        d = np.zeros(n)
        if self.convention is Convention.ABSORBED:
            d = self.death.values(idx)
        elif n > 1:
            d[1:] = self.death.values(idx[1:])
        self._check(b, d)
        return b, d

    def death_next(self, n: int):
        """``d_{i+1}`` for states ``first .. first+n-1``."""
        d = self.death.values(np.arange(self.first + 1, self.first + n + 1))
        if not np.all(np.isfinite(d) & (d > 0)):
            raise InvalidSpec(f"nonpositive or undefined death rate in {d}")
        return d

    def _check(self, b, d):
        lo = 1 if self.convention is Convention.REFLECTING else 0
        bad_b = ~(np.isfinite(b) & (b > 0))
        bad_d = ~(np.isfinite(d[lo:]) & (d[lo:] > 0))
        if bad_b.any() or bad_d.any():
            k = int(np.argmax(bad_b)) if bad_b.any() else int(np.argmax(bad_d)) + lo
            raise InvalidSpec(
                f"nonpositive or undefined rate at state {self.first + k}: "
                f"b={b[k]!r}, d={d[k]!r}")

    def to_dict(self):
        first_death = 1
        return {
            "convention": self.convention.value,
            "birth": self.birth.to_json(self.first),
            "death": self.death.to_json(first_death),
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            convention = Convention(doc.get("convention", "absorbed"))
            first = convention.first
            return cls(RateFunction.from_json(doc["birth"], first),
                       RateFunction.from_json(doc["death"], 1), convention)
        except KeyError as exc:
            raise InvalidSpec(f"missing key {exc}") from None
        except ValueError as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(str(exc)) from exc

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def load_spec(path) -> BirthDeathSpec:
    with open(path) as fh:
        return BirthDeathSpec.from_dict(json.load(fh))


def _log_pi(spec: BirthDeathSpec, n: int) -> np.ndarray:
    b, _ = spec.rates(n)
    d_next = spec.death_next(n - 1) if n > 1 else np.zeros(0)
    steps = np.log(b[:-1]) - np.log(d_next)
    return np.concatenate([[0.0], np.cumsum(steps)])


def potential_coefficients(spec: BirthDeathSpec, n: int) -> LogWeightVector:
    """``pi_first, ..., pi_{first+n-1}`` in log domain.

    Satisfies ``b_i pi_i = d_{i+1} pi_{i+1}`` with ``pi_first = 1``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    n_avail = spec.available(n)
    if n_avail < n:
        raise InvalidSpec(f"spec tables only cover {n_avail} states, asked for {n}")
    return LogWeightVector(_log_pi(spec, n), spec.first)


@dataclass(frozen=True)
class BoundarySeries:
    A: SeriesEstimate
    B: SeriesEstimate
    R: SeriesEstimate
    S: SeriesEstimate
    convention: Convention = Convention.ABSORBED

    def items(self):
        return (("A", self.A), ("B", self.B), ("R", self.R), ("S", self.S))

    def rs_ab_residual(self):
        """``|R + S - A B| / (A B)`` when all four converge, else ``None``."""
        if not all(s.convergent for _, s in self.items()):
            return None
        ab = self.A.value * self.B.value
        return abs(self.R.value + self.S.value - ab) / ab

    def to_dict(self):
        return {k: s.to_dict() for k, s in self.items()}


def boundary_series(spec: BirthDeathSpec, tol_series: float = DEFAULT_TOL_SERIES,
                    max_terms: int = DEFAULT_MAX_TERMS) -> BoundarySeries:
    """Partial sums and verdicts for ``A, B, R, S``.

    Table-limited specs are summed over their declared range only.
    """
    if max_terms < 16:
        raise ValueError("max_terms must be at least 16")
    M = spec.available(max_terms)
    if M < 2:
        raise InvalidSpec("spec defines fewer than two states")
    # Extra states beyond M, used only for the inner tails of S.
    n_total = spec.available(2 * M)
    log_pi = _log_pi(spec, n_total)
    if n_total > M:
        below = np.nonzero(log_pi[M:] < log_pi[M - 1] - _TAIL_PAD_NATS)[0]
        n_total = M + int(below[0]) + 1 if len(below) else n_total
        log_pi = log_pi[:n_total]
    b, _ = spec.rates(M)
    log_inv_bpi = -(np.log(b) + log_pi[:M])

    A = assess_series(log_inv_bpi, tol_series)
    B = assess_series(log_pi[:M], tol_series)

    log_prefix = np.logaddexp.accumulate(log_pi[:M])
    if A.divergent:
        R = SeriesEstimate.forced(Verdict.DIVERGENT, log_inv_bpi + log_prefix,
                                  "A divergent forces R divergent")
    else:
        R = assess_series(log_inv_bpi + log_prefix, tol_series)

    if B.convergent:
        # suffix[k] = log sum_{j >= k} pi_j over the padded range
        suffix = np.logaddexp.accumulate(log_pi[::-1])[::-1]
        log_tail = np.append(suffix[1:], -np.inf)[:M]
        pad_partial = float(np.logaddexp.reduce(log_pi))
        rest = B.value - math.exp(pad_partial) if B.value is not None else 0.0
        if rest > 0:
            log_tail = np.logaddexp(log_tail, math.log(rest))
        S = assess_series(log_inv_bpi + log_tail, tol_series)
    elif B.divergent:
        S = SeriesEstimate.forced(Verdict.DIVERGENT, log_inv_bpi,
                                  "B divergent makes every inner tail infinite")
    else:
        S = SeriesEstimate.forced(Verdict.UNDETERMINED, log_inv_bpi, "B undetermined")
    return BoundarySeries(A, B, R, S, spec.convention)


class BoundaryKind(str, enum.Enum):
    ENTRANCE = "entrance"
    EXIT = "exit"
    NATURAL = "natural"
    REGULAR = "regular"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class BoundaryClass:
    kind: BoundaryKind
    series: BoundarySeries

    def to_dict(self):
        return {"boundary": self.kind.value, "series": self.series.to_dict()}


def classify_boundary(series: BoundarySeries) -> BoundaryClass:
    """Map the ``R`` and ``S`` verdicts to the boundary class at infinity."""
    verdicts = {s.verdict for _, s in series.items()}
    if Verdict.UNDETERMINED in verdicts:
        return BoundaryClass(BoundaryKind.UNDETERMINED, series)
    table = {
        (False, True): BoundaryKind.ENTRANCE,
        (True, False): BoundaryKind.EXIT,
        (False, False): BoundaryKind.NATURAL,
        (True, True): BoundaryKind.REGULAR,
    }
    return BoundaryClass(table[(series.R.convergent, series.S.convergent)], series)
