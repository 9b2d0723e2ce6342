"""Nonnegative sequences stored as natural logarithms (``-inf`` is zero)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True, eq=False)
class LogWeightVector:
    """Entries ``w_start, ..., w_{start+n-1}`` held as ``log w``.

    Parameters
    ----------
    log_values : ndarray
        Natural logarithms; ``-inf`` encodes an exact zero.
    start : int
        State index of the first entry.
    """

    log_values: np.ndarray
    start: int = 1

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=float)
        if np.any(np.isnan(lv)) or np.any(lv == np.inf):
            raise ValueError("log weights must be finite or -inf")
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)

    def __len__(self):
        return len(self.log_values)

    @property
    def states(self):
        return np.arange(self.start, self.start + len(self))

    def values(self):
        return np.exp(self.log_values)

    def log_total(self) -> float:
        if len(self) == 0:
            return -np.inf
        return float(logsumexp(self.log_values))

    def normalized(self) -> "LogWeightVector":
        return LogWeightVector(self.log_values - self.log_total(), self.start)

    def __getitem__(self, state):
        """Weight at a state index (not a positional index)."""
        return float(np.exp(self.log_values[state - self.start]))
