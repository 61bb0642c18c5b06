"""Phase bookkeeping and sample periodic means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError

__all__ = ["PeriodicMean", "phase_index", "periodic_mean"]


def phase_index(n, m0: int):
    """1-based phase ``((n - 1) mod m0) + 1`` of 1-based sample index ``n``."""
    return (np.asarray(n) - 1) % m0 + 1


@dataclass(frozen=True)
class PeriodicMean:
    """Phase means ``m_1..m_{M0}``; phase 1 is the first sample."""

    means: np.ndarray

    @property
    def m0(self) -> int:
        return self.means.size

    def expand(self, n: int, offset: int = 0) -> np.ndarray:
        """Phase means laid out over ``n`` consecutive samples."""
        return self.means[(np.arange(n) + offset) % self.m0]


def periodic_mean(series, m0: int):
    """Sample periodic mean and the centered series.

    Each phase is averaged over its actual number of occurrences, so a
    partial trailing period is used rather than dropped.
    """
    y = np.asarray(series, dtype=float)
    m0 = int(m0)
    if m0 < 1:
        raise DomainError("period must be >= 1")
    if y.ndim != 1 or y.size < m0:
        raise DomainError(f"series of length {y.size} is shorter than the period {m0}")
    idx = np.arange(y.size) % m0
    means = np.bincount(idx, weights=y, minlength=m0) / np.bincount(idx, minlength=m0)
    pm = PeriodicMean(means)
    return pm, y - means[idx]
