"""Kalman one-step prediction for the sampled, centered process.

The centered state obeys ``X*_n = e^{Ah} X*_{n-1} + U_n`` where the noise
``U_n`` of cell ``((n-1)h, nh]`` has covariance

    Q_n = beta * sum_pieces (lambda_j / |B_j|) G(c, d)

over the pieces of the cell on which the intensity slope is constant
(``c, d`` are lags measured back from ``nh``).  ``Q_n`` depends only on the
phase of ``n``.  The filter starts from ``X*_1 = 0`` with error covariance
``Omega_1 = cov(X_h)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .carma import (
    _solve_lyapunov_stack,
    congruence_series,
    exp_vectors,
    gramian_finite,
    gramian_infinite,
    interval_gramians,
    matrix_exponential,
    periodic_tail_sum,
)
from .exceptions import DomainError, NumericalError
from .periodic import PeriodicMean, periodic_mean, phase_index
from .sampling import LevySystem, SampledSystem
from .semilevy import PeriodPartition, rate_pieces

__all__ = [
    "FilterOutput",
    "PeriodicMean",
    "CellPiece",
    "cell_pieces",
    "CovarianceGeometry",
    "phase_covariances",
    "initial_covariance",
    "periodic_fixed_point_residual",
    "system_covariances",
    "kalman_filter",
    "run_filter",
    "predict_series",
    "periodic_mean",
    "phase_index",
]

DELTA_FLOOR = 1e-300


@dataclass(frozen=True)
class CellPiece:
    """Part of a sampling cell lying in subinterval ``j`` (1-based).

    ``lag_start``/``lag_end`` are measured back from the end of the cell.
    """

    phase: int
    j: int
    lag_start: float
    lag_end: float


def cell_pieces(partition: PeriodPartition, m0: int) -> list:
    """Split each of the ``M0`` cells of one period at the rate breakpoints.

    A cell inside one subinterval yields one piece; a cell straddling
    ``s_j`` yields a piece in ``B_j`` with lags ``[nh - s_j, h)`` and one in
    ``B_{j+1}`` with lags ``[0, nh - s_j)``; more breakpoints give more pieces.
    """
    part = partition
    h = part.period / m0
    s = part.boundaries
    out = []
    for n in range(1, m0 + 1):
        end = n * h if n < m0 else part.period
        start = (n - 1) * h
        cuts = s[(s > start) & (s < end)]
        # drop slivers created by rounding of n*h against the breakpoints
        cuts = cuts[(cuts - start > 1e-12 * h) & (end - cuts > 1e-12 * h)]
        edges = np.concatenate([[start], cuts, [end]])
        pieces = []
        for a, b in zip(edges[:-1], edges[1:]):
            j = int(np.searchsorted(s[1:], 0.5 * (a + b), side="left")) + 1
            pieces.append(CellPiece(n, j, end - b, end - a))
        out.append(pieces[::-1])
    return out


def phase_covariances(system: SampledSystem, beta: float) -> np.ndarray:
    """Stack ``Q_1..Q_{M0}`` (shape ``(M0, p, p)``) of the cell noise covariances."""
    A, e = system.ss.A, system.ss.e
    dens = system.partition.densities
    phases, lo, hi, w = [], [], [], []
    for pieces in cell_pieces(system.partition, system.m0):
        for pc in pieces:
            if dens[pc.j - 1] > 0:
                phases.append(pc.phase - 1)
                lo.append(pc.lag_start)
                hi.append(pc.lag_end)
                w.append(beta * dens[pc.j - 1])
    p = A.shape[0]
    Q = np.zeros((system.m0, p, p))
    if phases:
        G = interval_gramians(A, e, lo, hi)
        np.add.at(Q, np.asarray(phases), np.asarray(w)[:, None, None] * G)
    return Q


def initial_covariance(system: SampledSystem, beta: float, mirrored: bool = False) -> np.ndarray:
    """``Omega_1``, the covariance of the state at the first sampling instant."""
    return periodic_tail_sum(system.ss.A, system.ss.e, system.partition, beta, system.h,
                             mirrored=mirrored)


def periodic_fixed_point_residual(system: SampledSystem, beta: float, omega1=None) -> float:
    """Relative change of ``Omega_1`` after one period of pure time updates."""
    Q = phase_covariances(system, beta)
    om = initial_covariance(system, beta) if omega1 is None else np.asarray(omega1)
    Phi = system.transition
    cur = om.copy()
    for n in range(1, system.m0 + 1):
        cur = Phi @ cur @ Phi.T + Q[n % system.m0]
    return float(np.linalg.norm(cur - om) / np.linalg.norm(om))


class CovarianceGeometry:
    """Precomputed piece layout for repeated ``(Phi, Q, Omega_1)`` evaluation.

    The lags at which Gramians are needed depend only on the partition
    lengths and ``m0``, so an estimator can reuse them for every parameter
    value and pay for a single batched Lyapunov solve per evaluation.
    """

    def __init__(self, lengths, m0: int):
        part = PeriodPartition(tuple(lengths), tuple(np.ones(len(lengths))))
        self.lengths = part.lengths
        self.m0 = int(m0)
        self.period = part.period
        self.h = part.period / self.m0
        phase, lo, hi, j = [], [], [], []
        for pieces in cell_pieces(part, self.m0):
            for pc in pieces:
                phase.append(pc.phase - 1)
                lo.append(pc.lag_start)
                hi.append(pc.lag_end)
                j.append(pc.j - 1)
        self.n_cell = len(phase)
        self.phase = np.asarray(phase)
        left, right, _ = rate_pieces(part, self.h - self.period, self.h)
        lo = np.concatenate([lo, self.h - right])
        hi = np.concatenate([hi, self.h - left])
        self.j = np.concatenate([j, part.subinterval_index(0.5 * (left + right))]).astype(int)
        self.times, inv = np.unique(np.concatenate([lo, hi]), return_inverse=True)
        self._lo, self._hi = inv[: lo.size], inv[lo.size:]

    def matrices(self, A, e, densities, beta: float = 1.0):
        """Return ``(e^{Ah}, Q stack, Omega_1)`` for intensity slopes ``densities``."""
        A = np.asarray(A, dtype=float)
        v = exp_vectors(A, e, self.times)
        F = v[:, :, None] * v[:, None, :]
        G = _solve_lyapunov_stack(A, F[self._hi] - F[self._lo])
        w = beta * np.asarray(densities, dtype=float)[self.j]
        nc = self.n_cell
        Q = np.zeros((self.m0,) + A.shape)
        np.add.at(Q, self.phase, w[:nc, None, None] * G[:nc])
        W = np.tensordot(w[nc:], G[nc:], axes=1)
        omega = congruence_series(matrix_exponential(A * self.period), W)
        return matrix_exponential(A * self.h), Q, omega


def system_covariances(system, beta: float = 1.0):
    """``(Q stack, Omega_1)`` for a semi-Lévy or a stationary Lévy system."""
    if isinstance(system, LevySystem):
        A, e = system.ss.A, system.ss.e
        return beta * gramian_finite(A, e, 0.0, system.h)[None], beta * gramian_infinite(A, e)
    return phase_covariances(system, beta), initial_covariance(system, beta)


@njit(cache=True)
def _filter_kernel(Phi, b, Q, omega, y):
    N = y.shape[0]
    p = b.shape[0]
    M = Q.shape[0]
    pred = np.empty(N + 1)
    delta = np.empty(N)
    gains = np.empty((N, p))
    x = np.zeros(p)
    om = omega.copy()
    ob = np.empty(p)
    theta = np.empty(p)
    xn = np.empty(p)
    tmp = np.empty((p, p))
    nxt = np.empty((p, p))
    for n in range(N):
        yhat = 0.0
        for i in range(p):
            yhat += b[i] * x[i]
        pred[n] = yhat
        d = 0.0
        for i in range(p):
            s = 0.0
            for k in range(p):
                s += om[i, k] * b[k]
            ob[i] = s
            d += b[i] * s
        if not d > 1e-300:
            return pred, delta, gains, x, om, n + 1
        delta[n] = d
        eps = y[n] - yhat
        for i in range(p):
            s = 0.0
            for k in range(p):
                s += Phi[i, k] * ob[k]
            theta[i] = s
            gains[n, i] = s / d
        for i in range(p):
            s = 0.0
            for k in range(p):
                s += Phi[i, k] * x[k]
            xn[i] = s + gains[n, i] * eps
        for i in range(p):
            x[i] = xn[i]
        # om <- Phi om Phi' + Q(next cell) - theta theta' / d
        for i in range(p):
            for k in range(p):
                s = 0.0
                for m in range(p):
                    s += Phi[i, m] * om[m, k]
                tmp[i, k] = s
        q = (n + 1) % M
        for i in range(p):
            for k in range(p):
                s = 0.0
                for m in range(p):
                    s += tmp[i, m] * Phi[k, m]
                nxt[i, k] = s + Q[q, i, k] - theta[i] * theta[k] / d
        for i in range(p):
            for k in range(p):
                om[i, k] = 0.5 * (nxt[i, k] + nxt[k, i])
    yhat = 0.0
    for i in range(p):
        yhat += b[i] * x[i]
    pred[N] = yhat
    return pred, delta, gains, x, om, 0


@dataclass
class FilterOutput:
    """One-step predictions ``Yhat*_n = P_{n-1} Y*_n`` and innovation statistics.

    ``forecast`` is the prediction of the first unobserved value and
    ``state``/``omega`` its state estimate and error covariance.
    """

    predictions: np.ndarray
    innovations: np.ndarray
    variances: np.ndarray
    gains: np.ndarray
    state: np.ndarray
    omega: np.ndarray
    forecast: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def sse(self) -> float:
        return float(np.dot(self.innovations, self.innovations))

    @property
    def standardized(self) -> np.ndarray:
        return self.innovations / np.sqrt(self.variances)


def run_filter(Phi, b, Q, omega1, y) -> FilterOutput:
    """Run the recursion on raw matrices.

    ``Q[k]`` is the noise covariance entering the state at sample ``k+1``
    (mod ``len(Q)``) and the series starts at sample 1.
    """
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1:
        raise DomainError("series must be one-dimensional")
    if not np.all(np.isfinite(y)):
        raise DomainError("series must be finite")
    Q = np.ascontiguousarray(Q, dtype=float)
    if Q.ndim == 2:
        Q = Q[None]
    pred, delta, gains, x, om, status = _filter_kernel(
        np.ascontiguousarray(Phi, dtype=float), np.ascontiguousarray(b, dtype=float),
        Q, np.ascontiguousarray(omega1, dtype=float), y)
    if status:
        raise NumericalError(
            f"innovation variance vanished at n={status} (Q == 0 or over-smoothed model)"
        )
    return FilterOutput(pred[:-1], y - pred[:-1], delta, gains, x, om, float(pred[-1]))


def kalman_filter(system, beta: float, series) -> FilterOutput:
    """One-step predictions of a centered series ``Y*_1..Y*_N``.

    The noise covariance used to move from ``X*_n`` to ``X*_{n+1}`` is the
    one of cell ``n+1``.
    """
    Q, om = system_covariances(system, beta)
    return run_filter(system.transition, system.b, Q, om, series)


def predict_series(output: FilterOutput, mean: PeriodicMean, offset: int = 0) -> np.ndarray:
    """Predictions on the original scale: ``Yhat_n = Yhat*_n + mean_phase(n)``."""
    n = output.predictions.size
    return output.predictions + mean.expand(n, offset)
