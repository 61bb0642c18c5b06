"""Exact simulation of the sampled process and its discrete-time structure.

Samples are taken at ``t_n = n h`` with ``h = T / M0``.  Between grid points
the state moves by the exact transition

    X_n = e^{Ah} X_{n-1} + int_{(n-1)h}^{nh} e^{A(nh-u)} e dS_u,

where the integral is a finite sum over the simulated jumps plus a drift
term, so no discretization error is introduced.  The periodically stationary
start is approximated by a burn-in of whole periods.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .carma import (
    CarmaModel,
    StateSpaceMatrices,
    build_state_space,
    congruence_series,
    exp_integral,
    exp_vectors,
    matrix_exponential,
    window_covariance,
)
from .exceptions import DomainError, NumericalError, ValidationError
from .periodic import periodic_mean
from .semilevy import PathRealization, SemiLevySpec, rate_pieces, simulate_increments

__all__ = [
    "SampledSystem",
    "LevySystem",
    "SampledPath",
    "DependenceReport",
    "simulate_sampled",
    "cell_integrals",
    "decompose_components",
    "component_noise",
    "phi_coefficients",
    "psi_coefficients",
    "dependence_diagnostic",
    "stationary_state_mean",
    "stationary_mean",
    "stationary_state_covariance",
]

DEFAULT_BURN_IN = 50


@dataclass(frozen=True)
class SampledSystem:
    """A CARMA model driven by a semi-Lévy spec, sampled ``m0`` times per period."""

    model: CarmaModel
    spec: SemiLevySpec
    m0: int

    def __post_init__(self):
        if int(self.m0) != self.m0 or self.m0 < 1:
            raise ValidationError(f"m0 must be a positive integer, got {self.m0}")
        object.__setattr__(self, "m0", int(self.m0))

    @property
    def period(self) -> float:
        return self.spec.partition.period

    @property
    def partition(self):
        return self.spec.partition

    @cached_property
    def h(self) -> float:
        return self.period / self.m0

    @cached_property
    def ss(self) -> StateSpaceMatrices:
        return build_state_space(self.model)

    @cached_property
    def transition(self) -> np.ndarray:
        return matrix_exponential(self.ss.A * self.h)

    @property
    def b(self) -> np.ndarray:
        return self.ss.b

    def with_model(self, model: CarmaModel) -> "SampledSystem":
        return SampledSystem(model, self.spec, self.m0)


@dataclass(frozen=True)
class LevySystem:
    """A CARMA model driven by a stationary Lévy process, sampled at step ``h``."""

    model: CarmaModel
    h: float = 1.0

    m0 = 1

    @cached_property
    def ss(self) -> StateSpaceMatrices:
        return build_state_space(self.model)

    @cached_property
    def transition(self) -> np.ndarray:
        return matrix_exponential(self.ss.A * self.h)

    @property
    def b(self) -> np.ndarray:
        return self.ss.b


@dataclass
class SampledPath:
    """States and observations at ``t_n = n h`` for ``n = 0..N``.

    ``driver`` keeps the simulated jumps (burn-in included) with absolute
    times, ``t = 0`` being the end of the burn-in.
    """

    times: np.ndarray
    states: np.ndarray
    y: np.ndarray
    driver: PathRealization | None = None
    burn_in_cells: int = 0
    seed: object = None

    @property
    def observations(self) -> np.ndarray:
        """``Y_1..Y_N``."""
        return self.y[1:]

    @property
    def n(self) -> int:
        return self.y.size - 1


def cell_integrals(system: SampledSystem, driver: PathRealization) -> np.ndarray:
    """``int_cell e^{A(t_n - u)} e dS_u`` for every cell of the driver grid."""
    A, e = system.ss.A, system.ss.e
    grid = driver.grid
    ncell = grid.size - 1
    p = A.shape[0]
    out = np.zeros((ncell, p))
    if driver.jump_times.size:
        tau = grid[driver.jump_cells + 1] - driver.jump_times
        contrib = exp_vectors(A, e, tau, method="eig") * driver.jump_sizes[:, None]
        for i in range(p):
            out[:, i] = np.bincount(driver.jump_cells, weights=contrib[:, i], minlength=ncell)
    gamma = system.spec.drift
    if gamma != 0.0:
        widths = np.diff(grid)
        out += gamma * exp_integral(A, e, np.zeros(ncell), widths)
    return out


def simulate_sampled(system: SampledSystem, n: int, burn_in_periods: int = DEFAULT_BURN_IN,
                     seed=None) -> SampledPath:
    """Simulate ``X_n, Y_n`` for ``n = 0..N`` after a burn-in from ``X = 0``.

    The driver is simulated from ``-burn_in_periods * T`` so that phase 1
    (the first observation, at ``t = h``) starts at the beginning of ``B_1``.
    """
    if int(burn_in_periods) != burn_in_periods or burn_in_periods < 0:
        raise DomainError("burn_in_periods must be a nonnegative integer")
    if n < 1:
        raise DomainError("need at least one observation")
    h = system.h
    nb = int(burn_in_periods) * system.m0
    total = nb + int(n)
    grid = np.arange(total + 1) * h
    drv = simulate_increments(system.spec, grid, seed)
    shift = -nb * h
    drv = PathRealization(grid + shift, drv.increments, drv.jump_times + shift,
                          drv.jump_sizes, drv.jump_cells, seed)
    incs = cell_integrals(system, drv)
    Phi = system.transition
    X = np.zeros((total + 1, Phi.shape[0]))
    x = X[0]
    for k in range(total):
        x = Phi @ x + incs[k]
        X[k + 1] = x
    states = X[nb:]
    y = states @ system.b
    return SampledPath(grid[nb:] + shift, states, y, drv, nb, seed)


def _require_driver(path: SampledPath):
    if path.driver is None:
        raise DomainError("path has no recorded jump times; simulate it with simulate_sampled")


def decompose_components(system: SampledSystem, path: SampledPath) -> np.ndarray:
    """Component series ``Y^(r)_n = alpha_r int e^{eta_r(nh-u)} dS_u``.

    Returns a complex ``(N+1, p)`` array for ``n = 0..N`` whose rows sum to
    ``Y_n``; conjugate AR roots give conjugate components.
    """
    _require_driver(path)
    comps_z = component_noise(system, path.driver)
    rho = np.exp(system.ss.eigenvalues * system.h)
    total = comps_z.shape[0]
    out = np.zeros((total + 1, comps_z.shape[1]), dtype=complex)
    for k in range(total):
        out[k + 1] = rho * out[k] + comps_z[k]
    return out[path.burn_in_cells:]


def component_noise(system: SampledSystem, driver: PathRealization) -> np.ndarray:
    """``Z^(r)_n = alpha_r int_cell e^{eta_r(nh-u)} dS_u`` for every driver cell."""
    eta = system.ss.eigenvalues
    alpha = system.ss.residues
    grid = driver.grid
    ncell = grid.size - 1
    Z = np.zeros((ncell, eta.size), dtype=complex)
    if driver.jump_times.size:
        tau = grid[driver.jump_cells + 1] - driver.jump_times
        w = np.exp(np.multiply.outer(tau, eta)) * driver.jump_sizes[:, None]
        for r in range(eta.size):
            Z[:, r] = (np.bincount(driver.jump_cells, weights=w[:, r].real, minlength=ncell)
                       + 1j * np.bincount(driver.jump_cells, weights=w[:, r].imag, minlength=ncell))
    gamma = system.spec.drift
    if gamma != 0.0:
        widths = np.diff(grid)
        Z += gamma * (np.exp(np.multiply.outer(widths, eta)) - 1.0) / eta
    return Z * alpha


def phi_coefficients(system) -> np.ndarray:
    """``phi_1..phi_p`` with ``prod_i (1 - e^{eta_i h} B) = 1 - sum_j phi_j B^j``."""
    rho = np.exp(system.ss.eigenvalues * system.h)
    c = np.poly(rho)[1:]
    if np.max(np.abs(c.imag), initial=0.0) > 1e-10:
        raise NumericalError("phi coefficients are not real")
    return -c.real


def psi_coefficients(system, r: int) -> np.ndarray:
    """``psi_0..psi_{p-1}`` of ``prod_{i != r} (1 - e^{eta_i h} B)`` via the phi recursion.

    ``r`` is a 0-based root index.
    """
    phi = phi_coefficients(system)
    z = np.exp(system.ss.eigenvalues[r] * system.h)
    p = phi.size
    psi = np.empty(p, dtype=complex)
    for k in range(1, p + 1):
        psi[k - 1] = z ** (k - 1) - sum(phi[j - 1] * z ** (k - 1 - j) for j in range(1, k))
    return psi


def stationary_state_mean(system: SampledSystem, phase: int = 1) -> np.ndarray:
    """``E X`` at ``t = phase * h`` under the periodically stationary law."""
    A, e = system.ss.A, system.ss.e
    T = system.period
    t_end = phase * system.h
    left, right, dens = rate_pieces(system.partition, t_end - T, t_end)
    kappa = system.spec.jump_mean
    w = kappa * (dens[:, None] * exp_integral(A, e, t_end - right, t_end - left)).sum(axis=0)
    if system.spec.drift != 0.0:
        w = w + system.spec.drift * exp_integral(A, e, [0.0], [T])[0]
    PhiT = matrix_exponential(A * T)
    return np.linalg.solve(np.eye(A.shape[0]) - PhiT, w)


def stationary_mean(system: SampledSystem, phase: int = 1) -> float:
    """``E Y`` at phase ``phase`` (1-based)."""
    return float(system.b @ stationary_state_mean(system, phase))


def stationary_state_covariance(system: SampledSystem, beta: float, phase: int = 1) -> np.ndarray:
    """``cov X`` at ``t = phase * h`` under the periodically stationary law."""
    A, e = system.ss.A, system.ss.e
    T = system.period
    W = window_covariance(A, e, system.partition, beta, phase * system.h, T)
    return congruence_series(matrix_exponential(A * T), W)


@dataclass
class DependenceReport:
    """Phase-wise autocorrelations of ``W_n = phi(B) Y*_n``.

    ``ratios[m, l]`` is the lag-``l`` sample autocovariance of phase ``m+1``
    normalized by the lag-0 values of the two phases involved.
    """

    lags: np.ndarray
    autocovariance: np.ndarray
    ratios: np.ndarray
    p: int
    samples_per_phase: int

    @property
    def threshold(self) -> float:
        return 3.0 / np.sqrt(self.samples_per_phase)

    @property
    def max_ratio(self) -> float:
        sel = self.lags >= self.p
        return float(np.max(np.abs(self.ratios[:, sel])))

    @property
    def passed(self) -> bool:
        return self.max_ratio < self.threshold


def dependence_diagnostic(system, series, max_lag: int | None = None) -> DependenceReport:
    """Check that ``phi(B) Y*_n`` is uncorrelated beyond lag ``p - 1``.

    ``series`` holds ``Y_1..Y_N`` (phase 1 first).  By default lags up to
    ``2p - 1`` are examined, i.e. the first ``p`` lags where dependence must
    have vanished.
    """
    y = np.asarray(series, dtype=float)
    m0 = system.m0
    if y.size < 100 * m0:
        raise DomainError(f"dependence_diagnostic needs at least {100 * m0} samples, got {y.size}")
    phi = phi_coefficients(system)
    p = phi.size
    max_lag = 2 * p - 1 if max_lag is None else int(max_lag)
    _, ystar = periodic_mean(y, m0)
    N = ystar.size
    n = np.arange(p, N)  # 0-based indices with a full history
    W = ystar[n] - sum(phi[j - 1] * ystar[n - j] for j in range(1, p + 1))
    ph = n % m0
    centered = W - (np.bincount(ph, weights=W, minlength=m0) / np.bincount(ph, minlength=m0))[ph]
    lags = np.arange(max_lag + 1)
    gam = np.zeros((m0, lags.size))
    for l in lags:
        prod = centered[: W.size - l] * centered[l:]
        gam[:, l] = np.bincount(ph[: W.size - l], weights=prod, minlength=m0) / np.bincount(
            ph[: W.size - l], minlength=m0)
    v0 = gam[:, 0]
    ratios = np.empty_like(gam)
    for l in lags:
        ratios[:, l] = gam[:, l] / np.sqrt(v0 * v0[(np.arange(m0) + l) % m0])
    return DependenceReport(lags, gam, ratios, p, W.size // m0)
