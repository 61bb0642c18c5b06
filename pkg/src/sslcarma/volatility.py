"""Realized volatility, median-based deseasonalization and the in-sample comparison.

Two prediction pipelines are compared on a realized-volatility series:

* ``A``: remove the periodic mean, fit an SSLCARMA model and add the
  periodic mean back to the one-step predictions;
* ``B``: deseasonalize with ``(RV - mu) / nu_phase``, fit a stationary
  Lévy-driven CARMA model to the filtered series and map the predictions
  back with ``nu_phase * rv + mu``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimate import FitResult, OptimizerConfig, fit_levy_carma, fit_sslcarma
from .exceptions import DomainError, NonConvergenceError, NumericalError, ValidationError
from .kalman import run_filter, system_covariances
from .periodic import PeriodicMean
from .sampling import LevySystem

__all__ = [
    "PriceSeries",
    "RvSeries",
    "SeasonalFilter",
    "AperiodicityReport",
    "ComparisonReport",
    "realized_volatility",
    "deseasonalize",
    "reseasonalize",
    "aperiodicity_test",
    "fitted_predictions",
    "compare_in_sample",
]


@dataclass(frozen=True)
class PriceSeries:
    """Intraday prices.  ``obs_per_day`` declares the daily layout if known."""

    timestamps: np.ndarray
    prices: np.ndarray
    obs_per_day: int | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.shape != p.shape or p.ndim != 1:
            raise ValidationError("timestamps and prices must be 1-d arrays of equal length")
        if p.size < 2:
            raise ValidationError("need at least two prices")
        if not np.all(np.isfinite(p)) or np.any(p <= 0):
            raise DomainError("prices must be finite and > 0")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if self.obs_per_day is not None and (int(self.obs_per_day) != self.obs_per_day
                                             or self.obs_per_day < 1):
            raise ValidationError("obs_per_day must be a positive integer")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "prices", p)

    @classmethod
    def from_prices(cls, prices, obs_per_day=None) -> "PriceSeries":
        prices = np.asarray(prices, dtype=float)
        return cls(np.arange(prices.size, dtype=float), prices, obs_per_day)


@dataclass(frozen=True)
class RvSeries:
    values: np.ndarray
    m0: int
    k: int | None = None
    source: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValidationError("RV values must be a finite 1-d array")
        if np.any(v < 0):
            raise DomainError("RV values must be >= 0")
        if int(self.m0) != self.m0 or self.m0 < 1:
            raise ValidationError("m0 must be a positive integer")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "m0", int(self.m0))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SeasonalFilter:
    """Global mean ``mu`` and per-phase scales ``nu_1..nu_M0``."""

    mean: float
    scales: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scales, dtype=float)
        if s.ndim != 1 or s.size < 1:
            raise ValidationError("scales must be a non-empty 1-d array")
        if not np.all(s > 0):
            raise DomainError("seasonal filter undefined: a phase scale is not positive")
        object.__setattr__(self, "scales", s)

    @property
    def m0(self) -> int:
        return self.scales.size

    def phase_scales(self, n: int, offset: int = 0) -> np.ndarray:
        return self.scales[(np.arange(n) + offset) % self.m0]


def realized_volatility(prices: PriceSeries, k: int) -> RvSeries:
    """Block sums of ``k`` squared log returns.

    Without a declared layout the ``L`` prices give ``L - 1`` returns which
    must split into whole blocks, and the result has ``m0 = 1``.  With
    ``obs_per_day`` set, the series must hold whole days and each day whole
    blocks; returns run across day boundaries and the first price is taken
    as its own predecessor, so ``L`` prices yield ``L / k`` blocks and
    ``m0 = obs_per_day / k``.
    """
    k = int(k)
    if k < 1:
        raise ValidationError("k must be >= 1")
    logp = np.log(prices.prices)
    if prices.obs_per_day is None:
        d = np.diff(logp)
        if d.size % k:
            raise ValidationError(f"{d.size} returns do not split into blocks of {k} "
                                  "(ragged final block)")
        m0 = 1
    else:
        opd = int(prices.obs_per_day)
        if logp.size % opd:
            raise ValidationError(f"{logp.size} prices are not whole days of {opd}")
        if opd % k:
            raise ValidationError(f"{opd} observations per day do not split into blocks of {k}")
        d = np.diff(logp, prepend=logp[0])
        m0 = opd // k
    rv = np.sum(d.reshape(-1, k) ** 2, axis=1)
    return RvSeries(rv, m0, k, "prices")


def deseasonalize(rv: RvSeries):
    """Return ``(rv_n, SeasonalFilter)`` with ``rv_n = (RV_n - mu) / nu_phase(n)``.

    ``nu_m`` is the median of ``|RV|`` over the occurrences of phase ``m``;
    an even count uses the mean of the two central order statistics.
    """
    x = rv.values
    m0 = rv.m0
    if x.size < 2 * m0:
        raise DomainError(f"need at least {2 * m0} values to deseasonalize, got {x.size}")
    mu = float(np.mean(x))
    ph = np.arange(x.size) % m0
    nu = np.array([np.median(np.abs(x[ph == m])) for m in range(m0)])
    if np.any(nu <= 0):
        bad = (np.flatnonzero(nu <= 0) + 1).tolist()
        raise DomainError(f"degenerate seasonal filter: zero median at phase(s) {bad}")
    filt = SeasonalFilter(mu, nu)
    return (x - mu) / nu[ph], filt


def reseasonalize(values, filt: SeasonalFilter, offset: int = 0) -> np.ndarray:
    """Inverse filter ``nu_phase(n) * x_n + mu``."""
    x = np.asarray(values, dtype=float)
    return filt.phase_scales(x.size, offset) * x + filt.mean


@dataclass
class AperiodicityReport:
    statistic: float
    threshold: float
    level: float
    permutations: int

    @property
    def passed(self) -> bool:
        return self.statistic < self.threshold


def _phase_spread(x, ph, m0):
    counts = np.bincount(ph, minlength=m0)
    sums = np.bincount(ph, weights=x, minlength=m0)
    means = sums / counts
    resid = x - means[ph]
    pooled = np.sqrt(np.sum(resid ** 2) / (x.size - m0))
    return float(np.max(np.abs(means - x.mean()) / (pooled / np.sqrt(counts))))


def aperiodicity_test(series, m0: int, level: float = 0.01, permutations: int = 999,
                      seed=None) -> AperiodicityReport:
    """Largest standardized phase-mean deviation against a permutation threshold."""
    x = np.asarray(series, dtype=float)
    if x.size < 2 * m0:
        raise DomainError("series too short for a phase comparison")
    ph = np.arange(x.size) % m0
    stat = _phase_spread(x, ph, m0)
    rng = np.random.default_rng(seed)
    null = np.array([_phase_spread(rng.permutation(x), ph, m0) for _ in range(permutations)])
    return AperiodicityReport(stat, float(np.quantile(null, 1 - level)), level, permutations)


def fitted_predictions(fit: FitResult, series) -> np.ndarray:
    """One-step predictions on the scale of ``series`` from a fit.

    The same centering as in the fit is applied: the stored phase means for
    SSLCARMA fits, the stored global mean for Lévy fits.
    """
    y = np.asarray(series, dtype=float)
    if fit.mode == "ssl":
        mean = PeriodicMean(np.asarray(fit.phase_means))
        system = fit.system()
        Q, om = system_covariances(system, fit.beta)
        out = run_filter(system.transition, system.b, Q, om, y - mean.expand(y.size))
        return out.predictions + mean.expand(y.size)
    mu = fit.phase_means[0] if fit.phase_means else 0.0
    system = LevySystem(fit.params.model(), fit.h)
    Q, om = system_covariances(system, fit.driver_variance)
    out = run_filter(system.transition, system.b, Q, om, y - mu)
    return out.predictions + mu


@dataclass
class ComparisonReport:
    mae_sslcarma: float
    mae_levy: float
    errors_sslcarma: np.ndarray
    errors_levy: np.ndarray
    fit_sslcarma: FitResult | None = None
    fit_levy: FitResult | None = None
    seasonal: SeasonalFilter | None = None
    failures: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if not (np.isfinite(self.mae_sslcarma) and np.isfinite(self.mae_levy)):
            return float("nan")
        if self.mae_levy == 0:
            return 1.0 if self.mae_sslcarma == 0 else float("inf")
        return self.mae_sslcarma / self.mae_levy

    @property
    def failed(self) -> bool:
        return bool(self.failures)

    def summary(self) -> dict:
        out = {"mae_sslcarma": self.mae_sslcarma, "mae_levy": self.mae_levy, "ratio": self.ratio}
        if self.failures:
            out["failures"] = dict(self.failures)
        for name, fit in (("fit_sslcarma", self.fit_sslcarma), ("fit_levy", self.fit_levy)):
            if fit is not None:
                out[name] = fit.to_dict()
        return out


def _pipeline_a(values, m0, order, lengths, config, beta):
    fit = fit_sslcarma(values, m0, lengths, order, "auto", config, beta=beta)
    return fit, fitted_predictions(fit, values)


def _pipeline_b(values, m0, order, config):
    filtered, filt = deseasonalize(RvSeries(values, m0))
    fit = fit_levy_carma(filtered, order, 1.0, "auto", config)
    return fit, reseasonalize(fitted_predictions(fit, filtered), filt), filt


def _guard(fn, *args):
    try:
        return fn(*args), None
    except (NonConvergenceError, NumericalError, DomainError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def compare_in_sample(rv: RvSeries, order=(2, 1), lengths=(10.0, 2.0, 1.0),
                      config: OptimizerConfig | None = None, beta: float = 1.0,
                      threads: int = 1) -> ComparisonReport:
    """Mean absolute in-sample one-step errors of pipelines ``A`` and ``B``."""
    x = rv.values
    if x.size < 20 * rv.m0:
        raise DomainError(f"need at least {20 * rv.m0} values, got {x.size}")
    config = config or OptimizerConfig()
    args_a = (_pipeline_a, x, rv.m0, order, tuple(lengths), config, beta)
    args_b = (_pipeline_b, x, rv.m0, order, config)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=2) as pool:
            fa = pool.submit(_guard, *args_a)
            fb = pool.submit(_guard, *args_b)
            res_a, res_b = fa.result(), fb.result()
    else:
        res_a, res_b = _guard(*args_a), _guard(*args_b)
    failures = {}
    nan = np.full(x.size, np.nan)
    fit_a = fit_b = filt = None
    err_a = err_b = nan
    if res_a[1] is None:
        fit_a, pred = res_a[0]
        err_a = np.abs(x - pred)
        if not fit_a.converged:
            failures["sslcarma"] = "evaluation cap reached"
    else:
        failures["sslcarma"] = res_a[1]
    if res_b[1] is None:
        fit_b, pred, filt = res_b[0]
        err_b = np.abs(x - pred)
        if not fit_b.converged:
            failures["levy"] = "evaluation cap reached"
    else:
        failures["levy"] = res_b[1]
    return ComparisonReport(float(np.mean(err_a)), float(np.mean(err_b)), err_a, err_b,
                            fit_a, fit_b, filt, failures)
