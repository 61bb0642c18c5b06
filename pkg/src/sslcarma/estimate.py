"""Least-squares fitting of SSLCARMA and stationary Lévy-CARMA models.

Both estimators minimize the sum of squared one-step Kalman prediction
errors with a Nelder-Mead simplex.  Predictions are invariant under a common
rescaling of the driver covariance, so the objective only sees the *shape*
of the rate vector.  The optimizer therefore works with the ratios
``lambda_j / lambda_1``; the overall level is fixed afterwards by matching
the mean of ``eps_n^2 / Delta_n`` to one for the supplied jump second moment
``beta``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .carma import (
    ROOT_SEPARATION,
    CarmaModel,
    _solve_lyapunov_stack,
    companion,
    matrix_exponential,
)
from .exceptions import DomainError, NonConvergenceError, NumericalError, ValidationError
from .kalman import CovarianceGeometry, run_filter
from .periodic import periodic_mean
from .sampling import SampledSystem, simulate_sampled
from .semilevy import JumpLaw, PeriodPartition, SemiLevySpec, exponential_jumps

__all__ = [
    "ParameterVector",
    "OptimizerConfig",
    "FitResult",
    "StudyResult",
    "objective",
    "levy_objective",
    "fit_sslcarma",
    "fit_levy_carma",
    "auto_init",
    "simulation_study",
]

BARRIER_WIDTH = 1e-3


@dataclass(frozen=True)
class ParameterVector:
    """``(a_1..a_p, b_0..b_{q-1}, lambda_1..lambda_r)``; ``rates`` is empty for Lévy fits."""

    ar: tuple
    ma: tuple = ()
    rates: tuple = ()

    def __post_init__(self):
        for name in ("ar", "ma", "rates"):
            object.__setattr__(self, name, tuple(float(x) for x in np.atleast_1d(getattr(self, name))))
        if any(x < 0 for x in self.rates):
            raise ValidationError(f"rates must be >= 0: {self.rates}")

    @property
    def p(self) -> int:
        return len(self.ar)

    @property
    def q(self) -> int:
        return len(self.ma)

    @property
    def r(self) -> int:
        return len(self.rates)

    @property
    def labels(self) -> list:
        return ([f"a{i + 1}" for i in range(self.p)] + [f"b{i}" for i in range(self.q)]
                + [f"lambda{i + 1}" for i in range(self.r)])

    def as_array(self) -> np.ndarray:
        return np.array(self.ar + self.ma + self.rates)

    @classmethod
    def from_array(cls, x, p: int, q: int) -> "ParameterVector":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[:p]), tuple(x[p:p + q]), tuple(x[p + q:]))

    def model(self) -> CarmaModel:
        return CarmaModel(self.p, self.q, self.ar, self.ma)

    def to_dict(self) -> dict:
        return {"a": list(self.ar), "b": list(self.ma), "lambda": list(self.rates)}


@dataclass(frozen=True)
class OptimizerConfig:
    """Simplex settings.  ``fatol`` is relative to the starting objective."""

    restarts: int = 3
    maxfev: int = 2000
    fatol: float = 1e-8
    xatol: float = 1e-7
    perturbation: float = 0.3
    polish_rounds: int = 8
    polish_tol: float = 1e-12
    seed: int = 0


@dataclass
class FitResult:
    params: ParameterVector
    sse: float
    initial_sse: float
    evals: int
    iterations: int
    converged: bool
    mode: str
    lengths: tuple = ()
    m0: int = 1
    h: float = 1.0
    beta: float = 1.0
    driver_variance: float = 1.0
    transforms: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    phase_means: tuple = ()
    penalized: int = 0
    message: str = ""
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "a": list(self.params.ar),
            "b": list(self.params.ma),
            "lambda": list(self.params.rates),
            "sse": self.sse,
            "converged": bool(self.converged),
            "evals": int(self.evals),
        }
        d.update(
            mode=self.mode, iterations=int(self.iterations), initial_sse=self.initial_sse,
            lengths=list(self.lengths), m0=int(self.m0), h=self.h, beta=self.beta,
            driver_variance=self.driver_variance, transforms=dict(self.transforms),
            diagnostics=dict(self.diagnostics), phase_means=list(self.phase_means),
            penalized=int(self.penalized), message=self.message,
        )
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        params = ParameterVector(tuple(d["a"]), tuple(d.get("b", ())), tuple(d.get("lambda", ())))
        return cls(
            params=params, sse=float(d["sse"]), initial_sse=float(d.get("initial_sse", d["sse"])),
            evals=int(d["evals"]), iterations=int(d.get("iterations", 0)),
            converged=bool(d["converged"]), mode=d.get("mode", "ssl"),
            lengths=tuple(d.get("lengths", ())), m0=int(d.get("m0", 1)), h=float(d.get("h", 1.0)),
            beta=float(d.get("beta", 1.0)), driver_variance=float(d.get("driver_variance", 1.0)),
            transforms=dict(d.get("transforms", {})), diagnostics=dict(d.get("diagnostics", {})),
            phase_means=tuple(d.get("phase_means", ())), penalized=int(d.get("penalized", 0)),
            message=d.get("message", ""),
        )

    def system(self, jump_law: JumpLaw | None = None) -> SampledSystem:
        """The fitted SSLCARMA system (driver second moment ``beta``)."""
        if self.mode != "ssl":
            raise ValidationError("system() is only defined for SSLCARMA fits")
        law = jump_law or JumpLaw("fitted", 0.0, self.beta, None, False, {})
        spec = SemiLevySpec(PeriodPartition(self.lengths, self.params.rates), 0.0, law)
        return SampledSystem(self.params.model(), spec, self.m0)


# --------------------------------------------------------------------------
# objective functions


def _screen(ar, ma):
    """Companion pieces for ``(ar, ma)`` or ``None`` outside the admissible set.

    Returns ``(A, e, b, dist)`` where ``dist = -max Re(eta)``.
    """
    ar = np.asarray(ar, dtype=float)
    ma = np.asarray(ma, dtype=float)
    if not (np.all(np.isfinite(ar)) and np.all(np.isfinite(ma))):
        return None
    p, q = ar.size, ma.size
    A = companion(ar)
    eta = np.linalg.eigvals(A)
    dist = -float(np.max(eta.real))
    if dist <= 0:
        return None
    if p > 1:
        gap = np.abs(eta[:, None] - eta[None, :])
        gap[np.diag_indices(p)] = np.inf
        if gap.min() <= ROOT_SEPARATION:
            return None
    b = np.zeros(p)
    b[:q] = ma
    b[q] = 1.0
    if q > 0:
        broots = np.roots(b[: q + 1][::-1])
        # b(z) with a root in the open right half-plane has the same second
        # order structure as its reflection; keep the minimum-phase branch
        if np.any(broots.real > 0):
            return None
        if np.min(np.abs(broots[:, None] - eta[None, :])) <= 1e-8:
            return None
    e = np.zeros(p)
    e[-1] = 1.0
    return A, e, b, dist


def _barrier(dist: float) -> float:
    return BARRIER_WIDTH / dist if dist < BARRIER_WIDTH else 1.0


@lru_cache(maxsize=32)
def _geometry(lengths: tuple, m0: int) -> CovarianceGeometry:
    return CovarianceGeometry(lengths, m0)


def _ssl_filter(ar, ma, rates, geometry: CovarianceGeometry, y, beta=1.0):
    scr = _screen(ar, ma)
    if scr is None:
        return None, math.inf
    A, e, b, dist = scr
    dens = np.asarray(rates, dtype=float) / np.asarray(geometry.lengths)
    Phi, Q, om = geometry.matrices(A, e, dens, beta)
    return run_filter(Phi, b, Q, om, y), _barrier(dist)


def _levy_filter(ar, ma, h, y, var=1.0):
    scr = _screen(ar, ma)
    if scr is None:
        return None, math.inf
    A, e, b, dist = scr
    Phi = matrix_exponential(A * h)
    v = Phi @ e
    rhs = np.stack([np.outer(v, v) - np.outer(e, e), -np.outer(e, e)])
    G = var * _solve_lyapunov_stack(A, rhs)
    return run_filter(Phi, b, G[0], G[1], y), _barrier(dist)


def objective(params: ParameterVector, series, lengths, m0: int, beta: float = 1.0) -> float:
    """Sum of squared one-step errors of an already centered series.

    Parameters outside the admissible set give ``+inf``; within ``1e-3`` of
    the stability boundary the value is inflated by ``1e-3 / dist``.
    """
    if len(params.rates) != len(lengths):
        raise ValidationError("need one rate per subinterval")
    y = np.asarray(series, dtype=float)
    try:
        out, w = _ssl_filter(params.ar, params.ma, params.rates, _geometry(tuple(lengths), int(m0)),
                             y, beta)
    except (NumericalError, ValidationError):
        return math.inf
    return math.inf if out is None else out.sse * w


def levy_objective(params: ParameterVector, series, h: float = 1.0) -> float:
    """Lévy-CARMA counterpart of :func:`objective` with ``var(L_1) = 1``."""
    try:
        out, w = _levy_filter(params.ar, params.ma, h, np.asarray(series, dtype=float))
    except (NumericalError, ValidationError):
        return math.inf
    return math.inf if out is None else out.sse * w


class _Counter:
    """Wraps a coordinate objective and counts penalized evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.evals = 0
        self.penalized = 0

    def __call__(self, x):
        self.evals += 1
        try:
            val = self.fn(x)
        except (NumericalError, ValidationError, FloatingPointError):
            val = math.inf
        if not math.isfinite(val):
            self.penalized += 1
        return val


# --------------------------------------------------------------------------
# initialization


def _ar_least_squares(y, p: int):
    X = np.column_stack([y[p - k - 1: y.size - k - 1] for k in range(p)])
    phi, *_ = np.linalg.lstsq(X, y[p:], rcond=None)
    return phi, y[p:] - X @ phi


def _continuous_ar(phi, h: float) -> np.ndarray:
    """Map discrete AR coefficients to ``a_1..a_p`` through ``eta = log(z) / h``."""
    z = np.roots(np.concatenate([[1.0], -np.asarray(phi)])).astype(complex)
    mod = np.clip(np.abs(z), 1e-3, 0.98)
    ang = np.angle(z)
    # a negative real root has no real logarithm; keep only its modulus
    ang = np.where(np.abs(np.abs(ang) - np.pi) < 1e-9, 0.0, ang)
    eta = (np.log(mod) + 1j * ang) / h
    eta = np.sort_complex(eta)
    for i in range(1, eta.size):
        if abs(eta[i] - eta[i - 1]) < 1e-3:
            eta[i] = eta[i] - 0.05 * (i + 1)
    a = np.real(np.poly(eta))[1:]
    return a


def auto_init(series, m0: int, lengths, p: int, q: int) -> ParameterVector:
    """Starting point from a pooled AR(p) least-squares fit of the centered series.

    Rates start proportional to ``|B_j|`` times the mean squared AR residual
    of the phases whose cells lie in ``B_j``.
    """
    y = np.asarray(series, dtype=float)
    T = float(sum(lengths))
    h = T / m0
    phi, res = _ar_least_squares(y, p)
    a = _continuous_ar(phi, h)
    if _screen(a, np.ones(q)) is None:
        a = np.real(np.poly(-np.arange(1, p + 1) / (2.0 * h)))[1:]
    rates = ()
    if lengths:
        part = PeriodPartition(tuple(lengths), tuple(np.ones(len(lengths))))
        phase = (np.arange(p, y.size)) % m0
        msq = np.array([np.mean(res[phase == m] ** 2) if np.any(phase == m) else np.nan
                        for m in range(m0)])
        mids = (np.arange(m0) + 0.5) * h
        j = part.subinterval_index(mids)
        overall = np.nanmean(msq)
        dens = np.array([np.nanmean(msq[j == k]) if np.any(j == k) else overall
                         for k in range(part.r)])
        dens = np.where(np.isfinite(dens) & (dens > 0), dens, overall)
        rates = tuple(dens * np.asarray(part.lengths))
    return ParameterVector(tuple(a), tuple(np.ones(q)), rates)


# --------------------------------------------------------------------------
# simplex driver


def _simplex(x0, scale):
    x0 = np.asarray(x0, dtype=float)
    steps = np.maximum(scale * np.abs(x0), 0.5 * scale)
    return np.vstack([x0, x0 + np.diag(steps)])


def _minimize(fn: _Counter, starts, config: OptimizerConfig):
    trace = []
    best = None
    for k, x0 in enumerate(starts):
        f0 = fn(x0)
        if not math.isfinite(f0):
            trace.append({"start": k, "x0": list(map(float, x0)), "f0": f0, "status": "penalty"})
            continue
        res = optimize.minimize(
            fn, x0, method="Nelder-Mead",
            options={"maxfev": config.maxfev, "xatol": config.xatol,
                     "fatol": config.fatol * abs(f0), "initial_simplex": _simplex(x0, 0.1),
                     "adaptive": x0.size > 4},
        )
        trace.append({"start": k, "x0": list(map(float, x0)), "f0": f0, "f": float(res.fun),
                      "nfev": int(res.nfev), "nit": int(res.nit), "success": bool(res.success)})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not math.isfinite(best.fun):
        raise NonConvergenceError("every start lies in the penalty region", trace)
    converged = bool(best.success)
    nit = int(best.nit)
    x, f = best.x, float(best.fun)
    # a start that exhausted its budget is drifting along a ridge; polishing
    # it only burns evaluations
    for _ in range(config.polish_rounds if converged else 0):
        res = optimize.minimize(
            fn, x, method="Nelder-Mead",
            options={"maxfev": config.maxfev, "xatol": config.xatol * 1e-2,
                     "fatol": config.fatol * 1e-3 * abs(f), "initial_simplex": _simplex(x, 0.02),
                     "adaptive": x.size > 4},
        )
        nit += int(res.nit)
        gain = f - float(res.fun)
        trace.append({"polish": True, "f": float(res.fun), "nfev": int(res.nfev),
                      "success": bool(res.success)})
        if res.fun < f:
            x, f = res.x, float(res.fun)
            converged = bool(res.success)
        if gain <= config.polish_tol * abs(f):
            break
    return np.asarray(x), f, nit, converged, trace


def _perturbed_starts(x0, config: OptimizerConfig, valid):
    rng = np.random.default_rng(config.seed)
    starts = [np.asarray(x0, dtype=float)]
    tries = 0
    while len(starts) < max(1, config.restarts) and tries < 50 * config.restarts:
        tries += 1
        cand = starts[0] * np.exp(config.perturbation * rng.standard_normal(starts[0].size))
        if valid(cand):
            starts.append(cand)
    return starts


def _diagnostics(out) -> dict:
    z = out.standardized
    zc = z - z.mean()
    lag1 = float(np.dot(zc[1:], zc[:-1]) / np.dot(zc, zc)) if z.size > 2 else float("nan")
    return {"mean_innovation": float(out.innovations.mean()),
            "standardized_variance": float(np.mean(z ** 2)),
            "standardized_lag1": lag1}


def _prepare(series, m0, min_len, center):
    y = np.asarray(series, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise DomainError("series must be a finite one-dimensional array")
    if y.size < min_len:
        raise DomainError(f"series length {y.size} < required {min_len}")
    if center == "periodic":
        pm, yc = periodic_mean(y, m0)
        means = tuple(pm.means)
    elif center == "global":
        means = (float(y.mean()),)
        yc = y - means[0]
    else:
        means, yc = (), y
    scale = float(np.sqrt(np.mean(yc ** 2)))
    if not scale > 1e-300 * max(1.0, float(np.max(np.abs(y)))) or scale == 0:
        raise NonConvergenceError("series has no variation around its mean (innovation variance "
                                  "vanishes for all parameters)")
    return yc, scale, means


# --------------------------------------------------------------------------
# public estimators


def fit_sslcarma(series, m0: int, lengths, order=(2, 1), init="auto",
                 config: OptimizerConfig | None = None, beta: float = 1.0,
                 center: bool = True) -> FitResult:
    """Fit ``(a, b, lambda)`` to a sampled series with ``m0`` samples per period.

    ``series`` is on its original scale when ``center`` is true (the periodic
    mean is removed here); otherwise it must already be centered.  ``beta``
    is the second moment of the jump sizes and only sets the level of the
    returned rates.
    """
    config = config or OptimizerConfig()
    p, q = map(int, order)
    lengths = tuple(float(x) for x in lengths)
    if not lengths:
        raise ValidationError("partition lengths are required for an SSLCARMA fit")
    if not beta > 0:
        raise ValidationError("beta must be > 0")
    m0 = int(m0)
    yc, scale, means = _prepare(series, m0, 20 * m0, "periodic" if center else None)
    z = yc / scale
    geo = _geometry(lengths, m0)
    r = len(lengths)

    if init == "auto":
        init = auto_init(yc, m0, lengths, p, q)
    if not isinstance(init, ParameterVector) or init.p != p or init.q != q or init.r != r:
        raise ValidationError("init must be 'auto' or a ParameterVector of matching order")
    if init.rates[0] <= 0 or any(x <= 0 for x in init.rates):
        raise ValidationError("initial rates must be > 0")

    def unpack(x):
        logratio = np.clip(x[p + q:], -50, 50)
        return x[:p], x[p:p + q], np.concatenate([[1.0], np.exp(logratio)])

    def coord_obj(x):
        ar, ma, lam = unpack(x)
        out, w = _ssl_filter(ar, ma, lam, geo, z)
        return math.inf if out is None else out.sse * w

    x0 = np.concatenate([init.ar, init.ma, np.log(np.asarray(init.rates[1:]) / init.rates[0])])
    fn = _Counter(coord_obj)
    initial = fn(x0)
    starts = _perturbed_starts(x0, config, lambda c: _screen(c[:p], c[p:p + q]) is not None)
    x, f, nit, converged, trace = _minimize(fn, starts, config)
    ar, ma, lam0 = unpack(x)
    out, _ = _ssl_filter(ar, ma, lam0, geo, z)
    level = scale ** 2 * float(np.mean(out.innovations ** 2 / out.variances)) / beta
    rates = tuple(lam0 * level)
    params = ParameterVector(tuple(ar), tuple(ma), rates)
    final, _ = _ssl_filter(ar, ma, rates, geo, yc, beta)
    return FitResult(
        params=params, sse=final.sse, initial_sse=initial * scale ** 2, evals=fn.evals,
        iterations=nit, converged=converged, mode="ssl", lengths=lengths, m0=m0, h=geo.h,
        beta=float(beta), driver_variance=float(beta),
        transforms={**{f"a{i + 1}": "raw" for i in range(p)}, **{f"b{i}": "raw" for i in range(q)},
                    "lambda1": "level from innovation variance",
                    **{f"lambda{j + 1}": "log(lambda_j/lambda_1)" for j in range(1, r)}},
        diagnostics=_diagnostics(final), phase_means=means, penalized=fn.penalized,
        message="" if converged else "simplex stopped at the evaluation cap", trace=trace,
    )


def fit_levy_carma(series, order=(2, 1), h: float = 1.0, init="auto",
                   config: OptimizerConfig | None = None, center: bool = True) -> FitResult:
    """Fit a CARMA(p, q) driven by a stationary Lévy process.

    The driver variance is fixed to one inside the objective; the reported
    ``driver_variance`` is the level implied by the innovations.
    """
    config = config or OptimizerConfig()
    p, q = map(int, order)
    yc, scale, means = _prepare(series, 1, max(20, 4 * p), "global" if center else None)
    z = yc / scale
    if init == "auto":
        base = auto_init(yc, 1, (h,), p, q)
        init = ParameterVector(base.ar, base.ma)
    if not isinstance(init, ParameterVector) or init.p != p or init.q != q:
        raise ValidationError("init must be 'auto' or a ParameterVector of matching order")

    def coord_obj(x):
        out, w = _levy_filter(x[:p], x[p:], h, z)
        return math.inf if out is None else out.sse * w

    x0 = np.concatenate([init.ar, init.ma])
    fn = _Counter(coord_obj)
    initial = fn(x0)
    starts = _perturbed_starts(x0, config, lambda c: _screen(c[:p], c[p:]) is not None)
    x, f, nit, converged, trace = _minimize(fn, starts, config)
    out, _ = _levy_filter(x[:p], x[p:], h, z)
    var = scale ** 2 * float(np.mean(out.innovations ** 2 / out.variances))
    final, _ = _levy_filter(x[:p], x[p:], h, yc)
    params = ParameterVector(tuple(x[:p]), tuple(x[p:]))
    return FitResult(
        params=params, sse=final.sse, initial_sse=initial * scale ** 2, evals=fn.evals,
        iterations=nit, converged=converged, mode="levy", lengths=(), m0=1, h=float(h),
        beta=1.0, driver_variance=var,
        transforms={**{f"a{i + 1}": "raw" for i in range(p)}, **{f"b{i}": "raw" for i in range(q)}},
        diagnostics={**_diagnostics(final), "constant_q": True}, phase_means=means,
        penalized=fn.penalized,
        message="" if converged else "simplex stopped at the evaluation cap", trace=trace,
    )


# --------------------------------------------------------------------------
# simulation study


@dataclass
class StudyResult:
    truth: ParameterVector
    labels: list
    estimates: np.ndarray
    failures: list
    periods: int
    seed: int | None

    @property
    def ok(self) -> np.ndarray:
        return ~np.any(np.isnan(self.estimates), axis=1)

    @property
    def mean(self) -> np.ndarray:
        ok = self.estimates[self.ok]
        return ok.mean(axis=0) if len(ok) else np.full(self.estimates.shape[1], np.nan)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.truth.as_array()

    @property
    def std(self) -> np.ndarray:
        ok = self.estimates[self.ok]
        return ok.std(axis=0, ddof=1) if len(ok) > 1 else np.full(self.estimates.shape[1], np.nan)

    def table(self) -> list:
        return [("Mean", self.mean), ("Bias", self.bias), ("Std. dev.", self.std)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(["statistic"] + self.labels + ["failures"]) + "\n")
            for name, row in self.table():
                fh.write(",".join([name] + [f"{v:.17g}" for v in row] + [str(len(self.failures))])
                         + "\n")


def _study_worker(args):
    index, seq, truth, lengths, m0, jump_law, drift, periods, burn_in, config = args
    spec = SemiLevySpec(PeriodPartition(lengths, truth.rates), drift, jump_law)
    system = SampledSystem(truth.model(), spec, m0)
    path = simulate_sampled(system, periods * m0, burn_in_periods=burn_in, seed=seq)
    try:
        fit = fit_sslcarma(path.observations, m0, lengths, (truth.p, truth.q), "auto", config,
                           beta=jump_law.second_moment)
    except (NonConvergenceError, NumericalError) as exc:
        return index, None, str(exc)
    if not fit.converged:
        return index, fit.params.as_array(), "evaluation cap reached"
    return index, fit.params.as_array(), None



def simulation_study(truth: ParameterVector, replications: int, periods: int, seed=None,
                     lengths=(10.0, 2.0, 1.0), m0: int = 13, jump_law: JumpLaw | None = None,
                     drift: float = 0.0, burn_in: int = 50, config: OptimizerConfig | None = None,
                     threads: int | None = None) -> StudyResult:
    """Simulate ``replications`` paths of ``periods`` periods and fit each one.

    Replication ``i`` uses child ``i`` of ``SeedSequence(seed)`` so results
    do not depend on the number of worker processes.  Fits that fail or stop
    at the evaluation cap are listed in ``failures`` (with their last iterate)
    and excluded from the moments.
    """
    if replications < 2:
        raise ValidationError("simulation_study needs at least 2 replications")
    jump_law = jump_law or exponential_jumps(0.25)
    config = config or OptimizerConfig()
    lengths = tuple(float(x) for x in lengths)
    children = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(i, children[i], truth, lengths, m0, jump_law, drift, periods, burn_in, config)
            for i in range(replications)]
    threads = threads or os.cpu_count() or 1
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_study_worker, jobs))
    else:
        results = [_study_worker(j) for j in jobs]
    k = truth.as_array().size
    est = np.full((replications, k), np.nan)
    failures = []
    for index, values, err in sorted(results, key=lambda t: t[0]):
        if err is None:
            est[index] = values
        else:
            last = None if values is None else [float(v) for v in values]
            failures.append({"replication": index, "reason": err, "last": last})
    return StudyResult(truth, truth.labels, est, failures, periods, seed)
