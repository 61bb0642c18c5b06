"""Simple semi-Lévy compound Poisson drivers.

A driver is a compound Poisson process whose jump intensity is piecewise
constant within a period ``T``: the period is cut into subintervals
``B_j = (s_{j-1}, s_j]`` of lengths ``|B_j|`` and ``lambda_j`` jumps are
expected on ``B_j`` in every period.  The cumulative intensity is therefore
piecewise linear with slope ``lambda_j / |B_j|`` on ``B_j`` and grows by
``sum(lambda)`` each period.

Paths are simulated exactly: jump counts are drawn per piece of constant
intensity and jump epochs are uniform inside each piece, so downstream code
can integrate deterministic kernels at the true jump times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .exceptions import DomainError, ValidationError

__all__ = [
    "PeriodPartition",
    "JumpLaw",
    "SemiLevySpec",
    "PathRealization",
    "PathGenerator",
    "TwoSidedSemiLevy",
    "exponential_jumps",
    "deterministic_jumps",
    "cumulative_rate",
    "locate",
    "rate_pieces",
    "simulate_increments",
    "two_sided_extension",
    "make_rng",
]


def make_rng(seed=None) -> np.random.Generator:
    """Return a PCG64 generator; generators and seed sequences pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PeriodPartition:
    """Subinterval lengths ``|B_1|..|B_r|`` and per-period jump rates."""

    lengths: tuple
    rates: tuple

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        rates = tuple(float(x) for x in np.atleast_1d(self.rates))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "rates", rates)
        if len(lengths) == 0 or len(lengths) != len(rates):
            raise ValidationError(
                f"lengths and rates must have equal positive length, "
                f"got {len(lengths)} and {len(rates)}"
            )
        if not all(math.isfinite(x) and x > 0 for x in lengths):
            raise ValidationError(f"subinterval lengths must be finite and > 0: {lengths}")
        if not all(math.isfinite(x) and x >= 0 for x in rates):
            raise ValidationError(f"rates must be finite and >= 0: {rates}")
        b = self.boundaries
        if not np.all(np.diff(b) > 0):
            raise ValidationError("partition boundaries are not strictly increasing")

    @property
    def r(self) -> int:
        return len(self.lengths)

    @property
    def period(self) -> float:
        return float(sum(self.lengths))

    @property
    def boundaries(self) -> np.ndarray:
        """``s_0 = 0 < s_1 < ... < s_r = T``."""
        return np.concatenate([[0.0], np.cumsum(self.lengths)])

    @property
    def densities(self) -> np.ndarray:
        """Intensity slopes ``lambda_j / |B_j|``."""
        return np.asarray(self.rates) / np.asarray(self.lengths)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    def with_rates(self, rates) -> "PeriodPartition":
        return PeriodPartition(self.lengths, tuple(rates))

    def density_at(self, t, mirrored: bool = False) -> np.ndarray:
        """Intensity slope at time(s) ``t`` (any real t, periodic continuation).

        With ``mirrored=True`` negative times use the reflected intensity
        ``density(-t)``, which is the law of the two-sided extension built
        from two independent copies.  Values at exact breakpoints follow the
        left-open convention.
        """
        return self.densities[self.subinterval_index(t, mirrored)]

    def subinterval_index(self, t, mirrored: bool = False) -> np.ndarray:
        """0-based index ``j-1`` of the subinterval containing ``t mod T``."""
        t = np.asarray(t, dtype=float)
        if mirrored:
            t = np.abs(t)
        T = self.period
        s = np.mod(t, T)
        # s == 0 is the right end of the previous period, which lies in B_r
        s = np.where(s == 0.0, T, s)
        j = np.searchsorted(self.boundaries[1:], s, side="left")
        return np.minimum(j, self.r - 1)


def cumulative_rate(partition: PeriodPartition, t):
    """Cumulative intensity ``Lambda_t`` for ``t >= 0`` (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError("cumulative_rate requires finite t >= 0")
    T = partition.period
    k = np.floor(arr / T)
    s = arr - k * T
    knots = np.concatenate([[0.0], np.cumsum(partition.rates)])
    out = k * partition.total_rate + np.interp(s, partition.boundaries, knots)
    return float(out) if np.ndim(out) == 0 else out


def locate(partition: PeriodPartition, t: float):
    """Invert ``t = (k-1) T + s`` with ``s`` in ``B_j``.

    Returns 1-based ``(k, j, offset)`` where ``offset = s - s_{j-1}``.  A
    boundary point ``s_j`` belongs to ``B_j`` (left-open subintervals).
    """
    t = float(t)
    if not (t > 0 and math.isfinite(t)):
        raise DomainError(f"locate requires finite t > 0, got {t}")
    T = partition.period
    k = math.ceil(t / T)
    s = t - (k - 1) * T
    if s <= 0:  # guards rounding in ceil
        k -= 1
        s += T
    b = partition.boundaries
    j = int(np.searchsorted(b[1:], s, side="left"))
    j = min(j, partition.r - 1)
    return k, j + 1, s - b[j]


def rate_pieces(partition: PeriodPartition, start: float, end: float, mirrored: bool = False):
    """Split ``(start, end]`` at the intensity breakpoints.

    Returns ``(left, right, density)`` arrays describing consecutive pieces
    of constant intensity slope.
    """
    if end < start:
        raise DomainError("rate_pieces requires start <= end")
    if end == start:
        empty = np.empty(0)
        return empty, empty.copy(), empty.copy()
    T = partition.period
    inner = partition.boundaries[1:-1]
    k0 = math.floor(start / T) - 1
    k1 = math.ceil(end / T) + 1
    ks = np.arange(k0, k1 + 1)
    cuts = np.concatenate([(ks * T)[:, None] + np.concatenate([[0.0], inner])[None, :]]).ravel()
    if mirrored:
        cuts = np.concatenate([cuts, -cuts])
    cuts = cuts[(cuts > start) & (cuts < end)]
    edges = np.unique(np.concatenate([[start], cuts, [end]]))
    left, right = edges[:-1], edges[1:]
    dens = partition.density_at(0.5 * (left + right), mirrored=mirrored)
    return left, right, dens


@dataclass(frozen=True)
class JumpLaw:
    """Jump-size distribution with declared first and second moments."""

    name: str
    mean: float
    second_moment: float
    sampler: Callable = field(compare=False, repr=False)
    nonnegative: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.second_moment < self.mean ** 2 * (1 - 1e-12):
            raise ValidationError(
                f"jump second moment {self.second_moment} is below squared mean {self.mean ** 2}"
            )

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.asarray(self.sampler(rng, size), dtype=float)

    def to_dict(self) -> dict:
        return {"law": self.name, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "JumpLaw":
        d = dict(d)
        law = d.pop("law", None)
        if law == "exponential":
            rate = d.pop("rate")
            if d:
                raise ValidationError(f"unknown jump_law keys: {sorted(d)}")
            return exponential_jumps(rate)
        if law == "deterministic":
            size = d.pop("size")
            if d:
                raise ValidationError(f"unknown jump_law keys: {sorted(d)}")
            return deterministic_jumps(size)
        raise ValidationError(f"unknown jump law {law!r}")


# module-level samplers keep JumpLaw picklable for worker processes
def _exponential_sampler(scale, rng, n):
    return rng.exponential(scale, n)


def _constant_sampler(size, rng, n):
    return np.full(n, size)


def exponential_jumps(rate: float) -> JumpLaw:
    """Exponential jump sizes with rate ``rate`` (mean ``1/rate``)."""
    rate = float(rate)
    if not rate > 0:
        raise ValidationError("exponential jump rate must be > 0")
    scale = 1.0 / rate
    return JumpLaw(
        name="exponential",
        mean=scale,
        second_moment=2.0 * scale * scale,
        sampler=partial(_exponential_sampler, scale),
        nonnegative=True,
        params={"rate": rate},
    )


def deterministic_jumps(size: float) -> JumpLaw:
    size = float(size)
    return JumpLaw(
        name="deterministic",
        mean=size,
        second_moment=size * size,
        sampler=partial(_constant_sampler, size),
        nonnegative=size >= 0,
        params={"size": size},
    )


@dataclass(frozen=True)
class SemiLevySpec:
    """Drift, jump law and partition of a simple semi-Lévy driver."""

    partition: PeriodPartition
    drift: float = 0.0
    jump_law: JumpLaw = field(default_factory=lambda: exponential_jumps(1.0))
    require_nonnegative: bool = False

    def __post_init__(self):
        if self.require_nonnegative and not self.jump_law.nonnegative:
            raise ValidationError(
                f"jump law {self.jump_law.name!r} is not a.s. nonnegative"
            )

    @property
    def jump_mean(self) -> float:
        return self.jump_law.mean

    @property
    def jump_second_moment(self) -> float:
        return self.jump_law.second_moment

    def mean(self, t):
        """``E S_t = drift * t + Lambda_t * kappa``."""
        return self.drift * np.asarray(t, float) + cumulative_rate(self.partition, t) * self.jump_mean

    def variance(self, t):
        """``var S_t = Lambda_t * beta``."""
        return cumulative_rate(self.partition, t) * self.jump_second_moment


@dataclass
class PathRealization:
    """Increments of a driver over a grid plus the exact jumps."""

    grid: np.ndarray
    increments: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    jump_cells: np.ndarray
    seed: object = None

    @property
    def values(self) -> np.ndarray:
        """``S(t_n) - S(t_0)`` at each grid point (first entry 0)."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def cell_jump_times(self, n: int) -> np.ndarray:
        return self.jump_times[self.jump_cells == n]


def _simulate(spec: SemiLevySpec, grid, rng, mirrored=False, seed=None) -> PathRealization:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise DomainError("grid needs at least two points")
    if not np.all(np.isfinite(grid)):
        raise DomainError("grid must be finite")
    if not np.all(np.diff(grid) > 0):
        raise DomainError("grid must be strictly increasing")
    left, right, dens = rate_pieces(spec.partition, grid[0], grid[-1], mirrored=mirrored)
    # merge grid points into the breakpoint pieces so each piece sits in one cell
    edges = np.unique(np.concatenate([left, right[-1:], grid]))
    left, right = edges[:-1], edges[1:]
    dens = spec.partition.density_at(0.5 * (left + right), mirrored=mirrored)
    cell_of_piece = np.searchsorted(grid, right, side="left") - 1
    counts = rng.poisson(dens * (right - left))
    total = int(counts.sum())
    piece = np.repeat(np.arange(left.size), counts)
    u = rng.random(total)
    times = left[piece] + (right[piece] - left[piece]) * u
    sizes = spec.jump_law.sample(rng, total)
    order = np.argsort(times, kind="stable")
    times, sizes, cells = times[order], sizes[order], cell_of_piece[piece][order]
    ncell = grid.size - 1
    inc = spec.drift * np.diff(grid) + np.bincount(cells, weights=sizes, minlength=ncell)
    return PathRealization(grid, inc, times, sizes, cells, seed)


def simulate_increments(spec: SemiLevySpec, grid, seed=None) -> PathRealization:
    """Simulate driver increments on ``grid`` (``grid[0] >= 0``).

    Jump counts in each piece of constant intensity are Poisson, jump epochs
    are uniform within the piece and jump sizes are drawn from the jump law.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size and grid[0] < 0:
        raise DomainError("simulate_increments requires grid start >= 0")
    return _simulate(spec, grid, make_rng(seed), seed=seed)


@dataclass
class PathGenerator:
    """Seeded generator of independent driver paths."""

    spec: SemiLevySpec
    seed_seq: np.random.SeedSequence

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed_seq)

    def simulate(self, grid) -> PathRealization:
        grid = np.asarray(grid, dtype=float)
        if grid.size and grid[0] < 0:
            raise DomainError("one-sided generators need grid start >= 0")
        return _simulate(self.spec, grid, self._rng, seed=self.seed_seq.entropy)


@dataclass
class TwoSidedSemiLevy:
    """Driver on the whole real line built from two independent copies.

    ``S_t = S1_t`` for ``t >= 0`` and ``S_t = -S2_{-t}`` for ``t <= 0``; the
    negative half-line therefore carries the reflected intensity.
    """

    spec: SemiLevySpec
    forward: PathGenerator
    backward: PathGenerator

    def simulate(self, grid) -> PathRealization:
        """Increments of the two-sided driver on an arbitrary real grid."""
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or not np.all(np.diff(grid) > 0):
            raise DomainError("grid must be strictly increasing with >= 2 points")
        work = grid
        if grid[0] < 0 < grid[-1] and not np.any(grid == 0.0):
            work = np.sort(np.append(grid, 0.0))
        inc = np.zeros(work.size - 1)
        times, sizes, cells = [], [], []
        neg = work[work <= 0]
        if neg.size >= 2:
            back = self.backward.simulate(-neg[::-1] + 0.0)
            # S over (a, b] with b <= 0 equals S2 over (-b, -a]
            inc[: neg.size - 1] = back.increments[::-1]
            times.append(-back.jump_times)
            sizes.append(back.jump_sizes)
            cells.append((neg.size - 2) - back.jump_cells)
        pos = work[work >= 0]
        if pos.size >= 2:
            fwd = self.forward.simulate(pos)
            off = work.size - pos.size
            inc[off:] = fwd.increments
            times.append(fwd.jump_times)
            sizes.append(fwd.jump_sizes)
            cells.append(fwd.jump_cells + off)
        jt = np.concatenate(times)
        order = np.argsort(jt, kind="stable")
        jt, js, jc = jt[order], np.concatenate(sizes)[order], np.concatenate(cells)[order]
        if work is not grid:
            # map cells of the refined grid back onto the caller's cells
            cell_map = np.searchsorted(grid, work[1:], side="left") - 1
            jc = cell_map[jc]
            inc = np.bincount(cell_map, weights=inc, minlength=grid.size - 1)
        return PathRealization(grid, inc, jt, js, jc.astype(int), None)


def two_sided_extension(spec: SemiLevySpec, seed=None) -> TwoSidedSemiLevy:
    """Independent forward and backward copies with spawned seed streams."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    fwd, back = ss.spawn(2)
    return TwoSidedSemiLevy(spec, PathGenerator(spec, fwd), PathGenerator(spec, back))
