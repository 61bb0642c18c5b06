"""CARMA(p, q) models, companion state space and Gramian calculus.

The state equation is ``dX = A X dt + e dS`` with the companion matrix

    A = [[0, 1, 0, ..., 0],
         ...,
         [-a_p, -a_{p-1}, ..., -a_1]],    e = (0, ..., 0, 1)',

and the observation is ``Y = b' X`` with ``b = (b_0, ..., b_{q-1}, 1, 0, ...)``.
Every noise covariance used downstream is a weighted sum of Gramians

    G(t1, t2) = int_{t1}^{t2} e^{Au} e e' e^{A'u} du,

which are obtained from the Lyapunov identity
``A G + G A' = F(t2) - F(t1)`` with ``F(t) = e^{At} e e' e^{A't}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .exceptions import DomainError, NumericalError, UnsupportedError, ValidationError
from .semilevy import PeriodPartition, rate_pieces

__all__ = [
    "CarmaModel",
    "StateSpaceMatrices",
    "KernelCheck",
    "companion",
    "ar_roots",
    "ar_from_roots",
    "build_state_space",
    "kernel",
    "residue_kernel",
    "check_nonnegative_kernel",
    "matrix_exponential",
    "exp_vectors",
    "gramian_finite",
    "gramian_infinite",
    "interval_gramians",
    "exp_integral",
    "periodic_tail_sum",
    "window_covariance",
    "congruence_series",
]

ROOT_SEPARATION = 1e-8
COMMON_ROOT_TOL = 1e-8
TAIL_TOL = 1e-14


def companion(ar) -> np.ndarray:
    """Companion matrix of ``a(z) = z^p + a_1 z^{p-1} + ... + a_p``."""
    ar = np.asarray(ar, dtype=float)
    p = ar.size
    A = np.zeros((p, p))
    if p > 1:
        A[np.arange(p - 1), np.arange(1, p)] = 1.0
    A[-1, :] = -ar[::-1]
    return A


def ar_roots(ar) -> np.ndarray:
    """Roots of ``a(z)``: companion eigensolve followed by one Newton step."""
    ar = np.asarray(ar, dtype=float)
    roots = np.linalg.eigvals(companion(ar)).astype(complex)
    coeffs = np.concatenate([[1.0], ar])
    dcoeffs = np.polyder(coeffs)
    for i, z in enumerate(roots):
        d = np.polyval(dcoeffs, z)
        if d != 0:
            step = np.polyval(coeffs, z) / d
            if abs(step) < 1e-6 * max(1.0, abs(z)):
                roots[i] = z - step
    # restore exact conjugate symmetry destroyed by independent polishing
    real = np.abs(roots.imag) < 1e-12 * np.maximum(1.0, np.abs(roots))
    roots[real] = roots[real].real
    return roots[np.lexsort((roots.imag, -roots.real))]


def ar_from_roots(roots) -> np.ndarray:
    """AR coefficients ``(a_1..a_p)`` of the monic polynomial with these roots."""
    c = np.poly(np.asarray(roots))
    if np.max(np.abs(np.imag(c))) > 1e-10 * max(1.0, np.max(np.abs(c))):
        raise ValidationError("roots are not closed under conjugation")
    return np.real(c[1:])


@dataclass(frozen=True)
class CarmaModel:
    """CARMA(p, q) coefficients; ``ma`` holds ``b_0..b_{q-1}`` (``b_q = 1``)."""

    p: int
    q: int
    ar: tuple
    ma: tuple = ()

    def __post_init__(self):
        ar = tuple(float(x) for x in np.atleast_1d(self.ar))
        ma = tuple(float(x) for x in np.atleast_1d(self.ma)) if len(np.atleast_1d(self.ma)) else ()
        object.__setattr__(self, "ar", ar)
        object.__setattr__(self, "ma", ma)
        p, q = int(self.p), int(self.q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p < 1 or not 0 <= q < p:
            raise ValidationError(f"need p >= 1 and 0 <= q < p, got p={p}, q={q}")
        if len(ar) != p:
            raise ValidationError(f"expected {p} AR coefficients, got {len(ar)}")
        if len(ma) != q:
            raise ValidationError(f"expected {q} MA coefficients b_0..b_(q-1), got {len(ma)}")
        if not all(math.isfinite(x) for x in ar + ma):
            raise ValidationError("coefficients must be finite")
        roots = ar_roots(ar)
        bad = roots[roots.real >= 0]
        if bad.size:
            raise ValidationError(
                f"stability condition violated: eigenvalue(s) {np.round(bad, 10).tolist()} "
                "do not have negative real part"
            )
        if p > 1:
            dist = np.abs(roots[:, None] - roots[None, :])
            dist[np.diag_indices(p)] = np.inf
            i, j = np.unravel_index(np.argmin(dist), dist.shape)
            if dist[i, j] <= ROOT_SEPARATION:
                raise ValidationError(
                    f"distinct-root condition violated: eigenvalues {roots[i]:.10g} and {roots[j]:.10g} "
                    "are not distinct; perturb the AR coefficients"
                )
        if q > 0:
            broots = np.roots(self.b[: q + 1][::-1])
            d = np.min(np.abs(broots[:, None] - roots[None, :]))
            if d <= COMMON_ROOT_TOL:
                raise ValidationError("a(z) and b(z) share a common root")
        object.__setattr__(self, "_roots", roots)

    @property
    def b(self) -> np.ndarray:
        """Full MA vector ``(b_0, ..., b_{p-1})``."""
        b = np.zeros(self.p)
        b[: self.q] = self.ma
        b[self.q] = 1.0
        return b

    @property
    def roots(self) -> np.ndarray:
        return self._roots.copy()

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "a": list(self.ar), "b": list(self.ma)}

    @classmethod
    def from_dict(cls, d: dict) -> "CarmaModel":
        unknown = set(d) - {"p", "q", "a", "b"}
        if unknown:
            raise ValidationError(f"unknown CARMA keys: {sorted(unknown)}")
        return cls(d["p"], d["q"], tuple(d["a"]), tuple(d.get("b", ())))


@dataclass(frozen=True)
class StateSpaceMatrices:
    A: np.ndarray
    e: np.ndarray
    b: np.ndarray
    eigenvalues: np.ndarray
    residues: np.ndarray

    @property
    def p(self) -> int:
        return self.A.shape[0]


def build_state_space(model: CarmaModel) -> StateSpaceMatrices:
    """Companion matrices plus eigenvalues ``eta_r`` and residues ``b(eta)/a'(eta)``."""
    A = companion(model.ar)
    e = np.zeros(model.p)
    e[-1] = 1.0
    b = model.b
    eta = model.roots
    dcoeffs = np.polyder(np.concatenate([[1.0], model.ar]))
    alpha = np.polyval(b[::-1], eta) / np.polyval(dcoeffs, eta)
    return StateSpaceMatrices(A, e, b, eta, alpha)


def matrix_exponential(M) -> np.ndarray:
    """``e^M`` by scaling and squaring with a Padé approximant (scipy)."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix_exponential needs finite entries")
    return linalg.expm(M)


def exp_vectors(A, e, times, method: str = "expm") -> np.ndarray:
    """Rows ``e^{A t} e`` for each ``t`` in ``times``.

    ``method="eig"`` uses the eigendecomposition of ``A`` and is meant for
    very many times (e.g. one per simulated jump); it falls back to ``expm``
    when the eigenvector basis is ill conditioned.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        return np.empty((0, A.shape[0]))
    if method == "eig":
        w, V = np.linalg.eig(A)
        if np.linalg.cond(V) < 1e6:
            c = np.linalg.solve(V, e.astype(complex))
            return np.real(np.exp(np.multiply.outer(times, w)) * c @ V.T)
    E = linalg.expm(A[None, :, :] * times[:, None, None])
    return E @ e


def kernel(ss: StateSpaceMatrices, t):
    """Kernel ``g(t) = b' e^{At} e`` for ``t >= 0`` and 0 for ``t < 0``."""
    arr = np.asarray(t, dtype=float)
    flat = np.atleast_1d(arr).ravel()
    out = np.zeros(flat.size)
    pos = flat >= 0
    if np.any(pos):
        out[pos] = exp_vectors(ss.A, ss.e, flat[pos]) @ ss.b
    out = out.reshape(np.shape(arr))
    return float(out) if out.ndim == 0 else out


def residue_kernel(ss: StateSpaceMatrices, t):
    """Kernel from the residue expansion ``sum_r alpha_r e^{eta_r t}``."""
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.exp(np.multiply.outer(arr, ss.eigenvalues)) @ ss.residues
    if np.max(np.abs(vals.imag), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(vals.real), initial=0.0)):
        raise NumericalError("residue expansion has a non-negligible imaginary part")
    vals = np.where(arr >= 0, vals.real, 0.0)
    return float(vals[0]) if np.ndim(t) == 0 else vals.reshape(np.shape(t))


class KernelCheck(NamedTuple):
    nonnegative: bool
    reason: str
    roots: np.ndarray


def check_nonnegative_kernel(model: CarmaModel) -> KernelCheck:
    """Non-negativity criterion for the CARMA(2,1) kernel.

    The kernel is non-negative iff both AR roots are real and
    ``b_0 >= min(|eta_1|, |eta_2|)``.
    """
    if model.p != 2 or model.q != 1:
        raise UnsupportedError(
            f"unsupported order CARMA({model.p},{model.q}); only CARMA(2,1) is covered"
        )
    eta = model.roots
    if np.any(np.abs(eta.imag) > 0):
        return KernelCheck(False, "complex AR roots", eta)
    bound = float(np.min(np.abs(eta.real)))
    b0 = model.ma[0]
    if b0 >= bound:
        return KernelCheck(True, f"b0={b0:.6g} >= min|eta|={bound:.6g}", eta)
    return KernelCheck(False, f"b0={b0:.6g} < min|eta|={bound:.6g}", eta)


def _lyapunov_operator(A) -> np.ndarray:
    p = A.shape[0]
    eye = np.eye(p)
    return np.kron(A, eye) + np.kron(eye, A)


def _solve_lyapunov_stack(A, rhs) -> np.ndarray:
    """Solve ``A G + G A' = R`` for a stack of right-hand sides ``R``."""
    p = A.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    flat = rhs.reshape(-1, p * p).T
    try:
        sol = np.linalg.solve(_lyapunov_operator(A), flat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Lyapunov operator is singular (eta_i + eta_j = 0)") from exc
    G = sol.T.reshape(rhs.shape)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def interval_gramians(A, e, t1, t2) -> np.ndarray:
    """Stack of ``G(t1[i], t2[i])`` computed with one Lyapunov factorization."""
    t1 = np.atleast_1d(np.asarray(t1, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    times, inv = np.unique(np.concatenate([t1, t2]), return_inverse=True)
    v = exp_vectors(A, e, times)
    F = v[:, :, None] * v[:, None, :]
    n = t1.size
    return _solve_lyapunov_stack(A, F[inv[n:]] - F[inv[:n]])


def gramian_finite(A, e, t1: float, t2: float) -> np.ndarray:
    """``G(t1, t2) = int_{t1}^{t2} e^{Au} e e' e^{A'u} du`` for ``0 <= t1 <= t2``."""
    if not 0 <= t1 <= t2:
        raise DomainError(f"gramian_finite needs 0 <= t1 <= t2, got ({t1}, {t2})")
    A = np.asarray(A, dtype=float)
    e = np.asarray(e, dtype=float)
    if t1 == t2:
        return np.zeros_like(A)
    return interval_gramians(A, e, [t1], [t2])[0]


def _require_stable(A):
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0:
        raise ValidationError(f"A is not stable: max Re(eigenvalue) = {np.max(eig.real):.6g}")


def gramian_infinite(A, e) -> np.ndarray:
    """``int_0^inf e^{Au} e e' e^{A'u} du``, solving ``A G + G A' = -e e'``."""
    A = np.asarray(A, dtype=float)
    e = np.asarray(e, dtype=float)
    _require_stable(A)
    return _solve_lyapunov_stack(A, -np.outer(e, e)[None])[0]


def exp_integral(A, e, t1, t2) -> np.ndarray:
    """Rows ``int_{t1}^{t2} e^{Au} e du`` (A invertible)."""
    t1 = np.atleast_1d(np.asarray(t1, dtype=float))
    t2 = np.atleast_1d(np.asarray(t2, dtype=float))
    diff = exp_vectors(A, e, t2) - exp_vectors(A, e, t1)
    return np.linalg.solve(A, diff.T).T


def congruence_series(Phi, W, tol=TAIL_TOL, max_doublings=64) -> np.ndarray:
    """Truncated ``sum_k Phi^k W Phi'^k`` by repeated doubling."""
    S = W.copy()
    P = Phi.copy()
    for _ in range(max_doublings):
        add = P @ S @ P.T
        S = S + add
        if np.linalg.norm(add) <= tol * np.linalg.norm(S):
            return 0.5 * (S + S.T)
        P = P @ P
    raise NumericalError("periodic tail sum did not converge; A is too close to instability")


def window_covariance(A, e, partition: PeriodPartition, beta: float, t_end: float,
                      span: float) -> np.ndarray:
    """Covariance of ``int_{t_end-span}^{t_end} e^{A(t_end-u)} e dS_u``.

    The driver intensity is the periodic one on the whole real line.
    """
    left, right, dens = rate_pieces(partition, t_end - span, t_end)
    keep = dens > 0
    if not np.any(keep):
        return np.zeros((A.shape[0],) * 2)
    G = interval_gramians(A, e, t_end - right[keep], t_end - left[keep])
    return beta * np.tensordot(dens[keep], G, axes=1)


def periodic_tail_sum(A, e, partition: PeriodPartition, beta: float, h: float,
                      mirrored: bool = False) -> np.ndarray:
    """Initial state covariance ``Omega_1 = cov(X_h)``.

    By default the driver intensity is periodically continued to negative
    times, so ``Omega_1`` is the covariance of the periodically stationary
    state at the first sampling instant and is a fixed point of one period
    of pure time updates.

    With ``mirrored=True`` the negative half-line carries the reflected
    intensity of the two-sided extension, giving

        (beta lambda_1/|B_1|) G(0, h)
        + sum_j sum_k (beta lambda_j/|B_j|) G(s_{j-1}+h+kT, s_j+h+kT),

    which is only defined for ``h`` inside the first subinterval.
    The k-sum is truncated once a term falls below ``1e-14`` of the total.
    """
    A = np.asarray(A, dtype=float)
    e = np.asarray(e, dtype=float)
    _require_stable(A)
    T = partition.period
    PhiT = linalg.expm(A * T)
    if not mirrored:
        W = window_covariance(A, e, partition, beta, h, T)
        return congruence_series(PhiT, W)
    s = partition.boundaries
    if h > s[1] * (1 + 1e-12):
        raise UnsupportedError(
            f"unsupported grid alignment: h={h} exceeds the first subinterval end {s[1]}"
        )
    dens = partition.densities
    G = interval_gramians(A, e, s[:-1] + h, s[1:] + h)
    W = beta * np.tensordot(dens, G, axes=1)
    head = beta * dens[0] * gramian_finite(A, e, 0.0, h)
    return head + congruence_series(PhiT, W)
