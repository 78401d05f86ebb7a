"""Fundamental matrix of x' = A(t) x and the scalar series derived from it.

p(t) is the logarithmic derivative of ||W(t)||, k(t) the running condition
number sigma_max / sigma_min.  Both are sampled on the integrator's uniform
output grid.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import MatrixFunction, ModelError
from .ode import integrate

GAP_TOL = 1e-6
SINGULAR_TOL = 1e-12


class NormalizationMode(str, enum.Enum):
    IDENTITY = "identity"
    SPECTRAL_W0 = "spectral"


class NearSingularError(ArithmeticError):
    """W(t) lost numerical invertibility."""


class InsufficientHorizon(ValueError):
    """The tail window needed for exponent estimates is empty."""


@dataclass(frozen=True)
class FundamentalPath:
    grid: np.ndarray
    W: np.ndarray          # (m, n, n)
    Winv: np.ndarray       # (m, n, n)
    sigma: np.ndarray      # (m, n), descending
    u1: np.ndarray         # (m, n)
    v1: np.ndarray         # (m, n)
    p: np.ndarray
    k: np.ndarray
    normalization: NormalizationMode
    fallback_count: int = 0
    A: MatrixFunction | None = field(default=None, compare=False, repr=False)
    tolerances: tuple[float, float] = (1e-10, 1e-14)

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def sigma_max(self) -> np.ndarray:
        return self.sigma[:, 0]

    @property
    def sigma_min(self) -> np.ndarray:
        return self.sigma[:, -1]

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.grid - t)))
        step = abs(self.grid[1] - self.grid[0]) if len(self.grid) > 1 else 1.0
        if abs(self.grid[i] - t) > 1e-9 * max(1.0, step):
            raise ValueError(f"t={t} is not a grid point of the fundamental path")
        return i

    def winv_at(self, t: float) -> np.ndarray:
        return self.Winv[self.index_of(t)]

    def w_at(self, t: float) -> np.ndarray:
        return self.W[self.index_of(t)]


def jacobi_svd(M: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """One-sided (Hestenes) Jacobi SVD of a stack of square matrices.

    Returns ``(sigma, U, V)`` with sigma descending along the last axis and
    M = U diag(sigma) V^T for every matrix in the stack.
    """
    M = np.asarray(M, dtype=float)
    single = M.ndim == 2
    if single:
        M = M[None]
    b, n, _ = M.shape
    U = M.copy()
    V = np.broadcast_to(np.eye(n), (b, n, n)).copy()
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                ui, uj = U[:, :, i], U[:, :, j]
                alpha = np.einsum("bk,bk->b", ui, ui)
                beta = np.einsum("bk,bk->b", uj, uj)
                gamma = np.einsum("bk,bk->b", ui, uj)
                denom = np.sqrt(alpha * beta)
                active = (denom > 0) & (np.abs(gamma) > tol * denom)
                if not np.any(active):
                    continue
                off = max(off, float(np.max(np.abs(gamma[active]) / denom[active])))
                g = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                big = np.abs(zeta) > 1e150
                safe = np.where(big, 1.0, zeta)
                t = np.sign(safe) / (np.abs(safe) + np.sqrt(1.0 + safe * safe))
                t = np.where(big, 0.5 / np.where(big, zeta, 1.0), t)
                t = np.where(zeta == 0.0, 1.0, t)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                c = np.where(active, c, 1.0)[:, None]
                s = np.where(active, s, 0.0)[:, None]
                for X in (U, V):
                    xi, xj = X[:, :, i].copy(), X[:, :, j].copy()
                    X[:, :, i] = c * xi - s * xj
                    X[:, :, j] = s * xi + c * xj
        if off <= tol:
            break
    sigma = np.linalg.norm(U, axis=1)
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    U = np.take_along_axis(U, order[:, None, :], axis=2)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    safe = np.where(sigma > 0, sigma, 1.0)
    U = np.where(sigma[:, None, :] > 0, U / safe[:, None, :], 0.0)
    if single:
        return sigma[0], U[0], V[0]
    return sigma, U, V


def singular_triplet(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(singular values descending, u1, v1) with M v1 = sigma_max u1."""
    sigma, U, V = jacobi_svd(np.asarray(M, dtype=float))
    return sigma, U[:, 0], V[:, 0]


def spectral_initial_matrix(A: MatrixFunction) -> np.ndarray:
    """Real modal matrix of the frozen mean matrix, scaled to sigma_max = 1.

    A complex pair a +- ib with eigenvector vr + i vi contributes the columns
    [vr, vi], on which A acts as the rotation-type block [[a, b], [-b, a]].
    """
    A0 = A.frozen()
    vals, vecs = np.linalg.eig(A0)
    cols = []
    used = np.zeros(len(vals), dtype=bool)
    for idx in np.argsort(-vals.real, kind="stable"):
        if used[idx]:
            continue
        lam, v = vals[idx], vecs[:, idx]
        if abs(lam.imag) <= 1e-12 * max(1.0, abs(lam)):
            # rotate the phase so the vector is real
            j = int(np.argmax(np.abs(v)))
            v = v * np.exp(-1j * np.angle(v[j]))
            cols.append(v.real)
            used[idx] = True
        else:
            if lam.imag < 0:
                lam, v = lam.conjugate(), v.conjugate()
            cols.extend([v.real, v.imag])
            used[idx] = True
            partner = np.argmin(np.abs(vals - lam.conjugate()) + used * 1e300)
            used[partner] = True
    V = np.column_stack(cols)
    if V.shape != A0.shape or not np.isfinite(np.linalg.cond(V)) or np.linalg.cond(V) > 1e12:
        raise ModelError("frozen mean matrix lacks a complete eigenbasis; use identity mode")
    sigma, _, _ = singular_triplet(V)
    return V / sigma[0]


class PKSeries(NamedTuple):
    p: np.ndarray
    k: np.ndarray
    fallbacks: int


def log_norm_rate(W: np.ndarray, At: np.ndarray) -> float:
    """Right derivative of ln ||W|| along W' = A W.

    With the singular values within GAP_TOL of sigma_max grouped into a
    cluster (U_c, V_c), the rate is the largest eigenvalue of
    sym(U_c^T A W V_c) / sigma_max.  For a simple sigma_max this is
    u1^T A W v1 / sigma_max.
    """
    U, s, Vt = np.linalg.svd(W)
    c = int(np.count_nonzero(s >= s[0] * (1.0 - GAP_TOL)))
    M = U[:, :c].T @ At @ W @ Vt[:c].T
    if c == 1:
        return float(M[0, 0] / s[0])
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1] / s[0])


def _pk(grid, W, sigma, u1, v1, A: MatrixFunction) -> PKSeries:
    At = A.evaluate(grid)
    AW = At @ W
    p = np.einsum("bi,bij,bj->b", u1, AW, v1) / sigma[:, 0]
    k = sigma[:, 0] / sigma[:, -1]
    fallbacks = 0
    if sigma.shape[1] > 1:
        gap = (sigma[:, 0] - sigma[:, 1]) / sigma[:, 0]
        near = np.flatnonzero(gap < GAP_TOL)
        for i in near:
            p[i] = log_norm_rate(W[i], At[i])
        fallbacks = int(near.size)
    return PKSeries(p, k, fallbacks)


def compute_pk(path: FundamentalPath, A: MatrixFunction) -> PKSeries:
    """p from the analytic singular value derivative u1^T A W v1 / sigma_max.

    Where sigma_max is (nearly) repeated the cluster derivative of
    ``log_norm_rate`` is used instead; those points are counted.
    """
    return _pk(path.grid, path.W, path.sigma, path.u1, path.v1, A)


def compute_fundamental(A: MatrixFunction, t0: float, horizon: float,
                        mode: NormalizationMode | str = NormalizationMode.SPECTRAL_W0,
                        rel_tol: float = 1e-10, abs_tol: float = 1e-14,
                        output_step: float = 0.01) -> FundamentalPath:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    mode = NormalizationMode(mode)
    n = A.n
    W0 = np.eye(n) if mode is NormalizationMode.IDENTITY else spectral_initial_matrix(A)
    traj = integrate(lambda t, W: A(t) @ W, t0, t0 + horizon, W0, rel_tol=rel_tol,
                     abs_tol=abs_tol, output_step=output_step, escape_radius=math.inf,
                     scale_free=True)
    W = traj.states
    sigma, U, V = jacobi_svd(W)
    bad = sigma[:, -1] < SINGULAR_TOL * sigma[:, 0]
    if np.any(bad):
        t_bad = traj.grid[np.argmax(bad)]
        raise NearSingularError(f"W(t) nearly singular at t={t_bad:.6g}")
    Winv = np.linalg.inv(W)
    pk = _pk(traj.grid, W, sigma, U[:, :, 0], V[:, :, 0], A)
    return FundamentalPath(grid=traj.grid, W=W, Winv=Winv, sigma=sigma, u1=U[:, :, 0],
                           v1=V[:, :, 0], p=pk.p, k=pk.k, normalization=mode,
                           fallback_count=pk.fallbacks, A=A, tolerances=(rel_tol, abs_tol))


def cumulative_integral(series, grid) -> np.ndarray:
    """Cumulative trapezoid, starting at 0."""
    series = np.asarray(series, dtype=float)
    grid = np.asarray(grid, dtype=float)
    out = np.zeros_like(series)
    out[1:] = np.cumsum(0.5 * (series[1:] + series[:-1]) * np.diff(grid))
    return out


def running_average(series, grid) -> np.ndarray:
    """(t - t0)^-1 int_t0^t series; the first point is the series value."""
    series = np.asarray(series, dtype=float)
    grid = np.asarray(grid, dtype=float)
    integral = cumulative_integral(series, grid)
    out = series.copy()
    elapsed = grid[1:] - grid[0]
    out[1:] = integral[1:] / elapsed
    return out


def _p_quadrature(path: FundamentalPath) -> np.ndarray:
    """int p obtained by integrating q' = log_norm_rate(W, A) together with W.

    W is carried normalized, Z = W / ||W||, so Z' = A Z - q' Z stays of unit
    size however far ||W|| decays or grows.
    """
    A, n = path.A, path.W.shape[1]
    rel_tol, abs_tol = path.tolerances

    def rhs(t, state):
        Z = state[:-1].reshape(n, n)
        At = A(t)
        rate = log_norm_rate(Z, At)
        return np.append((At @ Z - rate * Z).ravel(), rate)

    start = np.append((path.W[0] / path.sigma_max[0]).ravel(), 0.0)
    span = path.grid[-1] - path.grid[0]
    step = abs(path.grid[1] - path.grid[0])
    traj = integrate(rhs, path.grid[0], path.grid[-1], start, rel_tol=rel_tol,
                     abs_tol=abs_tol, output_step=step, escape_radius=math.inf)
    if len(traj.grid) != len(path.grid) or abs(traj.grid[-1] - path.grid[-1]) > 1e-9 * abs(span):
        raise ValueError("quadrature grid does not match the fundamental path")
    return traj.states[:, -1]


def integrate_p(path: FundamentalPath, refine: bool = True) -> np.ndarray:
    """Cumulative integral of p along the path.

    Near a coalescence of sigma_max with sigma_2, p changes on a time scale far
    below the output grid step and the trapezoid rule misses it.  With
    ``refine`` the integral is carried as an extra state of the fundamental
    matrix integration, so the adaptive step control resolves those features.
    """
    if refine and path.A is not None and len(path.grid) > 2:
        return _p_quadrature(path)
    return cumulative_integral(path.p, path.grid)


def log_norm(path: FundamentalPath) -> np.ndarray:
    """ln ||W(t)|| - ln ||W(t0)||, taken directly from the singular values."""
    return np.log(path.sigma_max) - np.log(path.sigma_max[0])


def verify_norm_identity(path: FundamentalPath, refine: bool = True) -> float:
    """max_t |exp(int p) - ||W(t)||/||W(t0)|| | relative to the norm ratio."""
    ratio = path.sigma_max / path.sigma_max[0]
    recon = np.exp(integrate_p(path, refine=refine))
    return float(np.max(np.abs(recon - ratio) / ratio))


class Exponents(NamedTuple):
    mu_max: float
    N: float
    lam: float
    restart_times: tuple[float, ...]


def window_mask(grid, start_fraction: float, end_fraction: float = 1.0) -> np.ndarray:
    t0, T = grid[0], grid[-1] - grid[0]
    return (grid >= t0 + start_fraction * T - 1e-12) & (grid <= t0 + end_fraction * T + 1e-12)


def estimate_exponents(path: FundamentalPath, restarts: int = 8,
                       tail_fraction: float = 0.2) -> Exponents:
    """mu_max, N and lambda from a single fundamental path.

    mu_max averages (t - t0)^-1 ln sigma_max over the tail window.  N is the
    largest k at the restart times t0 + j * horizon / (2 restarts); lambda is
    minus the largest tail value of (t - t_r)^-1 int_{t_r}^t p over restarts t_r.
    """
    grid = path.grid
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    tail = window_mask(grid, 1.0 - tail_fraction)
    tail[0] = False
    if len(grid) < 3 or np.count_nonzero(tail) < 2:
        raise InsufficientHorizon("horizon too short for the tail window")
    t0 = grid[0]
    horizon = grid[-1] - t0
    ln_norm = np.log(path.sigma_max)
    mu_max = float(np.mean((ln_norm[tail] - ln_norm[0]) / (grid[tail] - t0)))

    delta = 0.5 * horizon / restarts
    idx = sorted({int(np.argmin(np.abs(grid - (t0 + j * delta)))) for j in range(restarts)})
    N = float(np.max(path.k[idx]))
    integral = cumulative_integral(path.p, grid)
    worst = -math.inf
    for i in idx:
        rate = (integral[tail] - integral[i]) / (grid[tail] - grid[i])
        worst = max(worst, float(np.max(rate)))
    return Exponents(mu_max, N, -worst, tuple(float(grid[i]) for i in idx))


def transition_columns(path: FundamentalPath) -> dict[str, np.ndarray]:
    return {
        "t": path.grid,
        "sigma_max": path.sigma_max,
        "sigma_min": path.sigma_min,
        "p": path.p,
        "k": path.k,
        "p_running_avg": running_average(path.p, path.grid),
        "k_running_avg": running_average(path.k, path.grid),
    }
