"""Scalar auxiliary equations bounding solution norms, and stability criteria.

With X0 = ||W^-1(t0) x0||, solutions satisfy ||x(t)|| <= X(t, X0) where X
solves either the linear equation X' = (p + k l) X + k ||F|| (classical
Lipschitz constant l on a ball of radius R) or the nonlinear equation
X' = p X + k (L(t, X) + ||F||) built from the Lipschitz envelope L.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (LipschitzEnvelope, SystemSpec, default_lipschitz_radius, derive_envelope,
                    forcing_amplitude, lipschitz_constant)
from .ode import DivergenceError, StepSizeUnderflow, integrate, output_grid
from .transition import Exponents, FundamentalPath, cumulative_integral, estimate_exponents

ZERO_TOL = 1e-10
ZERO_ALLOWANCE = 0.01
COR4_EPSILON = 1e-3
DHAT_SAMPLES = 64


class CurveKind(str, enum.Enum):
    LINEAR = "LinearAux"
    NONLINEAR = "NonlinearAux"
    BERNOULLI = "Bernoulli"
    AUTONOMOUS_SUP = "AutonomousSup"
    AVERAGED = "Averaged"


@dataclass(frozen=True)
class AuxCoefficients:
    """p, k, ||F|| and Lipschitz data sampled on a common grid."""

    grid: np.ndarray
    p: np.ndarray
    k: np.ndarray
    envelope: LipschitzEnvelope
    forcing_norm: np.ndarray
    forcing_hat: float = 0.0
    l_profile: np.ndarray | None = None
    l_hat: float | None = None
    lipschitz_radius: float | None = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        arrays = {}
        for name in ("p", "k", "forcing_norm", "l_profile"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float)
            if value.ndim == 0:
                value = np.full(grid.shape, float(value))
            if value.shape != grid.shape:
                raise ValueError(f"{name} has shape {value.shape}, grid has {grid.shape}")
            arrays[name] = value
        if np.any(arrays["k"] < 1.0 - 1e-12):
            raise ValueError("k must be >= 1")
        if np.any(arrays["forcing_norm"] < 0):
            raise ValueError("forcing_norm must be >= 0")
        object.__setattr__(self, "grid", grid)
        for name, value in arrays.items():
            object.__setattr__(self, name, value)

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def step(self) -> float:
        return float(abs(self.grid[1] - self.grid[0])) if len(self.grid) > 1 else 1.0

    @classmethod
    def constant(cls, p: float, k: float, envelope: LipschitzEnvelope | None = None,
                 forcing: float = 0.0, l: float | None = None, t0: float = 0.0,
                 horizon: float = 10.0, step: float = 0.01) -> "AuxCoefficients":
        """Constant coefficients on a uniform grid (oracles and tests)."""
        grid = output_grid(t0, t0 + horizon, step)
        return cls(grid=grid, p=p, k=k, envelope=envelope or LipschitzEnvelope(),
                   forcing_norm=forcing, forcing_hat=abs(forcing),
                   l_profile=l, l_hat=None if l is None else float(l))


def build_coefficients(spec: SystemSpec, path: FundamentalPath,
                       lipschitz_radius: float | None = None,
                       X0: float | None = None) -> AuxCoefficients:
    """Coefficients of both auxiliary equations for ``spec`` along ``path``.

    The classical Lipschitz data need a radius R; without one, the default
    R = kappa X0 is used when X0 is given and a note records the choice.
    """
    envelope = derive_envelope(spec.f)
    grid = path.grid
    notes = []
    R = lipschitz_radius
    if R is None and X0 is not None and X0 > 0:
        R, how = default_lipschitz_radius(spec.A, X0)
        notes.append(f"default Lipschitz radius R={R:.6g} ({how})")
    l_profile = l_hat = None
    if R is not None:
        l_hat, profile = lipschitz_constant(envelope, R)
        l_profile = np.asarray(profile(grid), dtype=float) * np.ones_like(grid)
    return AuxCoefficients(grid=grid, p=path.p, k=path.k, envelope=envelope,
                           forcing_norm=spec.F.norm(grid), forcing_hat=forcing_amplitude(spec.F),
                           l_profile=l_profile, l_hat=l_hat, lipschitz_radius=R,
                           notes=tuple(notes))


@dataclass(frozen=True)
class BoundCurve:
    grid: np.ndarray
    X: np.ndarray
    X0: float
    kind: CurveKind
    blow_up_time: float | None = None

    def __post_init__(self):
        if len(self.grid) != len(self.X):
            raise ValueError("grid and X differ in length")

    @property
    def blew_up(self) -> bool:
        return self.blow_up_time is not None

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.grid, self.X) if self.grid[-1] >= self.grid[0] else \
            np.interp(t, self.grid[::-1], self.X[::-1])


def solve_linear_aux(coeffs: AuxCoefficients, X0: float) -> BoundCurve:
    """X = X_h + X_nh of the linear auxiliary equation.

    With Phi = int (p + k l) (cumulative trapezoid), X_h = X0 e^Phi and
    X_nh(t) = int e^(Phi(t) - Phi(tau)) k ||F|| dtau.  X_nh is accumulated
    step by step, integrating exactly for a rate constant over the step and
    k ||F|| linear over it, so only exponentials of increments of Phi appear.
    """
    if coeffs.l_profile is None:
        raise ValueError("linear auxiliary equation needs the classical l profile")
    if X0 < 0:
        raise ValueError("X0 must be >= 0")
    grid = coeffs.grid
    rate = coeffs.p + coeffs.k * coeffs.l_profile
    g = coeffs.k * coeffs.forcing_norm
    phi = cumulative_integral(rate, grid)
    h = np.diff(grid)
    a = np.diff(phi)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        X_h = X0 * np.exp(phi)
        growth = np.exp(a)
        small = np.abs(a) < 1e-4
        safe = np.where(small, 1.0, a)
        phi1 = np.where(small, 1.0 + a / 2 + a * a / 6, np.expm1(safe) / safe)
        phi2 = np.where(small, 0.5 + a / 6 + a * a / 24, (np.expm1(safe) - safe) / safe ** 2)
    increment = h * (g[:-1] * phi1 + (g[1:] - g[:-1]) * phi2)
    X_nh = np.zeros_like(grid)
    for i in range(len(h)):
        X_nh[i + 1] = growth[i] * X_nh[i] + increment[i]
    X = X_h + X_nh
    finite = np.isfinite(X)
    if not np.all(finite):
        stop = int(np.argmin(finite))
        return BoundCurve(grid[:stop], X[:stop], float(X0), CurveKind.LINEAR, float(grid[stop]))
    return BoundCurve(grid, X, float(X0), CurveKind.LINEAR)


def interpolant(grid, values):
    """Piecewise-linear interpolant on a uniform grid, as a float function."""
    values = np.asarray(values, dtype=float)
    if np.all(values == values[0]):
        c = float(values[0])
        return lambda t: c
    g0 = float(grid[0])
    h = float(grid[1] - grid[0])
    v = values.tolist()
    last = len(v) - 2

    def f(t):
        s = (t - g0) / h
        i = min(max(int(s), 0), last)
        w = s - i
        return v[i] + w * (v[i + 1] - v[i])

    return f


def _integrate_scalar(rhs, grid, X0, kind, rel_tol, abs_tol, escape_radius) -> BoundCurve:
    t_start, t_end = float(grid[0]), float(grid[-1])
    step = float(abs(grid[1] - grid[0])) if len(grid) > 1 else 1.0
    try:
        traj = integrate(rhs, t_start, t_end, np.array([X0], dtype=float), rel_tol=rel_tol,
                         abs_tol=abs_tol, output_step=step, escape_radius=escape_radius)
        blow_up = traj.escape_time if traj.escaped else None
    except (StepSizeUnderflow, DivergenceError) as err:
        blow_up = err.last_time
        if blow_up == t_start:
            return BoundCurve(grid[:1], np.array([X0], dtype=float), float(X0), kind, blow_up)
        traj = integrate(rhs, t_start, blow_up, np.array([X0], dtype=float), rel_tol=rel_tol,
                         abs_tol=abs_tol, output_step=step, escape_radius=escape_radius)
    X = traj.states[:, 0]
    grid_out = traj.grid
    if blow_up is not None:
        # the escaped point lies beyond the last retained grid value
        keep = np.abs(grid_out - t_start) <= abs(blow_up - t_start) + 1e-12
        keep &= np.isfinite(X) & (X <= escape_radius)
        grid_out, X = grid_out[keep], X[keep]
    return BoundCurve(grid_out, np.maximum(X, 0.0), float(X0), kind, blow_up)


def solve_nonlinear_aux(coeffs: AuxCoefficients, X0: float, rel_tol: float = 1e-10,
                        abs_tol: float = 1e-12, escape_radius: float = 1e6) -> BoundCurve:
    """X' = p X + k (L(t, X) + ||F||) with p, k, ||F|| linearly interpolated.

    Escape past ``escape_radius`` or an integrator breakdown is reported as
    the blow-up time and ends the curve.
    """
    if X0 < 0:
        raise ValueError("X0 must be >= 0")
    grid = coeffs.grid
    p, k, F = (interpolant(grid, v) for v in (coeffs.p, coeffs.k, coeffs.forcing_norm))
    L = coeffs.envelope.scalar_evaluator()

    def rhs(t, X):
        x = max(float(X[0]), 0.0)
        return np.array([p(t) * x + k(t) * (L(t, x) + F(t))])

    return _integrate_scalar(rhs, grid, X0, CurveKind.NONLINEAR, rel_tol, abs_tol, escape_radius)


def solve_bernoulli(p, k, c, alpha: float, X0: float, grid=None, t0: float = 0.0,
                    horizon: float = 10.0, step: float = 0.01) -> BoundCurve:
    """Closed form of X' = p X + k c X^alpha through u = X^(1 - alpha).

    p, k, c are constants or series on ``grid``.  For constants the solution
    and the blow-up time (alpha > 1) are exact; for series the integrals are
    cumulative trapezoids.
    """
    if alpha == 1:
        raise ValueError("alpha = 1 is linear; use solve_linear_aux")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if X0 < 0:
        raise ValueError("X0 must be >= 0")
    if grid is None:
        grid = output_grid(t0, t0 + horizon, step)
    grid = np.asarray(grid, dtype=float)
    if X0 == 0:
        return BoundCurve(grid, np.zeros_like(grid), 0.0, CurveKind.BERNOULLI)
    s = grid - grid[0]
    e = 1.0 - alpha
    u0 = X0 ** e
    scalar = all(np.ndim(v) == 0 for v in (p, k, c))
    blow_up = None
    if scalar:
        beta = e * float(p)
        K = e * float(k) * float(c)
        if beta == 0:
            u = u0 + K * s
            if alpha > 1 and K < 0:
                blow_up = float(grid[0] - u0 / K)
        else:
            u = u0 * np.exp(beta * s) + K * np.expm1(beta * s) / beta
            if alpha > 1:
                ratio = (K / beta) / (u0 + K / beta) if u0 + K / beta != 0 else math.inf
                if ratio > 1 or (ratio > 0 and beta < 0 and ratio < 1):
                    T = math.log(ratio) / beta
                    if T > 0:
                        blow_up = float(grid[0] + T)
    else:
        p_, k_, c_ = (np.broadcast_to(np.asarray(v, dtype=float), grid.shape) for v in (p, k, c))
        P = cumulative_integral(p_, grid)
        u = np.exp(e * P) * (u0 + e * cumulative_integral(np.exp(-e * P) * k_ * c_, grid))
        if alpha > 1 and np.any(u <= 0):
            j = int(np.argmax(u <= 0))
            blow_up = float(grid[j - 1] + (grid[j] - grid[j - 1]) * u[j - 1] / (u[j - 1] - u[j]))
    if blow_up is not None and blow_up <= grid[-1]:
        keep = grid < blow_up
        grid, u = grid[keep], u[keep]
    else:
        blow_up = None
    with np.errstate(divide="ignore", over="ignore"):
        X = np.power(np.maximum(u, 0.0), 1.0 / e)
    return BoundCurve(grid, X, float(X0), CurveKind.BERNOULLI, blow_up)


class Status(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


def _status(flag: bool | None) -> Status:
    if flag is None:
        return Status.INCONCLUSIVE
    return Status.HOLDS if flag else Status.FAILS


@dataclass(frozen=True)
class CriteriaReport:
    t_star: float
    cor1: dict = field(default_factory=dict)
    cor2: dict = field(default_factory=dict)
    cor3: dict = field(default_factory=dict)
    cor4: dict = field(default_factory=dict)
    classical6: dict = field(default_factory=dict)
    classical8: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, Status):
                return v.value
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {key: clean(val) for key, val in v.items()}
            return v

        return {
            "t_star": self.t_star,
            **{name: clean(getattr(self, name))
               for name in ("cor1", "cor2", "cor3", "cor4", "classical6", "classical8")},
            "notes": list(self.notes),
        }


def _window_average_max(values, grid, start: float, width: float) -> float:
    """Largest average of ``values`` over consecutive windows of ``width`` from ``start``."""
    best = -math.inf
    a = start
    while a < grid[-1] - 1e-12:
        b = min(a + width, grid[-1])
        mask = (grid >= a - 1e-12) & (grid <= b + 1e-12)
        if np.count_nonzero(mask) >= 2:
            best = max(best, float(np.trapezoid(values[mask], grid[mask]) / (grid[mask][-1] - grid[mask][0])))
        elif np.count_nonzero(mask) == 1:
            best = max(best, float(values[mask][0]))
        a = b
    return best


def _dhat(phi: np.ndarray, grid: np.ndarray, rho: float, samples: int = DHAT_SAMPLES) -> float:
    idx = np.unique(np.linspace(0, len(grid) - 1, samples).round().astype(int))
    t = grid[idx]
    f = phi[idx]
    diff = (f[:, None] - f[None, :]) + rho * (t[:, None] - t[None, :])
    lower = t[:, None] >= t[None, :]
    return float(np.exp(np.max(diff[lower])))


def evaluate_criteria(coeffs: AuxCoefficients, path: FundamentalPath | None = None,
                      t_star: float | None = None, exponents: Exponents | None = None,
                      restarts: int = 8, epsilon: float = COR4_EPSILON) -> CriteriaReport:
    """Pointwise (cor1, cor2), exponent-based (cor3, cor4) and classical tests.

    ``exponents`` overrides the values estimated from ``path``; without both,
    the exponent-based criteria are inconclusive.
    """
    grid = coeffs.grid
    t0, horizon = float(grid[0]), float(grid[-1] - grid[0])
    if t_star is None:
        t_star = t0 + 0.1 * horizon
    if not (t0 <= t_star < grid[-1]):
        raise ValueError(f"t_star={t_star} outside [{t0}, {grid[-1]})")
    notes = []
    if coeffs.l_profile is None:
        notes.append("no classical Lipschitz profile; criteria need a Lipschitz radius")
        empty = {"status": Status.INCONCLUSIVE}
        return CriteriaReport(float(t_star), dict(empty), dict(empty), dict(empty), dict(empty),
                              dict(empty), dict(empty), tuple(notes))
    mask = grid >= t_star - 1e-12
    kl = coeffs.k * coeffs.l_profile
    s = coeffs.p + kl
    tail = s[mask]
    positive = int(np.count_nonzero(tail > ZERO_TOL))
    zeros = int(np.count_nonzero(np.abs(tail) <= ZERO_TOL))
    cor1_holds = positive == 0 and zeros <= ZERO_ALLOWANCE * tail.size
    cor1 = {"status": _status(cor1_holds), "max_value": float(np.max(tail)),
            "positive_points": positive, "zero_points": zeros, "points": int(tail.size)}

    k_hat = float(np.max(coeffs.k))
    nu = -float(np.max(tail))
    cor2 = {"status": _status(nu > 0), "nu": nu,
            "ultimate_bound": coeffs.forcing_hat * k_hat / nu if nu > 0 else None}

    if exponents is None and path is not None:
        try:
            exponents = estimate_exponents(path, restarts=restarts)
        except ValueError as err:
            notes.append(f"exponent estimate unavailable: {err}")
    l_hat = coeffs.l_hat if coeffs.l_hat is not None else float(np.max(coeffs.l_profile))

    running_kl = cumulative_integral(kl, grid)
    elapsed = grid - t0
    avg_kl = np.where(elapsed > 0, running_kl / np.where(elapsed > 0, elapsed, 1.0), kl)
    chi_star = _window_average_max(avg_kl, grid, t0 + 0.5 * horizon, horizon / 8.0)
    phi = cumulative_integral(s, grid)
    if exponents is None:
        cor3 = {"status": Status.INCONCLUSIVE, "chi_star": chi_star}
        cor4 = {"status": Status.INCONCLUSIVE}
        classical6 = {"status": Status.INCONCLUSIVE, "l_hat": l_hat}
        classical8 = {"status": Status.INCONCLUSIVE, "l_hat": l_hat}
    else:
        chi = exponents.mu_max + chi_star
        cor3 = {"status": _status(chi < 0), "chi": chi, "mu_max": exponents.mu_max,
                "chi_star": chi_star}
        rho = -chi - epsilon
        if rho > 0:
            d_full = _dhat(phi, grid, rho)
            half = grid <= t0 + 0.5 * horizon + 1e-12
            d_half = _dhat(phi[half], grid[half], rho)
            stable_fit = d_full <= 1.1 * d_half
            cor4 = {"status": Status.HOLDS if stable_fit else Status.INCONCLUSIVE, "rho": rho,
                    "epsilon": epsilon, "D_hat": d_full, "D_hat_half_horizon": d_half,
                    "ultimate_bound": d_full * coeffs.forcing_hat * k_hat / rho}
            if not stable_fit:
                notes.append("D_hat keeps growing with the horizon; cor4 fit not settled")
        else:
            cor4 = {"status": Status.FAILS, "rho": rho, "epsilon": epsilon, "D_hat": None,
                    "ultimate_bound": None}
        value6 = exponents.N * l_hat - exponents.lam
        classical6 = {"status": _status(value6 < 0), "N": exponents.N, "l_hat": l_hat,
                      "lambda": exponents.lam, "value": value6}
        if path is not None:
            pbar = cumulative_integral(path.p, path.grid)[1:] / (path.grid[1:] - path.grid[0])
            tail_mask = path.grid[1:] >= path.grid[0] + 0.8 * (path.grid[-1] - path.grid[0]) - 1e-12
            p_limsup = float(np.max(pbar[tail_mask]))
        else:
            p_limsup = -exponents.lam
        value8 = p_limsup + exponents.N * l_hat
        classical8 = {"status": _status(value8 < 0), "p_avg_limsup": p_limsup, "N": exponents.N,
                      "l_hat": l_hat, "value": value8}
    notes.append("cor3/cor4 constants are finite-horizon numerical surrogates")
    return CriteriaReport(float(t_star), cor1, cor2, cor3, cor4, classical6, classical8,
                          tuple(notes))
