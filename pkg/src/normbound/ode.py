"""Adaptive Dormand-Prince 5(4) integration with dense output.

One code path serves vectors, stacks of vectors and matrices: states are
flattened internally and reshaped on output.  Integration runs forward or in
reverse time depending on the sign of ``t_end - t_start``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

# Dormand & Prince (1980) tableau, 5th order propagating solution
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights (7 stages, FSAL stage last)
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# 4th order continuous extension (Shampine 1986): y(t + s h) = y + h K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
UNDERFLOW_FRACTION = 1e-12


class IntegrationError(RuntimeError):
    """Base class for integrator failures."""

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


class StepSizeUnderflow(IntegrationError):
    """Step size fell below the underflow threshold (stiffness or a singularity)."""


class DivergenceError(IntegrationError):
    """The state became non-finite."""


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    states: np.ndarray
    tolerance_used: tuple[float, float]
    escaped: bool = False
    escape_time: float | None = None
    n_steps: int = 0
    n_rejected: int = 0

    def __len__(self):
        return len(self.grid)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def output_grid(t_start: float, t_end: float, output_step: float) -> np.ndarray:
    """Uniform grid from t_start towards t_end; t_end is always the last point."""
    span = abs(t_end - t_start)
    def atol_at(state):
        if not scale_free:
            return abs_tol
        return abs_tol * max(float(np.max(np.abs(state))), 1e-300) if state.size else abs_tol

    direction = math.copysign(1.0, t_end - t_start)
    count = int(math.floor(span / output_step + 1e-9))
    grid = t_start + direction * output_step * np.arange(count + 1)
    if span - count * output_step > 1e-9 * output_step:
        grid = np.append(grid, t_end)
    else:
        grid[-1] = t_end
    return grid


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(v * v))) if v.size else 0.0


def _initial_step(fun, t, y, f0, direction, rtol, atol, span) -> float:
    scale = atol + rtol * np.abs(y)
    d0, d1 = _rms(y / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = fun(t + direction * h0, y + direction * h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if not math.isfinite(d2):
        return h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _crossing_time(t, hs, y, Q, norm, shape, radius) -> float:
    """Bisect the dense interpolant of one step for the first norm crossing."""
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        ym = y + hs * (mid ** np.arange(1, 5)) @ Q.T
        if norm(ym.reshape(shape)) > radius:
            hi = mid
        else:
            lo = mid
    return t + hi * hs


def integrate(rhs: Callable, t_start: float, t_end: float, initial, rel_tol: float = 1e-8,
              abs_tol: float = 1e-10, output_step: float = 0.01,
              escape_radius: float = 1e6, norm: Callable | None = None,
              max_steps: int = 10_000_000, scale_free: bool = False) -> Trajectory:
    """Integrate ``state' = rhs(t, state)`` from ``t_start`` to ``t_end``.

    The local error estimate of each accepted step satisfies
    ``|e_i| <= abs_tol + rel_tol * max(|y_i|, |y_new_i|)`` componentwise.
    With ``scale_free`` abs_tol is taken relative to max_i |y_i|, which suits
    linear homogeneous problems whose solution may shrink by many decades.
    Output states are dense-output interpolants on the uniform grid
    ``output_grid(t_start, t_end, output_step)``.  If ``norm(state)`` exceeds
    ``escape_radius`` after an accepted step the trajectory is truncated and
    flagged as escaped; the escape time is located inside that step on the
    interpolant.
    """
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    if not output_step > 0:
        raise ValueError("output_step must be positive")
    if t_end == t_start:
        raise ValueError("t_end must differ from t_start")
    norm = norm or (lambda s: float(np.linalg.norm(s)))

    y = np.array(initial, dtype=float)
    shape = y.shape
    y = y.ravel().copy()
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite initial state", t_start)

    def fun(t, state):
        return np.asarray(rhs(t, state.reshape(shape)), dtype=float).ravel()

    def atol_at(state):
        if not scale_free:
            return abs_tol
        return abs_tol * max(float(np.max(np.abs(state))), 1e-300) if state.size else abs_tol

    direction = math.copysign(1.0, t_end - t_start)
    span = abs(t_end - t_start)
    grid = output_grid(t_start, t_end, output_step)
    out = np.empty((len(grid), y.size))
    out[0] = y
    next_out = 1

    t = float(t_start)
    f0 = fun(t, y)
    h = _initial_step(fun, t, y, f0, direction, rel_tol, atol_at(y), span)
    h_min = UNDERFLOW_FRACTION * span
    K = np.empty((7, y.size))
    steps = rejected = 0
    escaped, escape_time = False, None
    last_nonfinite = False

    while direction * (t_end - t) > 0:
        if steps + rejected > max_steps:
            raise StepSizeUnderflow(f"exceeded {max_steps} steps", t)
        remaining = abs(t_end - t)
        if h >= remaining or remaining - h < 1e-12 * span:
            h = remaining
        hs = direction * h
        t_new = t_end if h == remaining else t + hs

        K[0] = f0
        # overflow in a trial step is caught below as a non-finite error estimate
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(1, 6):
                K[s] = fun(t + _C[s] * hs, y + hs * (_A[s] @ K[:s]))
            y_new = y + hs * (_B @ K[:6])
            K[6] = fun(t_new, y_new)
            err_vec = hs * (_E @ K)
            scale = atol_at(y) + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0

        if not (math.isfinite(err) and np.all(np.isfinite(y_new))):
            last_nonfinite = True
            rejected += 1
            h *= MIN_FACTOR
        elif err <= 1.0:
            last_nonfinite = False
            steps += 1
            # dense output for grid points inside (t, t_new]
            stop = next_out
            while stop < len(grid) and direction * (grid[stop] - t_new) <= 0:
                stop += 1
            if stop > next_out:
                theta = (grid[next_out:stop] - t) / hs
                powers = theta[:, None] ** np.arange(1, 5)
                Q = K.T @ _P
                out[next_out:stop] = y + hs * powers @ Q.T
                if grid[stop - 1] == t_new:
                    out[stop - 1] = y_new
                next_out = stop
            if norm(y_new.reshape(shape)) > escape_radius:
                escaped = True
                escape_time = _crossing_time(t, hs, y, K.T @ _P, norm, shape, escape_radius)
                break
            t, y, f0 = t_new, y_new, K[6].copy()
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            h *= factor
            continue
        else:
            last_nonfinite = False
            rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)

        if h < h_min:
            if last_nonfinite:
                raise DivergenceError(f"state became non-finite after t={t:.12g}", t)
            raise StepSizeUnderflow(f"step size underflow at t={t:.12g}", t)

    return Trajectory(
        grid=grid[:next_out].copy(),
        states=out[:next_out].reshape((next_out,) + shape),
        tolerance_used=(rel_tol, abs_tol),
        escaped=escaped,
        escape_time=escape_time,
        n_steps=steps,
        n_rejected=rejected,
    )
