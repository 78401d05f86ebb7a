"""Monte-Carlo checks of bound curves and region certificates against direct integration.

Samples are drawn on (or inside) the ellipsoid ||W^-1(t0) x0|| <= level and
integrated with the full system.  All samples are stacked into one state and
integrated together; if any of them escapes, the batch is redone one sample
at a time so that escape times are per sample.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .auxiliary import BoundCurve
from .model import SystemSpec, eval_rhs
from .ode import integrate, output_grid
from .transition import FundamentalPath


class SampleMode(str, enum.Enum):
    SURFACE = "surface"
    VOLUME = "volume"


def sample_ellipsoid(path: FundamentalPath, t0: float, level: float, count: int,
                     mode: SampleMode | str = SampleMode.SURFACE, seed: int = 0) -> np.ndarray:
    """x0 = W(t0) z with z uniform on the sphere (or ball) of radius ``level``."""
    if level < 0:
        raise ValueError("level must be >= 0")
    if count < 1:
        raise ValueError("count must be >= 1")
    mode = SampleMode(mode)
    W = path.w_at(t0)
    n = W.shape[0]
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radius = np.full(count, float(level))
    if mode == SampleMode.VOLUME:
        radius *= rng.random(count) ** (1.0 / n)
    return (z * radius[:, None]) @ W.T


@dataclass(frozen=True)
class SampleRun:
    """Per-sample trajectories on a shared grid; rows after an escape are NaN."""

    grid: np.ndarray
    states: np.ndarray                       # (len(grid), m, n)
    escape_times: tuple[float | None, ...]

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=2)


def integrate_samples(spec: SystemSpec, x0s, t_start: float, t_end: float,
                      rel_tol: float = 1e-10, abs_tol: float = 1e-12,
                      output_step: float = 0.01, escape_radius: float = 1e6) -> SampleRun:
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    m = x0s.shape[0]

    def rhs(t, X):
        return eval_rhs(spec, t, X)

    def rowmax(X):
        return float(np.max(np.linalg.norm(X, axis=-1)))

    batch = integrate(rhs, t_start, t_end, x0s, rel_tol=rel_tol, abs_tol=abs_tol,
                      output_step=output_step, escape_radius=escape_radius, norm=rowmax)
    if not batch.escaped:
        return SampleRun(batch.grid, batch.states, (None,) * m)
    grid = output_grid(t_start, t_end, output_step)
    states = np.full((len(grid), m, x0s.shape[1]), np.nan)
    escapes = []
    for j in range(m):
        traj = integrate(rhs, t_start, t_end, x0s[j], rel_tol=rel_tol, abs_tol=abs_tol,
                         output_step=output_step, escape_radius=escape_radius)
        states[:len(traj.grid), j] = traj.states
        escapes.append(traj.escape_time if traj.escaped else None)
    return SampleRun(grid, states, tuple(escapes))


@dataclass(frozen=True)
class ViolationReport:
    samples: int
    violations: list = field(default_factory=list)   # (sample, time, norm, bound)
    max_ratio: float = 0.0
    decayed_fraction: float = 0.0
    seed: int | None = None
    rel_slack: float = 1e-3
    measured_max: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "samples": self.samples,
            "violation_count": len(self.violations),
            "violations": [{"sample": int(s), "t": float(t), "norm": float(v),
                            "bound": None if not math.isfinite(b) else float(b)}
                           for s, t, v, b in self.violations],
            "max_ratio": self.max_ratio if math.isfinite(self.max_ratio) else None,
            "decayed_fraction": self.decayed_fraction,
            "seed": self.seed,
            "rel_slack": self.rel_slack,
        }


def check_bound(spec: SystemSpec, bound: BoundCurve, samples, rel_slack: float = 1e-3,
                seed: int | None = None, rel_tol: float = 1e-10, abs_tol: float = 1e-12,
                decay_threshold: float = 1e-2) -> ViolationReport:
    """Flag grid points where ||x(t)|| > (1 + rel_slack) X(t).

    Only the span covered by the bound curve is checked.  A sample escaping
    while the bound is still finite counts as a violation at its escape time.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    grid = bound.grid
    step = abs(grid[1] - grid[0]) if len(grid) > 1 else 1.0
    run = integrate_samples(spec, samples, float(grid[0]), float(grid[-1]), rel_tol=rel_tol,
                            abs_tol=abs_tol, output_step=step)
    count = min(len(run.grid), len(grid))
    norms = run.norms[:count]
    X = bound.X[:count, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(X > 0, norms / X, np.where(norms > 0, np.inf, 0.0))
    finite = np.isfinite(norms)
    over = finite & (norms > (1.0 + rel_slack) * X)
    violations = [(int(j), float(grid[i]), float(norms[i, j]), float(X[i, 0]))
                  for i, j in zip(*np.nonzero(over))]
    for j, t_esc in enumerate(run.escape_times):
        if t_esc is not None:
            violations.append((j, float(t_esc), math.inf, float(bound.at(t_esc))))
    violations.sort(key=lambda v: (v[0], v[1]))
    max_ratio = float(np.max(np.where(finite, ratio, -np.inf))) if norms.size else 0.0
    if any(t is not None for t in run.escape_times):
        max_ratio = math.inf
    start = np.linalg.norm(samples, axis=1)
    final = norms[-1]
    decayed = np.where(start > 0, final < decay_threshold * start, True)
    decayed &= np.array([t is None for t in run.escape_times])
    measured = np.max(np.where(finite, norms, -np.inf), axis=1)
    return ViolationReport(len(samples), violations, max_ratio, float(np.mean(decayed)), seed,
                           rel_slack, measured)


def check_decay(spec: SystemSpec, samples, T: float, threshold: float = 1e-2,
                t0: float | None = None, rel_tol: float = 1e-9, abs_tol: float = 1e-12) -> float:
    """Fraction of samples with ||x(t0 + T)|| < threshold ||x0||; zero states count as decayed."""
    t0 = spec.t0 if t0 is None else t0
    if T > spec.horizon + 1e-12:
        raise ValueError(f"T={T} exceeds the system horizon {spec.horizon}")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    run = integrate_samples(spec, samples, t0, t0 + T, rel_tol=rel_tol, abs_tol=abs_tol,
                            output_step=T)
    start = np.linalg.norm(samples, axis=1)
    final = run.norms[-1]
    escaped = np.array([t is not None for t in run.escape_times])
    ok = np.where(start > 0, final < threshold * start, True) & ~escaped
    return float(np.mean(ok))


@dataclass(frozen=True)
class BoundaryTrace:
    seeds: np.ndarray
    trajectories: list = field(repr=False)    # per seed: (grid, states)
    escaped: tuple[bool, ...]
    tail_cloud: np.ndarray = field(repr=False)
    loop_drift: float | None = None
    plane: tuple[int, int] = (0, 1)

    @property
    def finite_boundary(self) -> bool:
        return not all(self.escaped)

    def to_json(self) -> dict:
        return {
            "seeds": len(self.escaped),
            "escaped": int(sum(self.escaped)),
            "finite_boundary": self.finite_boundary,
            "loop_drift": self.loop_drift,
            "tail_points": int(len(self.tail_cloud)),
            "plane": list(self.plane),
        }


def trace_boundary(spec: SystemSpec, path: FundamentalPath, level_hint: float, t0: float,
                   horizon_reverse: float, n_seeds: int = 16, seed: int = 0,
                   rel_tol: float = 1e-9, abs_tol: float = 1e-12,
                   output_step: float = 0.01) -> BoundaryTrace:
    """Integrate seeds at 0.9 level_hint backwards in time and keep their tails.

    The tail cloud holds the trailing 25% of every non-escaped trajectory.
    loop_drift is the largest relative change, over seeds, of the mean radius
    between the third and fourth quarters of the trajectory.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    seeds = sample_ellipsoid(path, t0, 0.9 * level_hint, n_seeds, SampleMode.SURFACE, seed)
    run = integrate_samples(spec, seeds, t0, t0 - horizon_reverse, rel_tol=rel_tol,
                            abs_tol=abs_tol, output_step=output_step,
                            escape_radius=1e3 * level_hint)
    m = len(run.grid)
    q1, q3 = m // 2, (3 * m) // 4
    tails, drifts, trajectories, escaped = [], [], [], []
    for j in range(n_seeds):
        states = run.states[:, j]
        alive = np.all(np.isfinite(states), axis=1)
        gone = run.escape_times[j] is not None
        escaped.append(gone)
        trajectories.append((run.grid[alive], states[alive]))
        if gone:
            continue
        tails.append(states[q3:])
        r3 = float(np.mean(np.linalg.norm(states[q1:q3], axis=1)))
        r4 = float(np.mean(np.linalg.norm(states[q3:], axis=1)))
        drifts.append(abs(r4 - r3) / r4 if r4 > 0 else math.inf)
    cloud = np.concatenate(tails) if tails else np.empty((0, seeds.shape[1]))
    drift = max(drifts) if drifts else None
    return BoundaryTrace(seeds, trajectories, tuple(escaped), cloud, drift, (0, 1))


def hull_containment(trace: BoundaryTrace, points, plane: tuple[int, int] = (0, 1)) -> float:
    """Fraction of ``points`` inside the convex hull of the tail cloud projected on ``plane``."""
    from scipy.spatial import Delaunay

    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(trace.tail_cloud) < 3:
        return 0.0
    cloud = trace.tail_cloud[:, list(plane)]
    tri = Delaunay(cloud)
    inside = tri.find_simplex(points[:, list(plane)]) >= 0
    return float(np.mean(inside))
