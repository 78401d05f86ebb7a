"""Autonomous reductions of the nonlinear auxiliary equation and region certificates.

Replacing p, k, L, ||F|| by sups (or window averages) turns the auxiliary
equation into X' = Q(X) with
    Q(X) = p X + k sum_d c_d X^d + k F.
Its nonnegative roots split initial levels into decaying, trapped and
growing ones; each root yields an ellipsoid ||W^-1(t0) x0|| <= level.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .auxiliary import (AuxCoefficients, BoundCurve, CurveKind, _integrate_scalar, interpolant,
                        solve_nonlinear_aux)
from .ode import integrate
from .transition import FundamentalPath

ROOT_RTOL = 1e-12
RESIDUAL_TOL = 1e-10
SEMISTABLE_TOL = 1e-8
AVERAGING_WARN = 0.1
SCAN_POINTS = 2048


class ReductionMode(str, enum.Enum):
    SUP = "sup"
    AVERAGED = "avg"


class Stability(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    SEMISTABLE = "SemiStable"


class RegionKind(str, enum.Enum):
    STABILITY_BASIN = "StabilityBasin"
    TRAPPING_REGION = "TrappingRegion"
    ULTIMATE_BOUND = "UltimateBound"
    UNBOUNDED = "Unbounded"


class MarginEstimationFailed(RuntimeError):
    """The oscillatory auxiliary solution left [0, 2d]; the margin is unreliable."""


@dataclass(frozen=True)
class AutonomousReduction:
    p_hat: float
    k_hat: float
    F_hat: float
    c_hat: dict
    mode: ReductionMode
    window: tuple[float, float]
    convergence_diagnostic: float = 0.0
    warnings: tuple[str, ...] = ()

    def coefficients(self) -> np.ndarray:
        """Q in ascending powers of X."""
        degree = max([1] + list(self.c_hat))
        q = np.zeros(degree + 1)
        q[0] = self.k_hat * self.F_hat
        q[1] = self.p_hat
        for d, c in self.c_hat.items():
            q[d] += self.k_hat * c
        return q

    def Q(self, X):
        return np.polynomial.polynomial.polyval(X, self.coefficients())

    def dQ(self, X):
        return np.polynomial.polynomial.polyval(X, np.polynomial.polynomial.polyder(self.coefficients()))

    @property
    def scale(self) -> float:
        return max(abs(self.p_hat), self.k_hat)


def _window_mask(grid, window):
    if window is None:
        return np.ones(grid.shape, dtype=bool), (float(grid[0]), float(grid[-1]))
    a, b = window
    if not b > a:
        raise ValueError("window must have positive length")
    if a < grid[0] - 1e-9 or b > grid[-1] + 1e-9:
        raise ValueError(f"window [{a}, {b}] outside the computed horizon")
    mask = (grid >= a - 1e-12) & (grid <= b + 1e-12)
    if np.count_nonzero(mask) < 2:
        raise ValueError("window contains fewer than two grid points")
    return mask, (float(a), float(b))


def reduce_sup(coeffs: AuxCoefficients, window=None) -> AutonomousReduction:
    """Grid sups of p and k; exact harmonic sup bounds for c_d and F."""
    mask, window = _window_mask(coeffs.grid, window)
    return AutonomousReduction(
        p_hat=float(np.max(coeffs.p[mask])),
        k_hat=float(np.max(coeffs.k[mask])),
        F_hat=float(coeffs.forcing_hat),
        c_hat=dict(coeffs.envelope.sup_coefficients),
        mode=ReductionMode.SUP,
        window=window,
    )


def _mean(values, grid):
    return float(np.trapezoid(values, grid) / (grid[-1] - grid[0]))


def reduce_average(coeffs: AuxCoefficients, window=None) -> AutonomousReduction:
    """Window averages of p, k, ||F|| and each envelope coefficient profile.

    The diagnostic is the largest relative difference between averages over
    the full window and over its second half.
    """
    mask, window = _window_mask(coeffs.grid, window)
    grid = coeffs.grid[mask]
    half = grid >= 0.5 * (grid[0] + grid[-1]) - 1e-12
    series = {"p": coeffs.p[mask], "k": coeffs.k[mask], "F": coeffs.forcing_norm[mask]}
    for d in coeffs.envelope.degrees:
        series[d] = np.asarray(coeffs.envelope.coefficient_profile(d, grid)) * np.ones_like(grid)
    full, diagnostic = {}, 0.0
    for name, values in series.items():
        full[name] = _mean(values, grid)
        second = _mean(values[half], grid[half]) if np.count_nonzero(half) >= 2 else full[name]
        denom = max(abs(full[name]), abs(second))
        if denom > 1e-300:
            diagnostic = max(diagnostic, abs(full[name] - second) / denom)
    notes = ()
    if diagnostic > AVERAGING_WARN:
        notes = (f"averaging not converged: window diagnostic {diagnostic:.3g} > {AVERAGING_WARN}",)
        warnings.warn(notes[0], RuntimeWarning, stacklevel=2)
    return AutonomousReduction(
        p_hat=full["p"],
        k_hat=full["k"],
        F_hat=full["F"],
        c_hat={d: full[d] for d in coeffs.envelope.degrees},
        mode=ReductionMode.AVERAGED,
        window=window,
        convergence_diagnostic=diagnostic,
        warnings=notes,
    )


@dataclass(frozen=True)
class FixedPointSet:
    roots: tuple[tuple[float, Stability], ...]
    Q_coefficients: tuple[float, ...]
    scan_max: float
    monotone_growth: bool = False

    @property
    def positive(self) -> tuple[tuple[float, Stability], ...]:
        return tuple(r for r in self.roots if r[0] > 0)


def scan_ceiling(q: np.ndarray) -> float:
    """10x the largest point where the leading term balances a lower one."""
    q = np.trim_zeros(np.asarray(q, dtype=float), "b")
    D = len(q) - 1
    if D < 1:
        return 1.0
    lead = abs(q[D])
    balance = [(abs(q[j]) / lead) ** (1.0 / (D - j)) for j in range(D) if q[j] != 0]
    return 10.0 * max(balance + [1e-12])


def _bisect(fun, a: float, b: float, fa: float) -> float:
    for _ in range(400):
        m = 0.5 * (a + b)
        if b - a <= ROOT_RTOL * max(abs(m), 1e-300):
            break
        fm = fun(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _scan_roots(q: np.ndarray, dq: np.ndarray, x_max: float, points: int, tol: float):
    Q = lambda x: float(np.polynomial.polynomial.polyval(x, q))
    dQ = lambda x: float(np.polynomial.polynomial.polyval(x, dq))
    xs = np.linspace(0.0, x_max, points + 1)
    vals = np.polynomial.polynomial.polyval(xs, q)
    roots = []
    if vals[0] == 0.0:
        roots.append(0.0)
    for i in range(points):
        a, b, fa, fb = xs[i], xs[i + 1], vals[i], vals[i + 1]
        if fb == 0.0:
            roots.append(float(b))
        elif fa != 0.0 and (fa > 0) != (fb > 0):
            roots.append(_bisect(Q, a, b, fa))
    # touching roots: Q' changes sign with |Q| tiny
    dvals = np.polynomial.polynomial.polyval(xs, dq)
    for i in range(points):
        a, b, fa, fb = xs[i], xs[i + 1], dvals[i], dvals[i + 1]
        if fa != 0.0 and fb != 0.0 and (fa > 0) != (fb > 0):
            c = _bisect(dQ, a, b, fa)
            if abs(Q(c)) <= tol and all(abs(c - r) > 1e-6 * max(1.0, c) for r in roots):
                roots.append(c)
    return sorted(roots)


def find_fixed_points(red: AutonomousReduction, x_max: float | None = None) -> FixedPointSet:
    """Nonnegative roots of Q, classified by the sign of Q'."""
    q = red.coefficients()
    dq = np.polynomial.polynomial.polyder(q)
    scale = red.scale
    if x_max is None:
        x_max = scan_ceiling(q)
    tol = RESIDUAL_TOL * scale
    points = SCAN_POINTS
    roots = _scan_roots(q, dq, x_max, points, tol)
    stable_for = 0
    while stable_for < 2 and points < 2 ** 20:
        points *= 2
        refined = _scan_roots(q, dq, x_max, points, tol)
        stable_for = stable_for + 1 if len(refined) == len(roots) else 0
        roots = refined
    classified = []
    for d in roots:
        slope = float(np.polynomial.polynomial.polyval(d, dq))
        if abs(slope) <= SEMISTABLE_TOL * scale:
            kind = Stability.SEMISTABLE
        elif slope < 0:
            kind = Stability.STABLE
        else:
            kind = Stability.UNSTABLE
        classified.append((float(d), kind))
    growth = red.p_hat > 0 and not any(d > 0 for d, _ in classified)
    return FixedPointSet(tuple(classified), tuple(float(c) for c in q), float(x_max), growth)


def _mu_rhs(coeffs: AuxCoefficients):
    grid = coeffs.grid
    p, k, F = (interpolant(grid, v) for v in (coeffs.p, coeffs.k, coeffs.forcing_norm))
    L = coeffs.envelope.scalar_evaluator()

    def rhs(t, X):
        x = max(float(X[0]), 0.0)
        return np.array([p(t) * x + k(t) * (L(t, x) + F(t))])

    return rhs


def estimate_mu(coeffs: AuxCoefficients, red: AutonomousReduction, d: float,
                stability: Stability, window=None, rel_tol: float = 1e-9,
                abs_tol: float = 1e-12) -> float:
    """sup over the trailing half of |X(t) - d| for the oscillatory equation started at d.

    Stable roots are integrated forward, unstable ones in reverse time so
    that the nearby solution is attracting.
    """
    if red.mode != ReductionMode.AVERAGED:
        raise ValueError("margins apply to averaged reductions")
    if not d > 0:
        raise ValueError("margin needs a positive root")
    mask, (a, b) = _window_mask(coeffs.grid, window)
    start, end = (a, b) if stability != Stability.UNSTABLE else (b, a)
    traj = integrate(_mu_rhs(coeffs), start, end, np.array([d]), rel_tol=rel_tol,
                     abs_tol=abs_tol, output_step=coeffs.step, escape_radius=2.0 * d,
                     norm=lambda s: abs(float(s[0])))
    X = traj.states[:, 0]
    if traj.escaped or np.any(X < 0):
        raise MarginEstimationFailed(f"auxiliary solution left [0, {2 * d:.6g}] from root {d:.6g}")
    tail = X[len(X) // 2:]
    return float(np.max(np.abs(tail - d)))


@dataclass(frozen=True)
class RegionEstimate:
    kind: RegionKind
    level: float
    mu: float
    t0: float
    Winv_t0: np.ndarray
    validity_radius_checked: bool = False
    root: float | None = None
    notes: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "level": self.level if math.isfinite(self.level) else None,
            "mu": self.mu,
            "t0": self.t0,
            "Winv_t0": [float(v) for v in np.asarray(self.Winv_t0).ravel()],
            "validity_radius_checked": self.validity_radius_checked,
        }

    def contains(self, x0) -> bool:
        return bool(np.linalg.norm(self.Winv_t0 @ np.asarray(x0, dtype=float)) <= self.level)


def classify_regions(fps: FixedPointSet, red: AutonomousReduction, path: FundamentalPath,
                     t0: float | None = None, mu_per_root: dict | None = None,
                     omega2_radius: float | None = None) -> list[RegionEstimate]:
    """Region certificates from the roots of Q.

    Every positive root d gives a trapping region at d - mu.  With F = 0 and a
    first positive root that is unstable, the same level is a stability basin.
    The smallest positive root, when stable, bounds the ultimate behaviour at
    d + mu.  Without positive roots Q has one sign on (0, inf): positive means
    unbounded growth, negative a global basin (infinite level).
    """
    t0 = path.t0 if t0 is None else t0
    Winv = path.winv_at(t0)
    mu_per_root = mu_per_root or {}
    checked = omega2_radius is not None and math.isfinite(omega2_radius)
    positive = fps.positive

    def make(kind, level, mu, root=None):
        notes = []
        if checked and level > omega2_radius:
            msg = f"{kind.value} level {level:.6g} truncated to validity radius {omega2_radius:.6g}"
            warnings.warn(msg, RuntimeWarning, stacklevel=3)
            notes.append(msg)
            level = float(omega2_radius)
        return RegionEstimate(kind, float(level), float(mu), float(t0), Winv, checked, root,
                              tuple(notes))

    if not positive:
        if float(red.Q(max(fps.scan_max, 1.0))) > 0 or red.p_hat > 0:
            return [make(RegionKind.UNBOUNDED, math.inf, 0.0)]
        if red.F_hat == 0:
            return [make(RegionKind.STABILITY_BASIN, math.inf, 0.0)]
        return [make(RegionKind.TRAPPING_REGION, math.inf, 0.0)]

    out = []
    d_first, s_first = positive[0]
    mu_first = mu_per_root.get(d_first, 0.0)
    if red.F_hat == 0 and red.p_hat < 0 and s_first == Stability.UNSTABLE and d_first > mu_first:
        out.append(make(RegionKind.STABILITY_BASIN, d_first - mu_first, mu_first, d_first))
    for d, stability in positive:
        mu = mu_per_root.get(d, 0.0)
        if d > mu:
            out.append(make(RegionKind.TRAPPING_REGION, d - mu, mu, d))
    if s_first == Stability.STABLE and (red.F_hat > 0 or red.p_hat > 0):
        out.append(make(RegionKind.ULTIMATE_BOUND, d_first + mu_first, mu_first, d_first))
    return out


def ellipsoid_membership(path: FundamentalPath, t0: float, x0, level: float) -> bool:
    if level < 0:
        raise ValueError("level must be >= 0")
    z = path.winv_at(t0) @ np.asarray(x0, dtype=float)
    return bool(np.linalg.norm(z) <= level * (1 + 1e-12))


def solve_autonomous(red: AutonomousReduction, X0: float, grid, rel_tol: float = 1e-10,
                     abs_tol: float = 1e-12, escape_radius: float = 1e6) -> BoundCurve:
    """X' = Q(X) on ``grid``; the curve kind follows the reduction mode."""
    q = red.coefficients()
    kind = CurveKind.AUTONOMOUS_SUP if red.mode == ReductionMode.SUP else CurveKind.AVERAGED

    def rhs(t, X):
        return np.array([np.polynomial.polynomial.polyval(max(float(X[0]), 0.0), q)])

    return _integrate_scalar(rhs, np.asarray(grid, dtype=float), X0, kind, rel_tol, abs_tol,
                             escape_radius)


def decays(curve: BoundCurve, fraction: float = 1e-2) -> bool:
    return not curve.blew_up and curve.X[-1] < fraction * max(curve.X0, 1e-300)


def level_from_simulation(coeffs: AuxCoefficients, X_hi: float, fraction: float = 1e-2,
                          rel_precision: float = 1e-3, rel_tol: float = 1e-8,
                          floor: float = 1e-9) -> float:
    """Largest X* (bisection) whose nonlinear auxiliary curve is attracted.

    Unforced: the curve must decay below fraction * X*.  Forced: it must end
    no higher than max(X*, X_attr), X_attr being the end value of the curve
    started at 0 (the forced attractor).  Relies on monotonicity of X(t, X0)
    in X0.  Returns 0 when no level above floor * X_hi qualifies and X_hi when
    X_hi itself does.
    """
    forced = bool(np.any(coeffs.forcing_norm > 0))
    attractor = 0.0
    if forced:
        base = solve_nonlinear_aux(coeffs, 0.0, rel_tol=rel_tol)
        if base.blew_up:
            return 0.0
        attractor = float(base.X[-1])

    def ok(level):
        curve = solve_nonlinear_aux(coeffs, level, rel_tol=rel_tol)
        if not forced:
            return decays(curve, fraction)
        return not curve.blew_up and curve.X[-1] <= max(level, attractor)

    if ok(X_hi):
        return float(X_hi)
    lo, hi = 0.0, float(X_hi)
    while hi - lo > rel_precision * hi:
        if hi < floor * X_hi:
            return 0.0
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class TrappingCheck:
    levels: tuple[float, ...]
    sup_values: tuple[float, ...]
    bound: float
    holds: bool


def trapping_check(coeffs: AuxCoefficients, d: float, count: int = 8) -> TrappingCheck:
    """sup_t X(t, X*) <= d for X* on ``count`` levels in (0, d]."""
    levels = tuple(float(v) for v in np.linspace(d / count, d, count))
    sups = []
    for level in levels:
        curve = solve_nonlinear_aux(coeffs, level)
        sups.append(math.inf if curve.blew_up else float(np.max(curve.X)))
    holds = all(s <= d * (1 + 1e-9) for s in sups)
    return TrappingCheck(levels, tuple(sups), float(d), holds)


@dataclass(frozen=True)
class RegionAnalysis:
    reduction: AutonomousReduction
    fixed_points: FixedPointSet
    regions: list = field(default_factory=list)
    mu: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()


def analyze_regions(coeffs: AuxCoefficients, path: FundamentalPath,
                    mode: ReductionMode | str = ReductionMode.SUP, window=None,
                    omega2_radius: float | None = None) -> RegionAnalysis:
    """Reduction, roots, margins and certificates in one pass.

    In averaged mode a failed margin estimate for any root falls back to the
    sup reduction, which needs no margin.
    """
    mode = ReductionMode(mode)
    notes = []
    if mode == ReductionMode.SUP:
        red = reduce_sup(coeffs, window)
    else:
        red = reduce_average(coeffs, window)
        notes.extend(red.warnings)
    fps = find_fixed_points(red)
    mu = {}
    if mode == ReductionMode.AVERAGED:
        try:
            for d, stability in fps.positive:
                mu[d] = estimate_mu(coeffs, red, d, stability, window)
        except MarginEstimationFailed as err:
            notes.append(f"{err}; falling back to sup reduction")
            red = reduce_sup(coeffs, window)
            fps = find_fixed_points(red)
            mu = {}
    regions = classify_regions(fps, red, path, mu_per_root=mu, omega2_radius=omega2_radius)
    for r in regions:
        notes.extend(r.notes)
    return RegionAnalysis(red, fps, regions, mu, tuple(notes))
