"""Pipelines behind each CLI command.  Every function returns the files it wrote."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..auxiliary import (AuxCoefficients, build_coefficients, evaluate_criteria, solve_linear_aux,
                         solve_nonlinear_aux)
from ..regions import (RegionKind, analyze_regions, level_from_simulation, reduce_sup,
                       solve_autonomous, trapping_check)
from ..transition import (FundamentalPath, compute_fundamental, estimate_exponents,
                          transition_columns, verify_norm_identity)
from ..validate import (SampleMode, check_bound, check_decay, hull_containment, sample_ellipsoid,
                        trace_boundary)
from .config import ConfigError, RunConfig
from .emit import emit_series, write_json


class ViolationsFound(RuntimeError):
    """validate found bound violations (exit code 3)."""

    def __init__(self, count: int, files):
        super().__init__(f"{count} bound violation(s) detected")
        self.count = count
        self.files = files


@dataclass
class Session:
    """Caches the fundamental path and coefficients of one configuration."""

    config: RunConfig
    normalization: str | None = None
    _path: FundamentalPath | None = field(default=None, repr=False)
    _coeffs: AuxCoefficients | None = field(default=None, repr=False)

    @property
    def spec(self):
        return self.config.system

    @property
    def path(self) -> FundamentalPath:
        if self._path is None:
            tol = self.config.tolerances
            self._path = compute_fundamental(
                self.spec.A, self.spec.t0, self.spec.horizon,
                self.normalization or self.config.normalization,
                rel_tol=tol.rel, abs_tol=tol.abs, output_step=tol.output_step)
        return self._path

    @property
    def coeffs(self) -> AuxCoefficients:
        if self._coeffs is None:
            an = self.config.analysis
            self._coeffs = build_coefficients(self.spec, self.path, an.lipschitz_radius, an.x0)
        return self._coeffs

    @property
    def t_star(self) -> float:
        return self.spec.t0 + self.config.analysis.t_star_fraction * self.spec.horizon


def run_analyze(session: Session, out: Path, name: str = "transition") -> list[Path]:
    path = session.path
    cols = transition_columns(path)
    files = [emit_series([(k, cols["t"], v) for k, v in cols.items() if k != "t"],
                         out / f"{name}.csv", title="fundamental matrix series")]
    summary = {
        "normalization": path.normalization.value,
        "norm_identity_error": verify_norm_identity(path),
        "p_fallback_points": path.fallback_count,
        "k_min": float(np.min(path.k)),
        "k_max": float(np.max(path.k)),
        "p_running_avg_final": float(cols["p_running_avg"][-1]),
    }
    try:
        ex = estimate_exponents(path, restarts=session.config.analysis.restarts)
        summary.update(mu_max=ex.mu_max, N=ex.N, **{"lambda": ex.lam},
                       restart_times=list(ex.restart_times))
    except ValueError as err:
        summary["exponents_error"] = str(err)
    files.append(write_json(summary, out / f"{name}.json"))
    return files


def bound_curves(session: Session, X0: float | None = None):
    X0 = session.config.analysis.x0 if X0 is None else X0
    coeffs = session.coeffs
    linear = solve_linear_aux(coeffs, X0) if coeffs.l_profile is not None else None
    nonlinear = solve_nonlinear_aux(coeffs, X0, rel_tol=session.config.tolerances.rel)
    return linear, nonlinear


def _curve_info(curve):
    if curve is None:
        return None
    return {"kind": curve.kind.value, "X0": curve.X0, "blow_up_time": curve.blow_up_time,
            "final": float(curve.X[-1]), "max": float(np.max(curve.X))}


def run_bound(session: Session, out: Path) -> list[Path]:
    linear, nonlinear = bound_curves(session)
    series = []
    if linear is not None:
        series.append(("X_linear", linear.grid, linear.X))
    series.append(("X_nonlinear", nonlinear.grid, nonlinear.X))
    files = [emit_series(series, out / "bounds.csv", title="auxiliary bounds")]
    info = {"linear": _curve_info(linear), "nonlinear": _curve_info(nonlinear),
            "lipschitz_radius": session.coeffs.lipschitz_radius,
            "notes": list(session.coeffs.notes)}
    files.append(write_json(info, out / "bounds.json"))
    return files


def run_criteria(session: Session, out: Path) -> list[Path]:
    report = evaluate_criteria(session.coeffs, session.path, session.t_star,
                               restarts=session.config.analysis.restarts)
    data = report.to_json()
    data["notes"] = list(session.coeffs.notes) + data["notes"]
    return [write_json(data, out / "criteria.json")]


def region_summary(session: Session, mode: str | None = None):
    cfg = session.config
    mode = mode or cfg.regions.mode
    return analyze_regions(session.coeffs, session.path, mode, window=cfg.regions.mu_window,
                           omega2_radius=cfg.system.omega2_radius)


def _analysis_json(analysis) -> dict:
    red = analysis.reduction
    return {
        "reduction": {"mode": red.mode.value, "p_hat": red.p_hat, "k_hat": red.k_hat,
                      "F_hat": red.F_hat, "c_hat": {str(d): c for d, c in red.c_hat.items()},
                      "window": list(red.window),
                      "convergence_diagnostic": red.convergence_diagnostic},
        "roots": [{"d": d, "stability": s.value} for d, s in analysis.fixed_points.roots],
        "Q_coefficients": list(analysis.fixed_points.Q_coefficients),
        "monotone_growth": analysis.fixed_points.monotone_growth,
        "regions": [r.to_json() for r in analysis.regions],
        "mu": [{"d": d, "mu": m} for d, m in analysis.mu.items()],
        "notes": list(analysis.notes),
    }


def certified_level(analysis) -> float | None:
    """Finite level of the first basin, else of the first trapping region."""
    for kind in (RegionKind.STABILITY_BASIN, RegionKind.TRAPPING_REGION):
        for r in analysis.regions:
            if r.kind == kind and math.isfinite(r.level) and r.level > 0:
                return r.level
    return None


def run_regions(session: Session, out: Path, mode: str | None = None,
                simulate: bool = False) -> list[Path]:
    analysis = region_summary(session, mode)
    data = _analysis_json(analysis)
    trapping = [r for r in analysis.regions if r.kind == RegionKind.TRAPPING_REGION
                and math.isfinite(r.level)]
    if trapping:
        check = trapping_check(session.coeffs, trapping[0].level)
        data["trapping_check"] = {"bound": check.bound, "levels": list(check.levels),
                                  "sup_values": list(check.sup_values), "holds": check.holds}
    if simulate:
        hint = certified_level(analysis) or 1.0
        data["simulation_level"] = level_from_simulation(session.coeffs, 4.0 * hint)
    return [write_json(data, out / "regions.json")]


def run_validate(session: Session, out: Path, seed: int | None = None,
                 raise_on_violation: bool = True) -> list[Path]:
    cfg = session.config
    seed = cfg.validation.seed if seed is None else seed
    X0 = cfg.analysis.x0
    linear, nonlinear = bound_curves(session, X0)
    samples = sample_ellipsoid(session.path, cfg.system.t0, X0, cfg.validation.samples,
                               SampleMode.SURFACE, seed)
    report = check_bound(cfg.system, nonlinear, samples, cfg.validation.rel_slack, seed=seed,
                         rel_tol=cfg.tolerances.rel)
    series = []
    if linear is not None:
        series.append(("X_linear", linear.grid, linear.X))
    series.append(("X_nonlinear", nonlinear.grid, nonlinear.X))
    series.append(("X_measured_max", nonlinear.grid[:len(report.measured_max)],
                   report.measured_max))
    files = [emit_series(series, out / "bounds.csv", title="bounds against measured norms"),
             write_json(report.to_json(), out / "validation.json")]
    if report.violations and raise_on_violation:
        raise ViolationsFound(len(report.violations), files)
    return files


def write_points(points, names, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in points:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    return path


def run_trace(session: Session, out: Path, seed: int | None = None, level: float | None = None,
              horizon_reverse: float | None = None, n_seeds: int = 16,
              decay_T: float | None = None) -> list[Path]:
    cfg = session.config
    seed = cfg.validation.seed if seed is None else seed
    if level is None:
        level = certified_level(region_summary(session))
    if level is None:
        raise ConfigError("--level", "no finite certified level; pass --level")
    spec = cfg.system
    horizon_reverse = spec.horizon if horizon_reverse is None else horizon_reverse
    trace = trace_boundary(spec, session.path, level, spec.t0, horizon_reverse, n_seeds, seed,
                           rel_tol=max(cfg.tolerances.rel, 1e-9),
                           output_step=cfg.tolerances.output_step)
    interior = sample_ellipsoid(session.path, spec.t0, 0.95 * level, cfg.validation.samples,
                                SampleMode.VOLUME, seed + 1)
    data = trace.to_json()
    data["level"] = level
    data["seed"] = seed
    if trace.finite_boundary:
        data["hull_containment"] = hull_containment(trace, interior)
        data["hull_check_fatal"] = False
    else:
        data["outcome"] = "no finite boundary: all seeds escaped in reverse time"
    T = spec.horizon if decay_T is None else decay_T
    data["decayed_fraction"] = check_decay(spec, interior, T)
    data["decay_T"] = T
    names = [f"x{i + 1}" for i in range(spec.n)]
    files = [write_points(trace.tail_cloud, names, out / "tail_cloud.csv"),
             write_json(data, out / "trace.json")]
    return files


def sup_curve(session: Session, X0: float):
    red = reduce_sup(session.coeffs)
    return solve_autonomous(red, X0, session.coeffs.grid, rel_tol=session.config.tolerances.rel)
