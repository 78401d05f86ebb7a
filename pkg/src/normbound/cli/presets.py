"""Named experiment presets and their end-to-end pipelines."""
from __future__ import annotations

import logging
import math
from importlib import resources
from pathlib import Path

import numpy as np

from ..model import derive_envelope, oscillator_system
from ..regions import level_from_simulation
from ..transition import running_average, verify_norm_identity
from ..validate import SampleMode, check_bound, integrate_samples, sample_ellipsoid
from .commands import (Session, _analysis_json, bound_curves, certified_level, region_summary,
                       run_analyze, run_criteria, run_trace, sup_curve, write_points)
from .config import RunConfig, parse_config
from .emit import emit_series, write_json

log = logging.getLogger("normbound")

PRESETS = ("fig1", "fig2_1", "fig2_2", "fig4_1", "fig4_2", "fig4_3", "fig5", "fig6")


class UnknownPreset(KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unknown preset {self.name!r}; valid names: {', '.join(PRESETS)}"


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise UnknownPreset(name)
    return resources.files("normbound").joinpath("presets", f"{name}.json").read_text("utf-8")


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name))


def _fig1(config: RunConfig, out: Path, seed: int) -> tuple[list, dict]:
    files, summary = [], {}
    for mode in ("identity", "spectral"):
        session = Session(config, normalization=mode)
        path = session.path
        avg = running_average(path.p, path.grid)
        files.append(emit_series([("p", path.grid, path.p), ("p_running_avg", path.grid, avg)],
                                 out / f"p_{mode}.csv", title=f"p(t), {mode} normalization"))
        summary[mode] = {"p_running_avg_final": float(avg[-1]),
                         "p_variance": float(np.var(path.p)),
                         "norm_identity_error": verify_norm_identity(path)}
    return files, summary


def _fig2(config: RunConfig, out: Path, seed: int) -> tuple[list, dict]:
    session = Session(config)
    cfg = config
    X0 = cfg.analysis.x0
    linear, nonlinear = bound_curves(session, X0)
    samples = sample_ellipsoid(session.path, cfg.system.t0, X0, cfg.validation.samples,
                               SampleMode.SURFACE, seed)
    report = check_bound(cfg.system, nonlinear, samples, cfg.validation.rel_slack, seed=seed,
                         rel_tol=cfg.tolerances.rel)
    sup = sup_curve(session, X0)
    files = [
        emit_series([("X_linear", linear.grid, linear.X),
                     ("X_nonlinear", nonlinear.grid, nonlinear.X),
                     ("norm_measured", nonlinear.grid[:len(report.measured_max)],
                      report.measured_max),
                     ("X_sup", sup.grid, sup.X)],
                    out / "bounds.csv", title="norm bounds"),
        write_json(report.to_json(), out / "validation.json"),
    ]
    files += run_criteria(session, out)
    summary = {"violations": len(report.violations), "max_ratio": report.max_ratio,
               "linear_final": float(linear.X[-1]), "nonlinear_final": float(nonlinear.X[-1]),
               "sup_blow_up_time": sup.blow_up_time}
    return files, summary


def _ellipse(path, t0, level, count=361):
    theta = np.linspace(0.0, 2 * math.pi, count)
    z = level * np.column_stack([np.cos(theta), np.sin(theta)])
    return z @ path.w_at(t0).T


def _fig4(config: RunConfig, out: Path, seed: int) -> tuple[list, dict]:
    session = Session(config)
    primary = region_summary(session)
    sup = primary if config.regions.mode == "sup" else region_summary(session, "sup")
    level_cert = certified_level(primary)
    hint = level_cert or certified_level(sup) or 1.0
    level_sim = level_from_simulation(session.coeffs, 4.0 * hint)
    data = {"primary_mode": config.regions.mode, "primary": _analysis_json(primary),
            "sup": _analysis_json(sup), "simulation_level": level_sim}
    files = [write_json(data, out / "regions.json")]
    t0 = config.system.t0
    if session.spec.n == 2:
        cols, names = [], []
        for label, level in (("simulation", level_sim), ("certificate", level_cert)):
            if level:
                cols.append(_ellipse(session.path, t0, level))
                names += [f"x1_{label}", f"x2_{label}"]
        if cols:
            files.append(write_points(np.hstack(cols), names, out / "ellipses.csv"))
    trace_level = level_cert or level_sim
    summary = {"certified_level": level_cert, "simulation_level": level_sim,
               "regions": [r.kind.value for r in primary.regions]}
    if trace_level:
        files += run_trace(session, out, seed=seed, level=trace_level)
    return files, summary


def _fig5(config: RunConfig, out: Path, seed: int) -> tuple[list, dict]:
    session = Session(config)
    return run_analyze(session, out), {"k_min": float(np.min(session.path.k))}


def _fig6(config: RunConfig, out: Path, seed: int) -> tuple[list, dict]:
    duffing = config.system
    params = config.raw["system"].get("oscillator", {})
    vdp_params = dict(params, cubic_on=1)
    vdp = oscillator_system(**{k: v for k, v in vdp_params.items()},
                            t0=duffing.t0, horizon=duffing.horizon)
    env_d, env_v = derive_envelope(duffing.f), derive_envelope(vdp.f)
    identical = env_d == env_v
    log.info("envelope identity (Duffing vs Van der Pol): %s", "equal" if identical else "DIFFERENT")
    session = Session(config)
    X0 = config.analysis.x0
    _, nonlinear = bound_curves(session, X0)
    x0 = sample_ellipsoid(session.path, duffing.t0, X0, 1, SampleMode.SURFACE, seed)
    grid = nonlinear.grid
    step = config.tolerances.output_step
    runs = {name: integrate_samples(sys_, x0, float(grid[0]), float(grid[-1]),
                                    rel_tol=config.tolerances.rel, output_step=step)
            for name, sys_ in (("norm_duffing", duffing), ("norm_vdp", vdp))}
    series = [(name, run.grid, run.norms[:, 0]) for name, run in runs.items()]
    series.append(("X_nonlinear", grid, nonlinear.X))
    files = [emit_series(series, out / "norms.csv", title="Duffing and Van der Pol norms")]
    summary = {"envelope_identical": identical,
               "envelope_terms": [[d, [c.constant for c in cs]] for d, cs in env_d.terms],
               "x0": x0[0].tolist()}
    for name, run in runs.items():
        ratio = run.norms[:len(grid), 0] / np.maximum(nonlinear.X[:len(run.grid)], 1e-300)
        summary[f"{name}_max_ratio"] = float(np.max(ratio))
    return files, summary


PIPELINES = {"fig1": _fig1, "fig2_1": _fig2, "fig2_2": _fig2, "fig4_1": _fig4, "fig4_2": _fig4,
             "fig4_3": _fig4, "fig5": _fig5, "fig6": _fig6}


def run_preset(name: str, out: Path, config: RunConfig | None = None,
               seed: int | None = None) -> tuple[list, dict]:
    """Run the pipeline of preset ``name``; returns (files written, summary)."""
    if name not in PRESETS:
        raise UnknownPreset(name)
    config = config or load_preset(name)
    seed = config.validation.seed if seed is None else seed
    out = Path(out)
    files, summary = PIPELINES[name](config, out, seed)
    summary = {"preset": name, **summary}
    files.append(write_json(summary, out / "summary.json"))
    return files, summary
