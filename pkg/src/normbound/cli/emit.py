"""CSV, plot-script and manifest writers."""
from __future__ import annotations

import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("normbound")


def _fmt(v: float) -> str:
    return "%.17g" % v


def align_curves(curves):
    """Put (name, grid, values) curves on one grid.

    Curves whose grids are prefixes of the longest one are NaN-padded.  Other
    curves are resampled by linear interpolation onto the coarsest grid (largest mean spacing); points outside a curve's span are NaN.
    Returns ``(grid, columns, resampled_names)``.
    """
    curves = [(name, np.asarray(g, dtype=float), np.asarray(v, dtype=float))
              for name, g, v in curves]
    if not curves:
        return np.empty(0), {}, []
    grids = [g for _, g, _ in curves]
    longest = max(grids, key=len)
    if all(np.array_equal(g, longest[:len(g)]) for g in grids):
        # truncated curves (e.g. after a blow-up) are padded with NaN
        columns = {}
        for name, g, v in curves:
            col = np.full(len(longest), np.nan)
            col[:len(v)] = v
            columns[name] = col
        return longest, columns, []

    def spacing(g):
        return abs(g[-1] - g[0]) / (len(g) - 1) if len(g) > 1 else math.inf

    reference = max(grids, key=spacing)
    columns, resampled = {}, []
    for name, g, v in curves:
        if len(g) == len(reference) and np.array_equal(g, reference):
            columns[name] = v
            continue
        order = np.argsort(g)
        columns[name] = np.interp(reference, g[order], v[order], left=np.nan, right=np.nan)
        resampled.append(name)
    log.warning("resampled %s onto the coarsest grid (%d rows)", ", ".join(resampled),
                len(reference))
    return reference, columns, resampled


def emit_series(curves, path, title: str | None = None, plot: bool = True) -> Path:
    """Write curves as CSV (header, 17 significant digits, LF) plus a gnuplot script."""
    path = Path(path)
    grid, columns, _ = align_curves(curves)
    header = ["t"] + list(columns)
    lines = [",".join(header)]
    data = [grid] + list(columns.values())
    for i in range(len(grid)):
        lines.append(",".join(_fmt(col[i]) for col in data))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        if plot:
            write_plot_script(path, list(columns), title or path.stem)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err
    return path


def write_plot_script(csv_path: Path, names, title: str) -> Path:
    script = csv_path.with_suffix(".gp")
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set xlabel 't'",
        "set terminal pngcairo size 900,600",
        f"set output '{csv_path.stem}.png'",
    ]
    if names:
        parts = [f"'{csv_path.name}' using 1:{i + 2} with lines" for i in range(len(names))]
        lines.append("plot " + ", \\\n     ".join(parts))
    with open(script, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return script


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_clean(obj), fh, indent=2, sort_keys=False, allow_nan=False)
            fh.write("\n")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err
    return path


def versions() -> dict:
    from .. import __version__
    import scipy

    return {"normbound": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir, config, command: str, files, seed: int | None, extra=None) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_sha256": config.digest(),
        "config": config.raw,
        "defaults_applied": config.provenance,
        "seed": seed,
        "versions": versions(),
        "files": sorted(str(Path(f).name) for f in files),
    }
    if extra:
        manifest.update(extra)
    return write_json(manifest, Path(out_dir) / "manifest.json")
