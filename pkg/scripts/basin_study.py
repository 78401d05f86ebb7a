"""Compare certified region levels with the empirically observed basin.

For a preset with a stability basin, sample the ellipsoid at a range of levels
(multiples of the certified level) and record the fraction of samples whose
norm decays by a factor 100 over the horizon.  The certified level, the level
found by simulating the nonlinear auxiliary equation, and the sampled decay
curve are written to one CSV plus a JSON summary.

    python3 scripts/basin_study.py fig4_1 --out basin
"""
import argparse
import json
import math
from pathlib import Path

import numpy as np

from normbound.cli.commands import Session, certified_level, region_summary
from normbound.cli.presets import load_preset
from normbound.regions import level_from_simulation
from normbound.validate import SampleMode, check_decay, sample_ellipsoid


def main():
    parser = argparse.ArgumentParser(description="certified vs empirical basin levels")
    parser.add_argument("preset", nargs="?", default="fig4_1")
    parser.add_argument("--out", type=Path, default=Path("basin"))
    parser.add_argument("--samples", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--factors", type=float, nargs="+",
                        default=[0.5, 0.75, 0.95, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0])
    parser.add_argument("--mode", choices=("sup", "avg"))
    args = parser.parse_args()

    config = load_preset(args.preset)
    session = Session(config)
    analysis = region_summary(session, args.mode)
    cert = certified_level(analysis)
    sim = level_from_simulation(session.coeffs, 4.0 * (cert or 1.0))
    base = cert or sim
    if not base:
        raise SystemExit(f"{args.preset}: no finite region level to study")

    spec = config.system
    rows = []
    for factor in args.factors:
        level = factor * base
        pts = sample_ellipsoid(session.path, spec.t0, level, args.samples, SampleMode.VOLUME,
                               seed=args.seed)
        frac = check_decay(spec, pts, spec.horizon)
        rows.append((factor, level, frac))
        print(f"level {level:9.5f} ({factor:4.2f} x base)  decayed {frac:6.3f}", flush=True)

    args.out.mkdir(parents=True, exist_ok=True)
    arr = np.array(rows)
    np.savetxt(args.out / f"{args.preset}_decay.csv", arr, delimiter=",", fmt="%.17g",
               header="factor,level,decayed_fraction", comments="")
    full = [lvl for _, lvl, frac in rows if frac >= 0.99]
    summary = {
        "preset": args.preset,
        "mode": args.mode or config.regions.mode,
        "certified_level": cert,
        "simulation_level": sim,
        "largest_fully_decaying_level": max(full) if full else None,
        "certified_over_empirical": (cert / max(full)) if cert and full else math.nan,
        "samples": args.samples,
        "seed": args.seed,
    }
    (args.out / f"{args.preset}_summary.json").write_text(
        json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                    for k, v in summary.items()}, indent=2) + "\n")


if __name__ == "__main__":
    main()
