"""Run every bundled preset (or the named ones) and print a one-line summary each.

    python3 scripts/reproduce_figures.py --out figures
    python3 scripts/reproduce_figures.py fig2_1 fig4_1 --seed 3
"""
import argparse
import json
import logging
import time
from pathlib import Path

from normbound.cli.presets import PRESETS, run_preset


def headline(summary: dict) -> str:
    keys = ("violations", "max_ratio", "certified_level", "simulation_level", "k_min",
            "envelope_identical")
    parts = [f"{k}={summary[k]:.4g}" if isinstance(summary.get(k), float) else f"{k}={summary[k]}"
             for k in keys if k in summary]
    for mode in ("identity", "spectral"):
        if mode in summary:
            parts.append(f"pbar_{mode}={summary[mode]['p_running_avg_final']:.5f}")
    return " ".join(parts)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("presets", nargs="*", metavar="PRESET", help=f"any of {', '.join(PRESETS)}")
    parser.add_argument("--out", type=Path, default=Path("figures"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    unknown = sorted(set(args.presets) - set(PRESETS))
    if unknown:
        parser.error(f"unknown preset(s) {', '.join(unknown)}; valid: {', '.join(PRESETS)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    index = {}
    for name in args.presets or PRESETS:
        start = time.perf_counter()
        files, summary = run_preset(name, args.out / name, seed=args.seed)
        elapsed = time.perf_counter() - start
        index[name] = {"seconds": round(elapsed, 2), "files": [str(f) for f in files]}
        print(f"{name:7s} {elapsed:6.1f}s  {headline(summary)}", flush=True)
    (args.out / "index.json").write_text(json.dumps(index, indent=2) + "\n")


if __name__ == "__main__":
    main()
