"""Run the desk-scale CTTA comparison and summarize it from metrics.csv.

    python scripts/run_desk.py [--config scripts/desk.conf] [--out out/desk] [--jobs 4]

Prints mean online accuracy per mode with the across-seed standard error, the
margin of ctta_t over each other mode, and how many seeds show a CDA distance
spike at every domain boundary.
"""

from __future__ import annotations

import argparse
import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from driftbench import config, experiment

HERE = Path(__file__).resolve().parent


def standard_error(values) -> float:
    return float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else math.nan


def load_rows(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def per_seed_accuracy(rows: list[dict]) -> dict[str, dict[int, float]]:
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["mode"]][int(r["seed"])].append(float(r["online_accuracy"]))
    return {mode: {s: float(np.mean(v)) for s, v in seeds.items()} for mode, seeds in acc.items()}


def boundary_spikes(rows: list[dict], mode: str, window: int = 5) -> tuple[int, int]:
    """(seeds spiking at every boundary, seeds examined)."""
    by_seed = defaultdict(dict)
    for r in rows:
        if r["mode"] == mode and r["distance"]:
            by_seed[int(r["seed"])][int(r["step"])] = (int(r["domain_id"]), float(r["distance"]))
    hits = 0
    for steps in by_seed.values():
        order = sorted(steps)
        boundaries = [k for prev, k in zip(order, order[1:]) if steps[k][0] != steps[prev][0] and k >= window]
        hits += bool(boundaries) and all(
            steps[b][1] > np.mean([steps[b - j][1] for j in range(1, window + 1)]) for b in boundaries
        )
    return hits, len(by_seed)


def report(rows: list[dict], reference: str = "ctta_t") -> None:
    acc = per_seed_accuracy(rows)
    seeds = sorted(acc[reference]) if reference in acc else []
    print(f"{'mode':<20}{'mean':>8}{'SE':>8}")
    for mode, values in acc.items():
        v = list(values.values())
        print(f"{mode:<20}{np.mean(v):>8.4f}{standard_error(v):>8.4f}")
    if not seeds:
        return
    ours = np.array([acc[reference][s] for s in seeds])
    for mode, values in acc.items():
        if mode == reference:
            continue
        theirs = np.array([values[s] for s in seeds])
        se = max(standard_error(ours - theirs), standard_error(ours), standard_error(theirs))
        print(f"{reference} - {mode}: {ours.mean() - theirs.mean():+.4f} (largest SE {se:.4f})")
    hits, total = boundary_spikes(rows, reference)
    print(f"boundary distance spikes at every boundary: {hits}/{total} seeds")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, default=HERE / "desk.conf")
    parser.add_argument("--out", type=Path)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--reuse", action="store_true", help="summarize an existing metrics.csv without rerunning")
    args = parser.parse_args()

    cfg = config.with_overrides(config.load(args.config), jobs=args.jobs)
    out = args.out or Path(cfg.out)
    if not args.reuse:
        experiment.run_experiment(cfg, out)
    report(load_rows(out / "metrics.csv"))


if __name__ == "__main__":
    main()
