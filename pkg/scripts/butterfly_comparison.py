#!/usr/bin/env python3
"""Compare all controller variants on the butterfly path.

    python scripts/butterfly_comparison.py --out results/butterfly
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from lpvfbs.controller import pad_trajectory
from lpvfbs.experiments import SPIKE_BAND, band_mask, butterfly_comparison, default_setup, spike_ratio


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/butterfly")
    ap.add_argument("--variants", default="baseline,a,b,c,d,e")
    ap.add_argument("--repeats", type=int, default=5, help="timing repeats (variant a runs once)")
    ap.add_argument("--lc", type=int, default=None, help="window length; default from the settle scan")
    args = ap.parse_args()

    setup = default_setup(window=args.lc)
    traj, rows, runs = butterfly_comparison(setup, tuple(args.variants.split(",")), repeats=args.repeats)
    Xd = pad_trajectory(traj.q, traj.X, setup.window)[1]
    mask = band_mask(Xd)
    for r in rows:
        r["band_max_over_rms"] = spike_ratio(runs[r["variant"]].error.error, mask)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(rows)
    pairs = {}
    if {"a", "b"} <= set(runs):
        pairs["a_vs_b_max_cmd_diff_mm"] = float(np.abs(runs["a"].command - runs["b"].command).max())
    if {"d", "e"} <= set(runs):
        pairs["d_vs_e_max_cmd_diff_mm"] = float(np.abs(runs["d"].command - runs["e"].command).max())
    (out / "summary.json").write_text(json.dumps({
        "samples": len(traj), "window": setup.window, "band": SPIKE_BAND, "band_samples": int(mask.sum()),
        "rows": rows, **pairs}, indent=2))

    print(f"butterfly: {len(traj)} samples, L_C = {setup.window}")
    print(f"{'variant':<9}{'time_s':>9}{'rms_um':>10}{'max_um':>10}{'improv_%':>10}{'band_ratio':>12}")
    for r in rows:
        imp = "" if r["improvement_pct"] is None else f"{r['improvement_pct']:.2f}"
        print(f"{r['variant']:<9}{r['wall_time_s']:>9.3f}{r['rms_um']:>10.4f}{r['max_um']:>10.3f}{imp:>10}"
              f"{r['band_max_over_rms']:>12.3f}")
    for k, v in pairs.items():
        print(f"{k}: {v:.2e}")


if __name__ == "__main__":
    main()
