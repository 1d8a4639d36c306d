#!/usr/bin/env python3
"""Worst-case impulse-response settle length over the workspace grid."""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from lpvfbs import DeltaGeometry, default_blocks, worst_case_settle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pitch", type=float, nargs="+", default=[20.0, 10.0, 5.0])
    ap.add_argument("--zeta", type=float, default=0.3)
    ap.add_argument("--out", default="results/settle")
    args = ap.parse_args()
    g, blocks = DeltaGeometry(), default_blocks(zeta=args.zeta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for pitch in args.pitch:
        t0 = time.perf_counter()
        rep = worst_case_settle(g, blocks, pitch)
        dt = time.perf_counter() - t0
        print(f"pitch {pitch:>5g} mm: {len(rep.positions):5d} points, L_C = {rep.recommended}, "
              f"worst at {np.round(rep.worst_position, 1).tolist()}, "
              f"settle range {rep.settle.min()}..{rep.settle.max()} ({dt:.1f} s)")
        with open(out / f"settle_pitch{pitch:g}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "settle"])
            w.writerows(np.column_stack([rep.positions, rep.settle]).tolist())


if __name__ == "__main__":
    main()
