#!/usr/bin/env python3
"""Flop ledger vs closed forms, and wall time of the two window solvers."""

import argparse
import time

import numpy as np

from lpvfbs.flops import FlopLedger, pinv_flops_closed_form, qr_flops_closed_form
from lpvfbs.solvers import lsq_pinv, lsq_qr


def best_time(fn, reps):
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="100x20,196x44,400x60,627x135")
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'L x n':>10}{'pinv/closed':>13}{'qr/closed':>11}{'qr<pinv':>9}{'t_pinv_ms':>11}{'t_qr_ms':>9}")
    for size in args.sizes.split(","):
        L, n = map(int, size.split("x"))
        A, b = rng.normal(size=(L, n)), rng.normal(size=L)
        lp, lq = FlopLedger(), FlopLedger()
        lsq_pinv(A, b, lp)
        lsq_qr(A, b, lq, block=16)
        tp = best_time(lambda: lsq_pinv(A, b), args.reps)
        tq = best_time(lambda: lsq_qr(A, b, block=16), args.reps)
        print(f"{size:>10}{lp.total() / pinv_flops_closed_form(L, n):>13.2f}"
              f"{lq.total() / qr_flops_closed_form(L, n):>11.2f}{str(lq.total() < lp.total()):>9}"
              f"{1e3 * tp:>11.2f}{1e3 * tq:>9.2f}")


if __name__ == "__main__":
    main()
