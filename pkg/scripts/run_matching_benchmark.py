#!/usr/bin/env python3
"""Benchmark the spatial vs FFT score-volume paths.

Sweeps kernel sizes and embedding channel counts, reports per-method
median/mean/min wall time and the resulting speedup, and optionally
writes one combined CSV.  The spatial path is the literal reference
implementation, so expect it to dominate the runtime of this script.

Example:
    python3 scripts/run_matching_benchmark.py --reps 25 \
        --sizes 128x160,480x600 --channels 1,2,4 --out bench.csv
"""

import argparse
import csv
import math
import sys

from bevloc.cli import bench_matching
from bevloc.matching import SearchWindow


def parse_sizes(text):
    sizes = []
    for part in text.split(","):
        rows, _, cols = part.strip().partition("x")
        sizes.append((int(rows), int(cols)))
    return sizes


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="480x600",
                    help="kernel sizes as ROWSxCOLS, comma-separated")
    ap.add_argument("--channels", default="1,2,4,8,12",
                    help="embedding channel counts, comma-separated")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--window-cells", type=int, default=21)
    ap.add_argument("--n-theta", type=int, default=5)
    ap.add_argument("--theta-step-deg", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="combined CSV output path")
    args = ap.parse_args(argv)

    window = SearchWindow(x_cells=args.window_cells,
                          y_cells=args.window_cells,
                          n_theta=args.n_theta,
                          theta_step=math.radians(args.theta_step_deg),
                          resolution=0.05)
    channels = [int(c) for c in args.channels.split(",")]
    all_rows = []
    for rows, cols in parse_sizes(args.sizes):
        results = bench_matching(rows, cols, window, channels, args.reps,
                                 seed=args.seed)
        med = {}
        for name, ch, med_s, mean_s, min_s in results:
            med[(name, ch)] = med_s
            all_rows.append((f"{rows}x{cols}", name, ch, args.reps,
                             med_s, mean_s, min_s))
            print(f"[{rows}x{cols} ch={ch:2d}] {name:7s} "
                  f"median {1e3 * med_s:8.2f} ms  mean {1e3 * mean_s:8.2f} ms"
                  f"  min {1e3 * min_s:8.2f} ms")
        for ch in channels:
            print(f"[{rows}x{cols} ch={ch:2d}] speedup "
                  f"{med[('spatial', ch)] / med[('fft', ch)]:6.1f}x")

    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["kernel", "method", "channels", "reps",
                        "median_s", "mean_s", "min_s"])
            for kernel, name, ch, reps, med_s, mean_s, min_s in all_rows:
                w.writerow([kernel, name, ch, reps, f"{med_s:.6f}",
                            f"{mean_s:.6f}", f"{min_s:.6f}"])
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
