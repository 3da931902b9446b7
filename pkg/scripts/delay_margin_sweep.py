#!/usr/bin/env python3
"""Sweep the delay bound for the benchmark network and report, per bound,
whether a certificate exists, the verified margins, and the ratio-based
delay estimate.  Useful for locating the certifiable region before running
the gain optimizer."""

import argparse
import sys
import time

import numpy as np

import lagsync as ls
from lagsync.fixtures import fixture_gains, fixture_plant, fixture_topology


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--taus",
        type=float,
        nargs="+",
        default=[0.01, 0.02, 0.05, 0.08, 0.12, 0.2],
        help="delay bounds to certify",
    )
    parser.add_argument("--slope-bound", type=float, default=0.9)
    parser.add_argument("--budget", type=int, default=8000)
    args = parser.parse_args()

    plant, topology, gains = fixture_plant(), fixture_topology(), fixture_gains()
    matrices = ls.assemble_closed_loop(plant, topology, gains)
    print(f"slope bound {args.slope_bound}; F spectral abscissa "
          f"{np.max(np.linalg.eigvals(matrices.f_matrix).real):.4f}")
    for tau in args.taus:
        start = time.perf_counter()
        res = ls.search_certificate(
            matrices,
            tau,
            budget=args.budget,
            d_pin=args.slope_bound,
            d_chan=args.slope_bound,
        )
        elapsed = time.perf_counter() - start
        if res.feasible:
            est = ls.estimate_max_delay(matrices, res.certificate)
            print(
                f"tau={tau:<6g} certified in {elapsed:5.1f}s | "
                f"margins {['%.2e' % m for m in res.report.margins]} | "
                f"ratio estimate {est.tau:.2e}"
            )
        else:
            print(
                f"tau={tau:<6g} NOT certified ({elapsed:5.1f}s) | "
                f"best margin {res.best_margin:.2e} | {res.reason}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
