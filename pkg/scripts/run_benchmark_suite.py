#!/usr/bin/env python3
"""Run the three bundled benchmark scenarios end to end.

Equivalent to:

    lagsync reproduce-paper --variant fig2 --out runs/reproduce-fig2 --plots
    lagsync reproduce-paper --variant fig3 --out runs/reproduce-fig3 --plots
    lagsync reproduce-paper --variant fig4 --out runs/reproduce-fig4 --plots

and prints each scenario's summary.
"""

import argparse
import json
import sys

from lagsync.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs", help="base output directory")
    parser.add_argument("--seed", type=int, help="override the pinned seeds")
    parser.add_argument("--no-plots", action="store_true")
    args = parser.parse_args()

    for variant in ("fig2", "fig3", "fig4"):
        argv = ["reproduce-paper", "--variant", variant, "--out", f"{args.out}/reproduce-{variant}"]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        if not args.no_plots:
            argv.append("--plots")
        rc = cli_main(argv)
        if rc != 0:
            print(f"{variant} failed with exit code {rc}", file=sys.stderr)
            return rc
        with open(f"{args.out}/reproduce-{variant}/summary.json") as fh:
            print(f"{variant}: {json.dumps(json.load(fh), sort_keys=True)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
