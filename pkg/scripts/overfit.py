#!/usr/bin/env python3
"""Capacity check: overfit 5 synthetic clips per digit.

    python3 scripts/overfit.py --out runs/overfit

Prints the epoch at which training accuracy first reaches 100% and the
elapsed time.
"""

import argparse
import logging
import sys
import tempfile

from digitrec.experiment import overfit_run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", help="where to write the clips (default: a temporary directory)")
    ap.add_argument("--per-class", type=int, default=5)
    ap.add_argument("--max-epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    with tempfile.TemporaryDirectory() as tmp:
        report = overfit_run(args.out or tmp, n_per_class=args.per_class,
                             max_epochs=args.max_epochs, seed=args.seed)
    last = report.epochs[-1]
    status = "reached" if last.train_acc == 1.0 else "did not reach"
    print(f"{status} 100% train accuracy after {last.epoch} epochs "
          f"(train acc {last.train_acc:.3f}) in {report.wall_clock_s:.1f}s")
    return 0 if last.train_acc == 1.0 else 1


if __name__ == "__main__":
    sys.exit(main())
