"""Print the acceptance report and save it as CSV (same as ``fewfermions oracle``)."""
import argparse
import logging
import sys

from fewfermions import acceptance

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("criteria", nargs="*", type=int)
    ap.add_argument("--csv", default="runs/acceptance.csv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    results = acceptance.run(args.criteria or None, report=print)
    acceptance.write_csv(results, args.csv)
    sys.exit(0 if all(r.passed for r in results) else 1)
