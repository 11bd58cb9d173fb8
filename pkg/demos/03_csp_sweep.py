"""Monte Carlo estimate of the bounded-support fraction across lambda.

Runs the shipped default sweep (4 exponents x 50 replicas, about ten
seconds) into a temporary directory and prints the table with Wilson
95% intervals.

Run: python3 demos/03_csp_sweep.py [--workers N]
"""

import argparse
import os
import tempfile

from csplab.config import SweepConfig
from csplab.harness import format_report, run_sweep

parser = argparse.ArgumentParser()
parser.add_argument("--workers", type=int, default=1)
args = parser.parse_args()

config = os.path.join(os.path.dirname(os.path.abspath(__file__)), os.pardir, "configs", "default_sweep.yaml")
with tempfile.TemporaryDirectory() as out:
    summary = run_sweep(SweepConfig.load(config), workers=args.workers, out=out)
    print(format_report(summary), end="")
