"""Replication error of the numerical portfolio as the grid is refined.

Wealth is run under pi* computed by bump-and-revalue at every node and
compared with the optimal claim I(y H(T)).  The same fine paths are observed
on each coarser grid.

    python3 scripts/replication_sweep.py --config scripts/configs/power_constant.json --levels 16 32 64 128
"""

import argparse
import math
from pathlib import Path

import numpy as np

from funcport.cli import Session
from funcport.config import parse_config
from funcport.optimizer import optimal_policy
from funcport.verify import terminal_errors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--levels", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--outer", type=int, default=64)
    ap.add_argument("--inner", type=int, default=1000)
    args = ap.parse_args()

    s = Session(parse_config(Path(args.config).read_text()))
    levels = sorted(args.levels)
    fine = s.ensemble(args.outer, levels[-1])
    policy = optimal_policy(s.functional(args.inner), s.cfg.estimator.bump)
    prev = None
    print(f"{'K':>5} {'rel RMSE':>10} {'ratio':>7}   (order 1/2 gives ratio sqrt(2) = {math.sqrt(2):.3f})")
    for K in levels:
        err = terminal_errors(s.market, s.utility, policy, s.x0, s.solve.y, fine.coarsen(levels[-1] // K), s.workers)
        rmse = float(np.sqrt(np.mean(err ** 2)) / s.x0)
        ratio = "" if prev is None else f"{prev / rmse:7.3f}"
        print(f"{K:>5} {rmse:>10.5f} {ratio}")
        prev = rmse


if __name__ == "__main__":
    main()
