"""Numerical portfolio along one outer path next to the closed form.

    python3 scripts/oracle_path.py --config scripts/configs/power_constant.json --path-id 3
"""

import argparse
from pathlib import Path

import numpy as np

from funcport.cli import Session
from funcport.config import parse_config
from funcport.optimizer import oracle, optimal_portfolio


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--path-id", type=int, default=0)
    ap.add_argument("--every", type=int, default=8, help="print every n-th node")
    args = ap.parse_args()

    s = Session(parse_config(Path(args.config).read_text()))
    est = s.cfg.estimator
    path = s.ensemble(1, first=args.path_id)[0]
    F = s.functional(est.n_inner)
    fn = oracle(s.market, s.utility, s.x0)
    print(f"multiplier y = {F.y:.8g} (budget {s.solve.budget:.8g} +/- {s.solve.stderr:.2g})")
    print(f"{'node':>4} {'t':>7} {'X*':>10} {'pi*':>24} {'closed form':>24} {'rel err':>9}")
    worst = 0.0
    for k in range(0, path.grid.n_steps, args.every):
        res = optimal_portfolio(F, k, path, est.bump)
        pi = np.array2string(res.pi, precision=5, separator=" ")
        if fn is None:
            print(f"{k:>4} {res.t:>7.4f} {res.x_star:>10.6f} {pi:>24}")
            continue
        _, pi_or = fn(k, path)
        err = float(np.linalg.norm(res.pi - pi_or) / np.linalg.norm(pi_or))
        worst = max(worst, err)
        print(f"{k:>4} {res.t:>7.4f} {res.x_star:>10.6f} {pi:>24} "
              f"{np.array2string(pi_or, precision=5, separator=' '):>24} {err:>9.2e}")
    if fn is not None:
        print(f"worst relative error {worst:.3e}")


if __name__ == "__main__":
    main()
