"""Bias of the vertical derivative of M against the bump size h.

For deterministic coefficients and power utility the CRN central difference
has a pure O(h^2) bias, so the fraction error should fall by 4 per halving.

    python3 scripts/bump_tradeoff.py --config scripts/configs/power_constant.json
"""

import argparse
from pathlib import Path

import numpy as np

from funcport.cli import Session
from funcport.config import parse_config
from funcport.optimizer import merton_direction, optimal_portfolio


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--node", type=int, default=0)
    ap.add_argument("--bumps", type=float, nargs="+", default=[0.8, 0.4, 0.2, 0.1, 0.05, 0.025])
    args = ap.parse_args()

    s = Session(parse_config(Path(args.config).read_text()))
    if s.utility.family != "power" or not s.market.deterministic:
        raise SystemExit("needs power utility with deterministic coefficients")
    path = s.ensemble(1)[0]
    F = s.functional(s.cfg.estimator.n_inner)
    target = merton_direction(s.market, args.node, path) / (1 - s.utility.gamma)
    prev = None
    print(f"{'h':>7} {'|pi/X* - target|':>18} {'ratio':>7}")
    for h in args.bumps:
        res = optimal_portfolio(F, args.node, path, h)
        err = float(np.linalg.norm(res.pi / res.x_star - target))
        print(f"{h:>7.3f} {err:>18.3e} {'' if prev is None else f'{prev / err:7.3f}'}")
        prev = err


if __name__ == "__main__":
    main()
