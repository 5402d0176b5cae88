"""Ensemble mean of M(t) = H(t) X*(t) node by node, written as CSV.

    python3 scripts/flatness.py --config scripts/configs/power_constant.json --outer 10000 --out flat.csv
"""

import argparse
import csv
from pathlib import Path

from funcport.cli import Session
from funcport.config import parse_config
from funcport.verify import deflated_wealth_samples, martingale_flatness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--outer", type=int, default=10_000)
    ap.add_argument("--inner", type=int, default=32)
    ap.add_argument("--out", default="flatness.csv")
    args = ap.parse_args()

    s = Session(parse_config(Path(args.config).read_text()))
    samples = deflated_wealth_samples(s.functional(args.inner), s.ensemble(args.outer), s.workers)
    rep = martingale_flatness(samples, s.x0)
    d = rep.details
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "time", "mean", "stderr", "in_band"])
        for k, t in enumerate(s.grid().times):
            w.writerow([k, f"{t:.12g}", f"{d['node_mean'][k]:.12g}", f"{d['node_se'][k]:.12g}", int(d["node_pass"][k])])
    print(rep.line())
    print(f"grand mean {d['grand_mean']:.6f}; wrote {args.out}")


if __name__ == "__main__":
    main()
