"""Command line: ``python3 -m funcport {solve-multiplier,portfolio,verify,converge}``.

Every subcommand writes the effective configuration to ``<out>/config.json``
before doing any work, then its artifacts, then a summary on stdout.  The
exit status is 0 exactly when every executed check passed; errors go to
stderr with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path as FsPath

import numpy as np

from .config import ConfigError, ExperimentConfig, build_market, build_utility, parse_config
from .funcalc import coordinate, squared_minus_time
from .market import deflators, simulate_stocks
from .optimizer import (DeflatedWealthFunctional, optimal_policy, optimal_portfolio, oracle,
                        oracle_policy)
from .paths import TimeGrid, simulate_brownian
from .utility import solve_multiplier
from .verify import (TestReport, convergence_study, deflated_wealth_samples, drifted_samples,
                     likelihood_functional, likelihood_mean_test, martingale_flatness,
                     oracle_agreement, power_structure_tests, replication_test,
                     representation_suite, second_moment_test, terminal_errors)

WORKERS_ENV = "FUNCPORT_WORKERS"
SIG_DIGITS = 12


# -- report emission ------------------------------------------------------------------

def _round(x):
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{SIG_DIGITS}g}")
    return x


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.{SIG_DIGITS}g}"
    if x is None:
        return ""
    return str(x)


def _records(items) -> list[dict]:
    return [it.to_record() if isinstance(it, TestReport) else dict(it) for it in items]


def render_report(items, fmt: str = "json") -> str:
    """Deterministic text for a list of reports or flat row dicts."""
    records = _records(items)
    if fmt == "json":
        if not records:
            return "[]\n"
        return json.dumps(_round(records), sort_keys=True, indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if records and all(isinstance(it, TestReport) for it in items):
        header = ["name", "statistic", "target", "tolerance", "passed", "note"]
    else:
        header = list(records[0]) if records else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for rec in records:
        w.writerow([_cell(rec.get(h)) for h in header])
    return buf.getvalue()


def emit_report(items, fmt: str, path) -> FsPath:
    """Write ``items`` to ``path``; identical input gives identical bytes."""
    path = FsPath(path)
    path.write_text(render_report(items, fmt))
    return path


def summary_table(reports: list[TestReport]) -> str:
    if not reports:
        return "(no checks executed)"
    width = max(len(r.name) for r in reports)
    lines = [f"{'check':<{width}}  {'result':<6}  {'statistic':>13}  {'target':>13}  {'tolerance':>10}"]
    for r in reports:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.statistic:>13.6g}  "
                     f"{r.target:>13.6g}  {r.tolerance:>10.3g}")
    n_fail = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - n_fail}/{len(reports)} checks passed")
    return "\n".join(lines)


# -- orchestration ----------------------------------------------------------------------

def _workers(cfg: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is None:
        return cfg.estimator.workers
    try:
        n = int(env)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"expected a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigError(WORKERS_ENV, f"expected a positive integer, got {env!r}")
    return n


def fingerprint(cfg: ExperimentConfig, **extra) -> dict:
    est = cfg.estimator
    fp = {"seed": est.seed, "n_steps": est.n_steps, "n_outer": est.n_outer, "n_inner": est.n_inner,
          "bump": est.bump, "market": cfg.market.family, "utility": cfg.utility.family,
          "gamma": cfg.utility.gamma, "x0": cfg.utility.x0}
    fp.update(extra)
    return fp


class Session:
    """Built objects for one configuration; the multiplier is solved once on demand."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.market = build_market(cfg.market)
        self.utility = build_utility(cfg.utility)
        self.x0 = cfg.utility.x0
        self.workers = _workers(cfg)
        self._solve = None

    @property
    def solve(self):
        if self._solve is None:
            self._solve = solve_multiplier(self.utility, self.market, self.x0, self.cfg.estimator)
        return self._solve

    def functional(self, n_inner: int) -> DeflatedWealthFunctional:
        est = self.cfg.estimator
        F = DeflatedWealthFunctional(self.market, self.utility, self.solve.y, n_inner, est.seed,
                                     est.antithetic)
        F.solve = self.solve
        return F

    def grid(self, n_steps: int | None = None) -> TimeGrid:
        return TimeGrid(self.market.horizon, n_steps or self.cfg.estimator.n_steps)

    def ensemble(self, n_paths: int, n_steps: int | None = None, first: int = 0):
        return simulate_brownian(self.grid(n_steps), self.market.n, n_paths, self.cfg.estimator.seed,
                                 first=first)


def run_solve(cfg: ExperimentConfig) -> dict:
    s = Session(cfg)
    rec = s.solve.to_record()
    rec["utility"] = cfg.utility.family
    rec["gamma"] = cfg.utility.gamma
    return rec


def portfolio_rows(cfg: ExperimentConfig) -> list[dict]:
    """One row per trading node ``0..K-1`` along outer path ``run.path_id``."""
    s = Session(cfg)
    path = s.ensemble(1, first=cfg.run.path_id)[0]
    F = s.functional(cfg.estimator.n_inner)
    fn = oracle(s.market, s.utility, s.x0)
    n = s.market.n
    rows = []
    for k in range(path.grid.n_steps):
        res = optimal_portfolio(F, k, path, cfg.estimator.bump)
        row = {"node": k, "time": res.t, "X_star": res.x_star, "M": res.M}
        row.update({f"pi_{i + 1}": res.pi[i] for i in range(n)})
        row.update({f"grad_{i + 1}": res.grad[i] for i in range(n)})
        row.update({f"theta_{i + 1}": res.theta[i] for i in range(n)})
        row["H"] = res.H
        row["inner_stderr"] = res.inner_stderr
        if fn is not None:
            x_or, pi_or = fn(k, path)
            row["X_star_oracle"] = x_or
            row.update({f"pi_oracle_{i + 1}": pi_or[i] for i in range(n)})
            row["pi_rel_error"] = float(np.linalg.norm(res.pi - pi_or) / np.linalg.norm(pi_or))
        rows.append(row)
    return rows


def _oracle_tol(cfg: ExperimentConfig) -> float:
    if cfg.run.oracle_tol is not None:
        return cfg.run.oracle_tol
    return 0.02 if cfg.utility.family == "log" else 0.05


def portfolio_checks(cfg: ExperimentConfig, rows: list[dict]) -> list[TestReport]:
    if not rows or "pi_rel_error" not in rows[0] or cfg.run.oracle_tol is None:
        return []
    worst = max(r["pi_rel_error"] for r in rows)
    tol = cfg.run.oracle_tol
    return [TestReport("portfolio vs closed form", worst, 0.0, tol, worst <= tol, fingerprint(cfg),
                       {}, f"artifact tolerance: relative error <= {tol:g}")]


def verify_suite(cfg: ExperimentConfig) -> list[TestReport]:
    """The full battery for one configuration; ``run.sabotage`` swaps in designed failures."""
    s = Session(cfg)
    run, est = cfg.run, cfg.estimator
    fp = fingerprint(cfg, sabotage=run.sabotage)
    grid = s.grid()
    reports = [likelihood_mean_test(s.market, grid, est.budget_paths, est.seed, fp)]
    if not s.utility.has_closed_budget:
        reports.append(second_moment_test(s.utility, s.market, s.solve.y, est, fp))

    # flatness of M = H X*
    if run.sabotage in ("drifted-martingale", "both"):
        samples = drifted_samples(run.flatness_outer, grid.n_steps + 1, s.x0, seed=est.seed)
    else:
        samples = deflated_wealth_samples(s.functional(run.flatness_inner),
                                          s.ensemble(run.flatness_outer), s.workers)
    reports.append(martingale_flatness(samples, s.x0, fingerprint=fp))

    # replication of the optimal claim
    F_rep = s.functional(run.replication_inner)
    fn = oracle(s.market, s.utility, s.x0)
    if run.sabotage in ("double-policy", "both"):
        if fn is not None:
            policy = oracle_policy(s.market, s.utility, s.x0, scale=2.0)
        else:
            base = optimal_policy(F_rep, est.bump)
            policy = replace(base, rule=lambda k, p, x: 2.0 * base.rule(k, p, x), label="2 x numerical optimum")
    else:
        policy = optimal_policy(F_rep, est.bump)
    reports.append(replication_test(s.market, s.utility, policy, s.x0, s.solve.y,
                                    s.ensemble(run.replication_outer), fingerprint=fp,
                                    workers=s.workers))

    # closed-form agreement where one exists
    if fn is not None:
        F = s.functional(est.n_inner)
        ens = s.ensemble(max(20, run.replication_outer))
        if s.utility.family == "power":
            reports.extend(power_structure_tests(F, ens, 20, _oracle_tol(cfg), est.bump, est.seed, fp,
                                                 s.workers))
        else:
            reports.append(oracle_agreement(F, s.x0, ens, 20, _oracle_tol(cfg), est.bump, est.seed, fp,
                                            s.workers))

    # representation residuals across the refinement levels
    levels = sorted(run.refinement)
    fine = s.ensemble(run.representation_outer, levels[-1])
    functionals = {"Z": likelihood_functional(s.market), "M": s.functional(run.representation_inner)}
    if s.market.n == 1:
        functionals = {"W": coordinate(0), "W^2 - t": squared_minus_time(), **functionals}
    reports.extend(representation_suite(functionals, fine, levels, est.bump, fingerprint=fp,
                                        workers=s.workers))
    return reports


def converge_study(cfg: ExperimentConfig) -> tuple[list[dict], list[TestReport]]:
    """Sweeps over the bump ``h``, the inner count ``m`` and the grid ``K``."""
    s = Session(cfg)
    run, est = cfg.run, cfg.estimator
    fp = fingerprint(cfg)
    path = s.ensemble(1, first=run.path_id)[0]
    fn = oracle(s.market, s.utility, s.x0)
    F = s.functional(est.n_inner)

    def h_error(h):
        # error of the fraction pi*/X* at node 0 against the closed form (or the finest bump)
        res = optimal_portfolio(F, 0, path, h)
        if fn is not None:
            _, pi_or = fn(0, path)
            target = pi_or / fn(0, path)[0]
        else:
            fine = optimal_portfolio(F, 0, path, min(run.sweep_h) / 8)
            target = fine.pi / fine.x_star
        return float(np.linalg.norm(res.pi / res.x_star - target))

    def m_error(m):
        return float(optimal_portfolio(s.functional(m), 0, path, est.bump).inner_stderr)

    ks = sorted(run.sweep_k)
    fine = s.ensemble(run.replication_outer, ks[-1])
    F_rep = s.functional(run.replication_inner)
    policy = optimal_policy(F_rep, est.bump)

    def k_error(K):
        ens = fine.coarsen(ks[-1] // K)
        err = terminal_errors(s.market, s.utility, policy, s.x0, s.solve.y, ens, s.workers)
        return float(np.sqrt(np.mean(err ** 2)) / s.x0)

    hs = sorted(run.sweep_h, reverse=True)
    ms = sorted(run.sweep_m)
    experiments = {
        "bump h": (h_error, hs, (hs[0] / hs[1]) ** 2 if len(hs) > 1 else 4.0),
        "inner m": (m_error, ms, math.sqrt(ms[1] / ms[0]) if len(ms) > 1 else math.sqrt(10.0)),
        "grid K": (k_error, ks, math.sqrt(ks[1] / ks[0]) if len(ks) > 1 else math.sqrt(2.0)),
    }
    return convergence_study(experiments, fp)


# -- entry point ------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment file (defaults if omitted)")
    common.add_argument("--seed", type=int, metavar="N", help="master seed, overrides the config")
    common.add_argument("--out", metavar="DIR", help="output directory, overrides run.output_dir")
    common.add_argument("--format", choices=("csv", "json"), help="artifact format, overrides run.format")
    p = argparse.ArgumentParser(prog="funcport", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-multiplier", parents=[common], help="solve the budget multiplier")
    sub.add_parser("portfolio", parents=[common], help="numerical portfolio along one path")
    sub.add_parser("verify", parents=[common], help="run the verification battery")
    sub.add_parser("converge", parents=[common], help="bump, inner-count and grid sweeps")
    sub.add_parser("deflators", parents=[common], help="export B, theta, Z, H along one path")
    return p


def load_config(args) -> ExperimentConfig:
    text = "{}"
    if args.config:
        text = FsPath(args.config).read_text()
    cfg = parse_config(text)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        cfg = replace(cfg, estimator=cfg.estimator.replace(seed=args.seed))
    run_kw = {}
    if args.out is not None:
        run_kw["output_dir"] = args.out
    if args.format is not None:
        run_kw["format"] = args.format
    if run_kw:
        cfg = replace(cfg, run=replace(cfg.run, **run_kw))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        out = FsPath(cfg.run.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.dumps() + "\n")
        fmt = cfg.run.format
        reports: list[TestReport] = []
        if args.command == "solve-multiplier":
            rec = run_solve(cfg)
            (out / "multiplier.json").write_text(json.dumps(_round(rec), sort_keys=True, indent=2) + "\n")
            print(f"y = {rec['y']:.12g}  budget = {rec['budget']:.12g}  stderr = {rec['stderr']:.3g}  "
                  f"iterations = {rec['iterations']}")
        elif args.command == "portfolio":
            rows = portfolio_rows(cfg)
            dest = emit_report(rows, fmt, out / f"portfolio.{fmt}")
            reports = portfolio_checks(cfg, rows)
            print(f"wrote {len(rows)} nodes to {dest}")
        elif args.command == "verify":
            reports = verify_suite(cfg)
            emit_report(reports, fmt, out / f"report.{fmt}")
            print(summary_table(reports))
        elif args.command == "converge":
            rows, reports = converge_study(cfg)
            emit_report(rows, fmt, out / f"convergence.{fmt}")
            emit_report(reports, fmt, out / f"convergence_report.{fmt}")
            print(summary_table(reports))
        elif args.command == "deflators":
            s = Session(cfg)
            path = s.ensemble(1, first=cfg.run.path_id)[0]
            deflators(s.market, path).to_csv(out / "deflators.csv", cfg.run.path_id)
            np.savetxt(out / "stocks.csv", simulate_stocks(s.market, path), delimiter=",", fmt="%.12g")
            print(f"wrote {out / 'deflators.csv'}")
        if reports and args.command == "portfolio":
            print(summary_table(reports))
        return 0 if all(r.passed for r in reports) else 1
    except (ConfigError, ValueError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"funcport: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
