"""Statistical verification harness.

Every check returns a :class:`TestReport`.  Monte Carlo checks use
3-standard-error bands; refinement checks require consecutive error ratios
inside ``[0.6, 1.6]`` times the theoretical ratio.  Both are artifact
tolerances, recorded in each report's ``note``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .funcalc import NonAnticipativeFunctional, parallel_map, representation_residual
from .market import (MarketModel, PortfolioPolicy, check_admissible, log_deflators,
                     log_state_price, wealth_under_policy)
from .optimizer import (DeflatedWealthFunctional, merton_direction, optimal_portfolio, oracle,
                        power_integrand)
from .paths import Path, PathEnsemble, TimeGrid, simulate_brownian
from .utility import UtilitySpec, budget_second_moment

SIGMAS = 3.0
RATIO_BAND = (0.6, 1.6)
MC_NOTE = "artifact tolerance: 3 standard errors"
RATIO_NOTE = "artifact tolerance: consecutive ratios in [0.6, 1.6] x theory"


@dataclass
class TestReport:
    name: str
    statistic: float
    target: float
    tolerance: float
    passed: bool
    fingerprint: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    note: str = ""

    __test__ = False  # not a pytest class

    def to_record(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "target": self.target,
                "tolerance": self.tolerance, "passed": bool(self.passed),
                "fingerprint": self.fingerprint, "details": _plain(self.details), "note": self.note}

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: statistic={self.statistic:.6g} target={self.target:.6g} tol={self.tolerance:.3g}"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


# -- martingale flatness --------------------------------------------------------------

def martingale_flatness(samples: np.ndarray, target: float, name: str = "martingale flatness",
                        fingerprint: dict | None = None, atol: float | None = None,
                        min_fraction: float = 0.95) -> TestReport:
    """Per-node mean within ``3 se + atol`` of ``target`` at no fewer than ``min_fraction`` of nodes.

    ``samples`` has shape ``(N, nodes)``.  ``atol`` (default ``1e-9 max(1, |target|)``)
    keeps zero-variance processes from failing on rounding.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need samples of shape (N >= 2, nodes)")
    if atol is None:
        atol = 1e-9 * max(1.0, abs(target))
    means = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    ok = np.abs(means - target) <= SIGMAS * se + atol
    frac = float(np.mean(ok))
    return TestReport(
        name, frac, 1.0, 1.0 - min_fraction, frac >= min_fraction, fingerprint or {},
        {"node_mean": means, "node_se": se, "node_pass": ok, "grand_mean": float(means.mean()),
         "failed_nodes": np.flatnonzero(~ok), "target_value": target},
        MC_NOTE + f"; pass iff >= {min_fraction:.0%} of nodes in band")


def drifted_samples(n_paths: int, n_nodes: int, target: float, drift_se: float = 10.0,
                    seed: int = 0) -> np.ndarray:
    """I.i.d. ``N(target, 1)`` columns plus a linear drift reaching ``drift_se`` standard errors at the end."""
    z = simulate_brownian(TimeGrid(1.0, 1), n_nodes, n_paths, seed, tag=0xD41F).values[:, 1]
    drift = np.linspace(0.0, drift_se / math.sqrt(n_paths), n_nodes)
    return target + z + drift


def deflated_wealth_samples(F, ensemble: PathEnsemble, workers: int = 1) -> np.ndarray:
    """``M(t_k, w_j)`` for every member and node, shape ``(N, K + 1)``."""
    K = ensemble.grid.n_steps
    node_values = getattr(F, "node_values", None)
    if node_values is None:
        node_values = lambda p: [F(k, p) for k in range(K + 1)]  # noqa: E731
    rows = parallel_map(node_values, list(ensemble), workers)
    return np.array(rows)


# -- replication ----------------------------------------------------------------------

def replication_test(market: MarketModel, utility: UtilitySpec, policy: PortfolioPolicy, x0: float,
                     y: float, ensemble: PathEnsemble, tol: float = 0.05, name: str = "replication",
                     fingerprint: dict | None = None, workers: int = 1) -> TestReport:
    """Relative RMSE of ``X^pi(T)`` against the optimal claim ``I(Y H(T))``."""
    grid = ensemble.grid

    def one(path: Path):
        run = wealth_under_policy(market, policy, x0, path)
        log_ht = log_state_price(market, grid, path.values[None])[0]
        claim = float(utility.inverse_marginal(y * math.exp(log_ht)))
        return run.wealth[-1], claim, check_admissible(run.wealth)[0]

    out = parallel_map(one, list(ensemble), workers)
    xt = np.array([o[0] for o in out])
    claim = np.array([o[1] for o in out])
    admissible = np.array([o[2] for o in out])
    rmse = float(np.sqrt(np.mean((xt - claim) ** 2)) / x0)
    return TestReport(
        name, rmse, 0.0, tol, rmse <= tol, fingerprint or {},
        {"admissible_rate": float(admissible.mean()), "mean_terminal": float(xt.mean()),
         "mean_claim": float(claim.mean()), "policy": policy.label, "n_steps": grid.n_steps},
        f"artifact tolerance: relative RMSE <= {tol:g}")


def terminal_errors(market, utility, policy, x0, y, ensemble, workers=1) -> np.ndarray:
    grid = ensemble.grid

    def one(path):
        xt = wealth_under_policy(market, policy, x0, path).wealth[-1]
        log_ht = log_state_price(market, grid, path.values[None])[0]
        return xt - float(utility.inverse_marginal(y * math.exp(log_ht)))

    return np.array(parallel_map(one, list(ensemble), workers))


# -- refinement / convergence -----------------------------------------------------------

def refinement_report(name: str, params: Sequence[float], errors: Sequence[float], theory_ratio: float,
                      band: tuple[float, float] = RATIO_BAND, exact_tol: float = 1e-12,
                      require_decrease: bool = True, fingerprint: dict | None = None) -> TestReport:
    """Check ``errors[i] / errors[i+1]`` against ``theory_ratio`` within ``band``.

    If every error is below ``exact_tol`` the scheme is exact and the check passes.
    """
    errors = np.asarray(errors, dtype=np.float64)
    lo, hi = band[0] * theory_ratio, band[1] * theory_ratio
    if np.all(np.abs(errors) <= exact_tol):
        return TestReport(name, 0.0, theory_ratio, exact_tol, True, fingerprint or {},
                          {"params": list(params), "errors": errors, "ratios": [], "exact": True},
                          "exact at every level")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = errors[:-1] / errors[1:]
    ok = bool(np.all((ratios >= lo) & (ratios <= hi)))
    if require_decrease:
        ok = ok and bool(np.all(ratios > 1.0))
    worst = float(ratios[np.argmax(np.abs(np.log(ratios / theory_ratio)))]) if ratios.size else float("nan")
    return TestReport(name, worst, theory_ratio, band[1] - band[0], ok, fingerprint or {},
                      {"params": list(params), "errors": errors, "ratios": ratios, "band": [lo, hi]},
                      RATIO_NOTE)


def convergence_study(experiments: Mapping[str, tuple[Callable[[float], float], Sequence[float], float]],
                      fingerprint: dict | None = None) -> tuple[list[dict], list[TestReport]]:
    """Run ``fn(value)`` over each sweep and summarise the error ratios.

    ``experiments`` maps a name to ``(fn, values, theoretical ratio between consecutive values)``.
    Returns the raw ``(experiment, parameter, error)`` rows and one report per experiment.
    """
    rows, reports = [], []
    for name, (fn, values, theory) in experiments.items():
        if not values:
            raise ValueError(f"empty sweep for {name}")
        errs = []
        for v in values:
            e = float(fn(v))
            errs.append(e)
            rows.append({"experiment": name, "parameter": v, "error": e})
        reports.append(refinement_report(name, values, errs, theory, fingerprint=fingerprint))
    return rows, reports


def representation_suite(functionals: Mapping[str, Callable], ensemble: PathEnsemble,
                         levels: Sequence[int], h: float | None = None, bound: float | None = None,
                         fingerprint: dict | None = None, workers: int = 1) -> list[TestReport]:
    """Representation residual RMS per functional on coarsenings of ``ensemble`` to each ``K`` in ``levels``.

    Passes when the residual is exact everywhere, or when it decreases with
    ratios near ``sqrt(2)`` per halving of the step (and stays under ``bound`` if given).
    """
    K_fine = ensemble.grid.n_steps
    reports = []
    for name, Y in functionals.items():
        rms = []
        for K in levels:
            if K_fine % K:
                raise ValueError(f"level {K} does not divide the fine grid {K_fine}")
            coarse = ensemble.coarsen(K_fine // K)
            rms.append(representation_residual(Y, coarse, h, workers).rms)
        ratio = math.sqrt(levels[1] / levels[0]) if len(levels) > 1 else math.sqrt(2.0)
        rep = refinement_report(f"representation residual: {name}", levels, rms, ratio,
                                fingerprint=fingerprint)
        if bound is not None and rms[-1] > bound:
            rep.passed = False
        rep.details["rms"] = rms
        reports.append(rep)
    return reports


# -- probabilistic sanity ---------------------------------------------------------------

def likelihood_functional(market: MarketModel) -> NonAnticipativeFunctional:
    """``Z(t_k)`` recomputed from the path."""

    def rule(k, w):
        _, log_z, _ = log_deflators(market, w.grid, w.values[None])
        return float(np.exp(log_z[0, k]))

    return NonAnticipativeFunctional(rule, "Z")


def likelihood_mean_test(market: MarketModel, grid: TimeGrid, n_paths: int, seed: int,
                         fingerprint: dict | None = None) -> TestReport:
    """``E[Z(T)] = 1`` within 3 standard errors."""
    zs = []
    for a in range(0, n_paths, 20_000):
        ens = simulate_brownian(grid, market.n, min(20_000, n_paths - a), seed, tag=0x2A7, first=a)
        _, log_z, _ = log_deflators(market, grid, ens.values)
        zs.append(np.exp(log_z[:, -1]))
    m, se = mean_se(np.concatenate(zs))
    return TestReport("E[Z(T)] = 1", m, 1.0, SIGMAS * se, abs(m - 1.0) <= SIGMAS * se,
                      fingerprint or {}, {"se": se, "n_paths": n_paths}, MC_NOTE)


def second_moment_test(utility: UtilitySpec, market: MarketModel, y: float, config,
                       fingerprint: dict | None = None) -> TestReport:
    """Sampled ``E[(H(T) I(y H(T)))^2]`` agrees between ``N/2`` and ``N`` shared paths."""
    n = config.budget_paths
    m_half, se_half = budget_second_moment(utility, market, y, config, n // 2)
    m_full, se_full = budget_second_moment(utility, market, y, config, n)
    tol = SIGMAS * math.hypot(se_half, se_full)
    ok = bool(np.isfinite(m_full)) and abs(m_full - m_half) <= tol
    return TestReport("second moment stable under doubling N", m_full, m_half, tol, ok,
                      fingerprint or {}, {"n": n, "se_half": se_half, "se_full": se_full}, MC_NOTE)


# -- oracle agreement --------------------------------------------------------------------

def oracle_agreement(F: DeflatedWealthFunctional, x0: float, ensemble: PathEnsemble, n_points: int,
                     tol: float, h: float, seed: int = 0, fingerprint: dict | None = None,
                     workers: int = 1) -> TestReport:
    """Relative error of the numerical portfolio against the closed form at random ``(t_k, w)``."""
    fn = oracle(F.market, F.utility, x0)
    if fn is None:
        raise ValueError("no closed-form oracle for this configuration")
    def one(pk):
        j, k = pk
        path = ensemble[j]
        res = optimal_portfolio(F, k, path, h)
        _, pi_exact = fn(k, path)
        err = float(np.linalg.norm(res.pi - pi_exact) / np.linalg.norm(pi_exact))
        return err, float(np.max(np.abs(res.grad)))

    out = parallel_map(one, _random_points(ensemble, n_points, seed), workers)
    errs = np.array([o[0] for o in out])
    worst = float(errs.max())
    return TestReport(f"oracle agreement ({F.utility.family})", worst, 0.0, tol, worst <= tol,
                      fingerprint or {},
                      {"points": _random_points(ensemble, n_points, seed), "rel_errors": errs,
                       "max_abs_grad": max(o[1] for o in out)},
                      f"artifact tolerance: relative error <= {tol:g}")


def _random_points(ensemble: PathEnsemble, n_points: int, seed: int) -> list[tuple[int, int]]:
    rng = np.random.default_rng([seed, 0x0AC1E])
    K = ensemble.grid.n_steps
    return [(int(rng.integers(len(ensemble))), int(rng.integers(K))) for _ in range(n_points)]


def power_structure_tests(F: DeflatedWealthFunctional, ensemble: PathEnsemble, n_points: int,
                          tol: float, h: float, seed: int = 0, fingerprint: dict | None = None,
                          workers: int = 1) -> list[TestReport]:
    """Power utility, deterministic coefficients.

    Two checks at random ``(t_k, w)``: the fraction ``pi*/X*`` against the Merton
    fraction (relative error ``<= tol``), and the numerical ``grad M`` against
    ``M (-gamma/(gamma-1)) theta`` within 3 combined standard errors.
    """
    if F.utility.family != "power" or not F.market.deterministic:
        raise ValueError("needs power utility and deterministic coefficients")
    g = F.utility.gamma
    c = -g / (g - 1.0)

    def one(pk):
        j, k = pk
        path = ensemble[j]
        res = optimal_portfolio(F, k, path, h)
        target = merton_direction(F.market, k, path) / (1.0 - g)
        frac_err = float(np.linalg.norm(res.pi / res.x_star - target) / np.linalg.norm(target))
        closed = power_integrand(F.market, g, k, path, res.M)
        se = np.hypot(res.grad_stderr, np.abs(c * res.theta) * res.inner_stderr)
        z = np.abs(res.grad - closed) / np.maximum(se, 1e-300)
        return frac_err, float(z.max()), float(np.max(np.abs(res.grad - closed)))

    picks = _random_points(ensemble, n_points, seed)
    out = parallel_map(one, picks, workers)
    frac = np.array([o[0] for o in out])
    zs = np.array([o[1] for o in out])
    fp = fingerprint or {}
    return [
        TestReport("portfolio fraction (power)", float(frac.max()), 0.0, tol, bool(frac.max() <= tol), fp,
                   {"points": picks, "rel_errors": frac}, f"artifact tolerance: relative error <= {tol:g}"),
        TestReport("integrand closed form (power)", float(zs.max()), 0.0, SIGMAS, bool(zs.max() <= SIGMAS), fp,
                   {"points": picks, "z_scores": zs, "abs_diff": [o[2] for o in out]}, MC_NOTE),
    ]
