"""Utility families, the inverse marginal utility and the budget multiplier."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import EstimatorConfig
from .errors import NumericFailure, UnattainableBudgetError
from .market import MarketModel, terminal_log_state_price
from .paths import TimeGrid, simulate_brownian

BUDGET_TAG = 0xB0D6
_BUDGET_CHUNK = 20_000


@dataclass(frozen=True)
class UtilitySpec:
    family: str = "log"
    gamma: float | None = None

    def __post_init__(self):
        if self.family == "log":
            if self.gamma is not None:
                raise ValueError("log utility takes no gamma")
        elif self.family == "power":
            if self.gamma is None or not (self.gamma < 1 and self.gamma != 0):
                raise ValueError("power utility needs gamma < 1 and gamma != 0")
        else:
            raise ValueError(f"unknown utility family {self.family!r}")

    @property
    def has_closed_budget(self) -> bool:
        return self.family == "log"

    def U(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.family == "log":
            return np.log(x)
        return x ** self.gamma / self.gamma

    def marginal(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.family == "log":
            return 1.0 / x
        return x ** (self.gamma - 1.0)

    def inverse_marginal(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.family == "log":
            return 1.0 / y
        return y ** (1.0 / (self.gamma - 1.0))

    def deflated_claim(self, y: float, log_h: np.ndarray) -> np.ndarray:
        """``H I(y H)`` evaluated from ``log H``.

        For log utility this is identically ``1/y``; for power utility it is
        ``y^(1/(gamma-1)) H^(gamma/(gamma-1))``, formed in log space.
        """
        log_h = np.asarray(log_h, dtype=np.float64)
        if self.family == "log":
            return np.full(log_h.shape, 1.0 / y)
        g = self.gamma
        return np.exp(math.log(y) / (g - 1.0) + g / (g - 1.0) * log_h)


def inverse_marginal(spec: UtilitySpec, y: float) -> float:
    if not y > 0:
        raise ValueError(f"I(y) needs y > 0, got {y}")
    return float(spec.inverse_marginal(y))


# -- budget ---------------------------------------------------------------------

_budget_cache: dict = {}


def budget_log_state_prices(market: MarketModel, config: EstimatorConfig) -> np.ndarray:
    """``log H(T)`` on the shared budget ensemble (stream tag ``BUDGET_TAG``)."""
    key = (id(market), config.n_steps, config.budget_paths, config.seed)
    hit = _budget_cache.get(key)
    if hit is not None and hit[0] is market:
        return hit[1]
    grid = TimeGrid(market.horizon, config.n_steps)
    out = np.empty(config.budget_paths)
    for a in range(0, config.budget_paths, _BUDGET_CHUNK):
        b = min(config.budget_paths, a + _BUDGET_CHUNK)
        ens = simulate_brownian(grid, market.n, b - a, config.seed, tag=BUDGET_TAG, first=a)
        out[a:b] = terminal_log_state_price(market, grid, ens.values)
    out.setflags(write=False)
    if len(_budget_cache) > 8:
        _budget_cache.clear()
    _budget_cache[key] = (market, out)
    return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(x)), se


def budget_expectation(spec: UtilitySpec, market: MarketModel, y: float,
                       config: EstimatorConfig) -> tuple[float, float]:
    """Monte Carlo ``E[H(T) I(y H(T))]`` and its standard error, on the shared paths.

    Log utility needs no paths: the summand is identically ``1/y``.
    """
    if not y > 0:
        raise ValueError(f"budget needs y > 0, got {y}")
    if spec.has_closed_budget:
        return 1.0 / y, 0.0
    vals = spec.deflated_claim(y, budget_log_state_prices(market, config))
    if not np.all(np.isfinite(vals)):
        raise NumericFailure(f"non-finite budget summand at y={y}")
    return _mean_se(vals)


def budget_second_moment(spec: UtilitySpec, market: MarketModel, y: float,
                         config: EstimatorConfig, n: int | None = None) -> tuple[float, float]:
    """Sample ``E[(H(T) I(y H(T)))^2]`` over the first ``n`` shared paths."""
    log_h = budget_log_state_prices(market, config)
    vals = spec.deflated_claim(y, log_h[:n]) ** 2
    return _mean_se(vals)


@dataclass
class MultiplierSolve:
    y: float
    budget: float
    stderr: float
    iterations: int
    bracket: tuple[float, float]
    x0: float
    rel_tol: float
    history: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {"y": self.y, "budget": self.budget, "stderr": self.stderr, "x0": self.x0,
                "iterations": self.iterations, "bracket": list(self.bracket),
                "rel_tol": self.rel_tol, "history": [list(h) for h in self.history]}


MAX_DOUBLINGS = 120


def solve_multiplier(spec: UtilitySpec, market: MarketModel, x0: float,
                     config: EstimatorConfig) -> MultiplierSolve:
    """Bisection on ``log y`` for ``E[H(T) I(y H(T))] = x0`` over a fixed path set."""
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    tol = config.budget_rel_tol
    if tol is None:
        tol = 1e-6 if spec.has_closed_budget else 1e-3
    history = []

    def budget(y):
        b, se = budget_expectation(spec, market, y, config)
        history.append((y, b))
        return b, se

    lo, hi = 0.5, 2.0
    b_lo, _ = budget(lo)
    n = 0
    while b_lo < x0:
        if n >= MAX_DOUBLINGS:
            raise UnattainableBudgetError(f"budget stays below x0={x0} for y down to {lo:.3g}")
        lo, n = lo / 2, n + 1
        b_lo, _ = budget(lo)
    b_hi, _ = budget(hi)
    n = 0
    while b_hi > x0:
        if n >= MAX_DOUBLINGS:
            raise UnattainableBudgetError(f"budget stays above x0={x0} for y up to {hi:.3g}")
        hi, n = hi * 2, n + 1
        b_hi, _ = budget(hi)
    bracket = (lo, hi)

    it = 0
    while True:
        it += 1
        mid = math.sqrt(lo * hi)
        b, se = budget(mid)
        if abs(b - x0) <= tol * x0:
            break
        if b > x0:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 4e-16:
            raise UnattainableBudgetError(f"bisection stalled at y={mid!r}, budget {b!r} vs x0 {x0!r}")
    return MultiplierSolve(mid, b, se, it, bracket, x0, tol, history)


# -- scoring ----------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveEstimate:
    mean: float
    stderr: float
    degenerate: bool


def realized_objective(spec: UtilitySpec, samples, floor: float = 1e-12) -> ObjectiveEstimate:
    """Sample mean of ``U`` over terminal wealth, clipped at ``floor``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("need at least one sample")
    clipped = np.maximum(x, floor)
    mean, se = _mean_se(spec.U(clipped))
    return ObjectiveEstimate(mean, se if x.size > 1 else 0.0, bool(np.all(x <= floor)))
