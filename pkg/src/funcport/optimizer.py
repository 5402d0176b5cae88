"""Optimal wealth and portfolio through the vertical derivative of deflated wealth.

The deflated optimal wealth ``M(t) = H(t) X*(t) = E_t[H(T) I(Y H(T))]`` is
estimated at ``(t_k, w)`` by nested Monte Carlo: ``m`` extensions of the
stopped path are drawn from stream ``(seed, INNER_TAG, path_id)`` at a slice fixed by ``k``.
The stream ignores the path's values, so bumped copies of ``w`` are revalued on
exactly the same extensions (common random numbers), and the vertical
derivative of ``M`` follows from a central difference.  The portfolio is
then the solution of

    sigma(t)' pi*(t) = grad M(t) / H(t) + theta(t) X*(t).
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .config import EstimatorConfig
from .errors import NumericFailure, SingularVolatilityError
from .funcalc import central_differences
from .market import MarketModel, PortfolioPolicy, log_deflators, log_state_price
from .paths import Path, TimeGrid, extend_levels, gaussian_draws
from .utility import UtilitySpec, solve_multiplier

INNER_TAG = 0x1AAE
_NO_ID = 0xFFFFFFFF


class DeflatedWealthFunctional:
    """``M(t_k, w)`` by averaging ``H(T) I(Y H(T))`` over inner extensions of ``w`` stopped at ``t_k``.

    Paths without a ``path_id`` share one fixed inner stream.
    """

    def __init__(self, market: MarketModel, utility: UtilitySpec, y: float, n_inner: int,
                 seed: int = 0, antithetic: bool = True, label: str = "M"):
        if not y > 0:
            raise ValueError("multiplier must be positive")
        if antithetic and n_inner % 2:
            raise ValueError("antithetic sampling needs an even number of inner paths")
        self.market = market
        self.utility = utility
        self.y = float(y)
        self.n_inner = int(n_inner)
        self.seed = int(seed)
        self.antithetic = antithetic
        self.label = label
        self._local = threading.local()

    @classmethod
    def solved(cls, market: MarketModel, utility: UtilitySpec, x0: float, config: EstimatorConfig,
               n_inner: int | None = None):
        """Solve the multiplier once and freeze it into the functional."""
        sol = solve_multiplier(utility, market, x0, config)
        F = cls(market, utility, sol.y, n_inner or config.n_inner, config.seed, config.antithetic)
        F.solve = sol
        return F

    def with_inner(self, n_inner: int) -> "DeflatedWealthFunctional":
        return DeflatedWealthFunctional(self.market, self.utility, self.y, n_inner,
                                        self.seed, self.antithetic, self.label)

    # -- inner randomness ---------------------------------------------------

    def _rows(self) -> int:
        return self.n_inner // 2 if self.antithetic else self.n_inner

    def _slot(self, grid: TimeGrid, k: int) -> int:
        return -(-self._rows() * (grid.n_steps - k) * self.market.n // 4) * 4

    def _offsets(self, grid: TimeGrid) -> np.ndarray:
        """Start of node ``k``'s slice in the path's inner stream, for ``k = 0..K``."""
        table = self.__dict__.setdefault("_offset_tables", {})
        hit = table.get(grid)
        if hit is None:
            slots = [self._slot(grid, k) for k in range(grid.n_steps)]
            hit = table[grid] = np.concatenate([[0], np.cumsum(slots)]).astype(np.int64)
        return hit

    def _shape_block(self, z: np.ndarray, grid: TimeGrid, k: int) -> np.ndarray:
        steps, n = grid.n_steps - k, self.market.n
        z = z[:self._rows() * steps * n].reshape(self._rows(), steps, n) * np.sqrt(grid.dt)
        block = np.concatenate([z, -z]) if self.antithetic else z
        block.setflags(write=False)
        return block

    def inner_block(self, path_id: int | None, k: int, grid: TimeGrid) -> np.ndarray:
        """Increments ``(m, K - k, n)`` for extensions of path ``path_id`` from node ``k``.

        Stream ``(seed, INNER_TAG, path_id)``; node ``k`` owns a fixed slice of it
        and inner path ``j`` a fixed row of that slice.
        """
        cache = getattr(self._local, "cache", None)
        if cache is None:
            cache = self._local.cache = OrderedDict()
        pid = _NO_ID if path_id is None else int(path_id)
        key = (pid, k, grid)
        block = cache.get(key)
        if block is not None:
            cache.move_to_end(key)
            return block
        z = gaussian_draws(self.seed, (INNER_TAG, pid), self._slot(grid, k), int(self._offsets(grid)[k]))
        block = self._shape_block(z, grid, k)
        cache[key] = block
        if len(cache) > 4:
            cache.popitem(last=False)
        return block

    def all_node_blocks(self, path_id: int | None, grid: TimeGrid) -> list[np.ndarray]:
        """``inner_block`` for every node ``0..K-1`` from a single draw."""
        pid = _NO_ID if path_id is None else int(path_id)
        offs = self._offsets(grid)
        z = gaussian_draws(self.seed, (INNER_TAG, pid), int(offs[-1]))
        return [self._shape_block(z[offs[k]:offs[k + 1]], grid, k) for k in range(grid.n_steps)]

    # -- evaluation ----------------------------------------------------------

    def log_state_price_at(self, k: int, path: Path) -> float:
        return float(log_state_price(self.market, path.grid, path.values[None], 0, k)[0])

    def samples(self, k: int, path: Path) -> np.ndarray:
        """Per-extension values ``H(T) I(Y H(T))``; a single exact value at ``k = K``."""
        grid = path.grid
        k = grid.check_node(k)
        log_hk = self.log_state_price_at(k, path)
        if k == grid.n_steps:
            return self.utility.deflated_claim(self.y, np.array([log_hk]))
        block = self.inner_block(path.path_id, k, grid)
        if self.market.deterministic:
            tab = self.market.table(grid)
            th = tab["theta"][k:grid.n_steps]
            drift = np.sum(tab["r"][k:grid.n_steps] + 0.5 * np.sum(th ** 2, axis=1)) * grid.dt
            log_ht = log_hk - drift - np.einsum("mkn,kn->m", block, th)
        else:
            levels = extend_levels(path.values[:k + 1], block)
            log_ht = log_state_price(self.market, grid, levels, k, None, log_hk)
        vals = self.utility.deflated_claim(self.y, log_ht)
        bad = ~np.isfinite(vals)
        if bad.any():
            raise NumericFailure(f"non-finite H(T) I(Y H(T)) on extension {int(np.argmax(bad))} "
                                 f"at node {k}")
        return vals

    def node_values(self, path: Path) -> np.ndarray:
        """``M(t_k, w)`` for ``k = 0..K`` in one pass; equals ``[F(k, path) for k]`` up to rounding."""
        grid = path.grid
        K = grid.n_steps
        if not self.market.deterministic:
            return np.array([self(k, path) for k in range(K + 1)])
        log_b, log_z, _ = log_deflators(self.market, grid, path.values[None])
        log_h = log_z[0] - log_b[0]
        tab = self.market.table(grid)
        th = tab["theta"][:K]
        # remaining drift of log H from node k to T
        step_drift = (tab["r"][:K] + 0.5 * np.sum(th ** 2, axis=1)) * grid.dt
        tail = np.cumsum(step_drift[::-1])[::-1]
        out = np.empty(K + 1)
        if self.utility.family == "log":
            out[:] = 1.0 / self.y
            return out
        for k, block in enumerate(self.all_node_blocks(path.path_id, grid)):
            log_ht = log_h[k] - tail[k] - np.einsum("mkn,kn->m", block, th[k:])
            vals = self.utility.deflated_claim(self.y, log_ht)
            if not np.all(np.isfinite(vals)):
                raise NumericFailure(f"non-finite H(T) I(Y H(T)) at node {k}")
            out[k] = vals.mean()
        out[K] = self.utility.deflated_claim(self.y, log_h[K:])[0]
        return out

    def pair_means(self, values: np.ndarray) -> np.ndarray:
        """Independent replicates: antithetic pairs are averaged first."""
        values = np.asarray(values)
        if self.antithetic and values.shape[-1] > 1:
            half = values.shape[-1] // 2
            return 0.5 * (values[..., :half] + values[..., half:])
        return values

    def stderr(self, values: np.ndarray) -> np.ndarray:
        reps = self.pair_means(values)
        if reps.shape[-1] < 2:
            return np.zeros(reps.shape[:-1])
        return np.std(reps, axis=-1, ddof=1) / np.sqrt(reps.shape[-1])

    def evaluate(self, k: int, path: Path) -> tuple[float, float]:
        s = self.samples(k, path)
        return float(np.mean(s)), float(self.stderr(s))

    def __call__(self, k: int, path: Path) -> float:
        return float(np.mean(self.samples(k, path)))


def deflated_wealth(F: DeflatedWealthFunctional, k: int, path: Path) -> float:
    return F(k, path)


def optimal_wealth(F: DeflatedWealthFunctional, k: int, path: Path) -> float:
    """``X*(t_k) = M(t_k) / H(t_k)``."""
    log_h = F.log_state_price_at(k, path)
    return F(k, path) / np.exp(log_h)


@dataclass(frozen=True)
class PortfolioResult:
    node: int
    t: float
    pi: np.ndarray
    x_star: float
    M: float
    grad: np.ndarray
    theta: np.ndarray
    H: float
    inner_stderr: float
    grad_stderr: np.ndarray
    bump: float
    cond: float

    def reconstruction_gap(self, sigma: np.ndarray) -> float:
        """Max deviation of ``pi' sigma`` from ``grad/H + X* theta``."""
        lhs = self.pi @ sigma
        rhs = self.grad / self.H + self.x_star * self.theta
        return float(np.max(np.abs(lhs - rhs)))


def assemble_portfolio(sigma: np.ndarray, theta: np.ndarray, H: float, M: float, grad: np.ndarray) -> np.ndarray:
    """Solve ``sigma' pi = grad / H + theta M / H``."""
    return np.linalg.solve(np.asarray(sigma).T, (np.asarray(grad) + np.asarray(theta) * M) / H)


def optimal_portfolio(F: DeflatedWealthFunctional, k: int, path: Path, h: float | None = None) -> PortfolioResult:
    grid = path.grid
    k = grid.check_node(k)
    if h is None:
        h = 0.05 * np.sqrt(grid.horizon)
    _, _, sigma, theta = F.market.coefficients_at(k, path)
    cond = float(np.linalg.cond(sigma))
    if not cond <= F.market.cond_cap:
        raise SingularVolatilityError(f"volatility condition number {cond:.3g} at node {k}", cond)
    base = F.samples(k, path)
    M = float(np.mean(base))
    diffs = central_differences(F.samples, k, path, h, label=F.label)  # (n, m)
    grad = diffs.mean(axis=1)
    H = float(np.exp(F.log_state_price_at(k, path)))
    pi = assemble_portfolio(sigma, theta, H, M, grad)
    if not np.all(np.isfinite(pi)):
        raise NumericFailure(f"non-finite portfolio at node {k}")
    return PortfolioResult(k, float(grid.times[k]), pi, M / H, M, grad, np.array(theta), H,
                           float(F.stderr(base)), np.atleast_1d(F.stderr(diffs)), h, cond)


def optimal_policy(F: DeflatedWealthFunctional, h: float | None = None) -> PortfolioPolicy:
    """The numerical optimum as a wealth-independent policy."""
    return PortfolioPolicy(lambda k, path, x: optimal_portfolio(F, k, path, h).pi, "numerical optimum")


# -- closed-form oracles ------------------------------------------------------------

def _log_h(market: MarketModel, k: int, path: Path) -> float:
    return float(log_state_price(market, path.grid, path.values[None], 0, k)[0])


def merton_direction(market: MarketModel, k: int, path: Path) -> np.ndarray:
    """``(sigma sigma')^{-1} (alpha - r 1)``."""
    r, a, s, _ = market.coefficients_at(k, path)
    return np.linalg.solve(s @ s.T, a - r)


def closed_form_log(market: MarketModel, x0: float, k: int, path: Path) -> tuple[float, np.ndarray]:
    """Log utility: ``X* = x0 / H`` and ``pi* = (sigma sigma')^{-1}(alpha - r 1) x0 / H``."""
    H = np.exp(_log_h(market, k, path))
    return x0 / H, merton_direction(market, k, path) * x0 / H


def _power_exponent(market: MarketModel, grid: TimeGrid, gamma: float, k: int) -> float:
    p = gamma / (gamma - 1.0)
    tab = market.table(grid)
    th2 = np.sum(tab["theta"][k:grid.n_steps] ** 2, axis=1)
    return float(np.sum(-p * tab["r"][k:grid.n_steps] + 0.5 * (p * p - p) * th2) * grid.dt)


def closed_form_power(market: MarketModel, gamma: float, x0: float, k: int, path: Path) -> tuple[float, np.ndarray]:
    """Power utility with deterministic coefficients.

    ``X*(t) = (x0 / H(t)) E_t[H(T)^p] / E[H(T)^p]`` with ``p = gamma/(gamma-1)``,
    the lognormal moments taken in closed form on the grid; ``pi*`` is the
    Merton proportion of ``X*``.
    """
    if not market.deterministic:
        raise ValueError("closed-form power oracle needs deterministic coefficients")
    if not (gamma < 1 and gamma != 0):
        raise ValueError("gamma must satisfy gamma < 1, gamma != 0")
    grid = path.grid
    p = gamma / (gamma - 1.0)
    log_h = _log_h(market, k, path)
    growth = (p - 1.0) * log_h + _power_exponent(market, grid, gamma, k) - _power_exponent(market, grid, gamma, 0)
    x_star = float(x0 * np.exp(growth))
    return x_star, merton_direction(market, k, path) * x_star / (1.0 - gamma)


def power_integrand(market: MarketModel, gamma: float, k: int, path: Path, M: float) -> np.ndarray:
    """``grad[H X*] = M (-gamma/(gamma-1)) theta`` for deterministic coefficients."""
    if not market.deterministic:
        raise ValueError("closed-form power integrand needs deterministic coefficients")
    theta = market.coefficients_at(k, path)[3]
    return M * (-gamma / (gamma - 1.0)) * np.asarray(theta)


def oracle(market: MarketModel, utility: UtilitySpec, x0: float):
    """Closed-form ``(k, path) -> (X*, pi*)`` when one exists, else ``None``."""
    if utility.family == "log":
        return lambda k, path: closed_form_log(market, x0, k, path)
    if market.deterministic:
        return lambda k, path: closed_form_power(market, utility.gamma, x0, k, path)
    return None


def oracle_policy(market: MarketModel, utility: UtilitySpec, x0: float, scale: float = 1.0) -> PortfolioPolicy:
    fn = oracle(market, utility, x0)
    if fn is None:
        raise ValueError("no closed form for this market/utility")
    return PortfolioPolicy(lambda k, path, x: scale * fn(k, path)[1],
                           "closed form" if scale == 1.0 else f"{scale:g} x closed form")
