"""Complete Wiener market: coefficients, deflators, stocks and wealth.

Coefficient rules are vectorised over a batch of path histories: a rule is
called as ``rule(t, hist)`` with ``hist`` of shape ``(batch, k + 1, n)``
holding the levels at nodes ``0..k`` and returns ``(batch,)`` for the rate,
``(batch, n)`` for the drift and ``(batch, n, n)`` for the volatility.
Models flagged ``deterministic`` ignore ``hist``; their coefficients are
tabulated once per grid and the stochastic integrals become dot products.

Every integral is recomputed from the increments of the path it is handed,
so vertical bumps flow through the market price of risk into ``Z`` and ``H``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericFailure, PolicyEvaluationError, SingularVolatilityError
from .paths import Path, TimeGrid

CoefRule = Callable[[float, np.ndarray], np.ndarray]

_LOG_MAX = 700.0


@dataclass(frozen=True, eq=False)
class MarketModel:
    n: int
    horizon: float
    rate: CoefRule
    drift: CoefRule
    vol: CoefRule
    s0: np.ndarray
    deterministic: bool = False
    cond_cap: float = 1e8
    label: str = "market"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        s0 = np.broadcast_to(np.asarray(self.s0, dtype=np.float64), (self.n,)).copy()
        if np.any(s0 <= 0):
            raise ValueError("initial stock prices must be positive")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "_tables", {})

    # -- coefficient evaluation -------------------------------------------------

    def coefficients(self, t: float, hist: np.ndarray):
        """``(r, alpha, sigma)`` for a batch of histories at time ``t``."""
        b = hist.shape[0]
        r = np.broadcast_to(np.asarray(self.rate(t, hist), dtype=np.float64), (b,))
        a = np.broadcast_to(np.asarray(self.drift(t, hist), dtype=np.float64), (b, self.n))
        s = np.broadcast_to(np.asarray(self.vol(t, hist), dtype=np.float64), (b, self.n, self.n))
        return r, a, s

    def _theta(self, r, a, s):
        cond = np.linalg.cond(s) if self.n > 1 else np.where(s[:, 0, 0] != 0, 1.0, np.inf)
        worst = float(np.max(cond))
        if not worst <= self.cond_cap:
            raise SingularVolatilityError(
                f"volatility condition number {worst:.3g} exceeds cap {self.cond_cap:.3g}", worst)
        return np.linalg.solve(s, (a - r[:, None])[..., None])[..., 0]

    def table(self, grid: TimeGrid) -> dict:
        """Coefficients of a deterministic model tabulated at every node of ``grid``."""
        if not self.deterministic:
            raise ValueError(f"{self.label} has path-dependent coefficients")
        tab = self._tables.get(grid)
        if tab is None:
            dummy = np.zeros((1, 1, self.n))
            rs, al, sg = [], [], []
            for t in grid.times:
                r, a, s = self.coefficients(float(t), dummy)
                rs.append(r[0]), al.append(a[0]), sg.append(s[0])
            r, a, s = np.array(rs), np.array(al), np.array(sg)
            theta = self._theta(r, a, s)
            tab = {"r": r, "alpha": a, "sigma": s, "theta": theta,
                   "cond": np.linalg.cond(s) if self.n > 1 else np.ones(len(r))}
            self._tables[grid] = tab
        return tab

    def coefficients_at(self, k: int, path: Path):
        """``(r, alpha, sigma, theta)`` at node ``k`` of a single path."""
        k = path.grid.check_node(k)
        if self.deterministic:
            tab = self.table(path.grid)
            return tab["r"][k], tab["alpha"][k], tab["sigma"][k], tab["theta"][k]
        r, a, s = self.coefficients(float(path.grid.times[k]), path.values[None, :k + 1])
        return r[0], a[0], s[0], self._theta(r, a, s)[0]

    def path_coefficients(self, grid: TimeGrid, levels: np.ndarray, start: int = 0, stop: int | None = None):
        """Rate and market price of risk at nodes ``start..stop-1`` for a batch of paths.

        Returns ``r`` of shape ``(batch, steps)`` and ``theta`` of shape ``(batch, steps, n)``.
        """
        stop = grid.n_steps if stop is None else stop
        b = levels.shape[0]
        if self.deterministic:
            tab = self.table(grid)
            return (np.broadcast_to(tab["r"][start:stop], (b, stop - start)),
                    np.broadcast_to(tab["theta"][start:stop], (b, stop - start, self.n)))
        r = np.empty((b, stop - start))
        th = np.empty((b, stop - start, self.n))
        for j in range(start, stop):
            rj, aj, sj = self.coefficients(float(grid.times[j]), levels[:, :j + 1])
            r[:, j - start] = rj
            th[:, j - start] = self._theta(rj, aj, sj)
        return r, th


# -- built-in coefficient families ----------------------------------------------

def constant_market(r: float, alpha, sigma, horizon: float, s0=1.0, cond_cap: float = 1e8) -> MarketModel:
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    n = alpha.size
    sigma = np.asarray(sigma, dtype=np.float64).reshape(n, n)
    return MarketModel(
        n, horizon,
        rate=lambda t, h: r, drift=lambda t, h: alpha, vol=lambda t, h: sigma,
        s0=s0, deterministic=True, cond_cap=cond_cap, label="constant",
        params={"r": r, "alpha": alpha.tolist(), "sigma": sigma.tolist()})


def time_varying_market(r0: float, r1: float, alpha0, alpha1, sigma0, sigma_slope: float,
                        horizon: float, s0=1.0, cond_cap: float = 1e8) -> MarketModel:
    """``r = r0 + r1 t``, ``alpha = alpha0 + alpha1 t``, ``sigma = sigma0 (1 + slope t)``."""
    alpha0 = np.atleast_1d(np.asarray(alpha0, dtype=np.float64))
    n = alpha0.size
    alpha1 = np.broadcast_to(np.asarray(alpha1, dtype=np.float64), (n,))
    sigma0 = np.asarray(sigma0, dtype=np.float64).reshape(n, n)
    if 1 + sigma_slope * horizon <= 0:
        raise ValueError("sigma_slope makes the volatility vanish inside the horizon")
    return MarketModel(
        n, horizon,
        rate=lambda t, h: r0 + r1 * t,
        drift=lambda t, h: alpha0 + alpha1 * t,
        vol=lambda t, h: sigma0 * (1 + sigma_slope * t),
        s0=s0, deterministic=True, cond_cap=cond_cap, label="time-varying",
        params={"r0": r0, "r1": r1, "alpha0": alpha0.tolist(), "alpha1": alpha1.tolist(),
                "sigma0": sigma0.tolist(), "sigma_slope": sigma_slope})


def running_max_vol_market(r: float, alpha, sigma0, amplitude: float, horizon: float,
                           s0=1.0, cond_cap: float = 1e8) -> MarketModel:
    """Volatility ``sigma0 (1 + a tanh(max_{s<=t} W_1(s)))``, bounded in ``[sigma0, (1+a) sigma0)``."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    n = alpha.size
    sigma0 = np.asarray(sigma0, dtype=np.float64).reshape(n, n)
    if not 0 <= amplitude < 1:
        raise ValueError("amplitude must lie in [0, 1)")

    def vol(t, hist):
        scale = 1 + amplitude * np.tanh(hist[:, :, 0].max(axis=1))
        return sigma0[None] * scale[:, None, None]

    return MarketModel(
        n, horizon, rate=lambda t, h: r, drift=lambda t, h: alpha, vol=vol,
        s0=s0, deterministic=False, cond_cap=cond_cap, label="path-dependent-demo",
        params={"r": r, "alpha": alpha.tolist(), "sigma0": sigma0.tolist(), "amplitude": amplitude})


# -- operations -------------------------------------------------------------------

def market_price_of_risk(model: MarketModel, k: int, path: Path) -> np.ndarray:
    """Solve ``sigma theta = alpha - r 1`` at node ``k``."""
    return np.array(model.coefficients_at(k, path)[3])


@dataclass(frozen=True)
class DeflatorBundle:
    grid: TimeGrid
    B: np.ndarray
    theta: np.ndarray
    Z: np.ndarray
    H: np.ndarray

    @property
    def log_H(self) -> np.ndarray:
        return np.log(self.H)

    def to_csv(self, filename, path_id: int = 0) -> None:
        """Columns ``path_id, node, time, B, theta_1..n, Z, H``."""
        n = self.theta.shape[1]
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "node", "time", "B"] + [f"theta_{i + 1}" for i in range(n)] + ["Z", "H"])
            for k, t in enumerate(self.grid.times):
                w.writerow([path_id, k, f"{t:.12g}", f"{self.B[k]:.12g}"]
                           + [f"{x:.12g}" for x in self.theta[k]] + [f"{self.Z[k]:.12g}", f"{self.H[k]:.12g}"])


def log_deflators(model: MarketModel, grid: TimeGrid, levels: np.ndarray):
    """Batched ``log B``, ``log Z`` and ``theta`` at every node, shapes ``(b, K+1)``, ``(b, K+1)``, ``(b, K+1, n)``."""
    K = grid.n_steps
    r, th = model.path_coefficients(grid, levels, 0, K + 1)
    dw = np.diff(levels, axis=1)
    dt = grid.dt
    b = levels.shape[0]
    log_b = np.zeros((b, K + 1))
    log_z = np.zeros((b, K + 1))
    np.cumsum(r[:, :K] * dt, axis=1, out=log_b[:, 1:])
    steps = -np.einsum("bkn,bkn->bk", th[:, :K], dw) - 0.5 * np.sum(th[:, :K] ** 2, axis=2) * dt
    np.cumsum(steps, axis=1, out=log_z[:, 1:])
    # the level at t_0 counts as an increment arriving from 0, weighted by theta(t_0)
    log_z -= np.einsum("bn,bn->b", th[:, 0], levels[:, 0])[:, None]
    return log_b, log_z, th


def deflators(model: MarketModel, path: Path) -> DeflatorBundle:
    log_b, log_z, th = log_deflators(model, path.grid, path.values[None])
    log_b, log_z = log_b[0], log_z[0]
    for name, arr in (("B", log_b), ("Z", log_z)):
        bad = ~(np.abs(arr) <= _LOG_MAX)
        if bad.any():
            raise NumericFailure(f"{name} overflows at node {int(np.argmax(bad))}")
    B = np.exp(log_b)
    Z = np.exp(log_z)
    return DeflatorBundle(path.grid, B, th[0], Z, Z / B)


def log_state_price(model: MarketModel, grid: TimeGrid, levels: np.ndarray, start: int = 0,
                    stop: int | None = None, log_h_start: np.ndarray | float = 0.0) -> np.ndarray:
    """``log H(t_stop)`` for a batch of paths, accumulating from node ``start`` (default ``stop = K``)."""
    K = grid.n_steps
    stop = K if stop is None else stop
    b = levels.shape[0]
    if stop == start:
        out = np.broadcast_to(np.asarray(log_h_start, dtype=np.float64), (b,)).copy()
        if start == 0:
            out -= np.einsum("bn,bn->b", levels[:, 0], model.path_coefficients(grid, levels, 0, 1)[1][:, 0])
        return out
    dt = grid.dt
    dw = np.diff(levels[:, start:stop + 1], axis=1)
    if model.deterministic:
        tab = model.table(grid)
        th = tab["theta"][start:stop]
        drift = np.sum(tab["r"][start:stop] + 0.5 * np.sum(th ** 2, axis=1)) * dt
        out = log_h_start - drift - np.einsum("bkn,kn->b", dw, th)
        if start == 0:
            out -= levels[:, 0] @ th[0]
        return out
    r, th = model.path_coefficients(grid, levels, start, stop)
    drift = np.sum(r + 0.5 * np.sum(th ** 2, axis=2), axis=1) * dt
    out = log_h_start - drift - np.einsum("bkn,bkn->b", dw, th)
    if start == 0:
        out -= np.einsum("bn,bn->b", levels[:, 0], th[:, 0])
    return out


def terminal_log_state_price(model: MarketModel, grid: TimeGrid, levels: np.ndarray) -> np.ndarray:
    return log_state_price(model, grid, levels)


def simulate_stocks(model: MarketModel, path: Path) -> np.ndarray:
    """Log-Euler stock prices, shape ``(K + 1, n)``."""
    grid = path.grid
    K = grid.n_steps
    dw = path.increments
    log_s = np.empty((K + 1, model.n))
    log_s[0] = np.log(model.s0)
    for k in range(K):
        _, a, s, _ = model.coefficients_at(k, path)
        log_s[k + 1] = log_s[k] + (a - 0.5 * np.sum(s ** 2, axis=1)) * grid.dt + s @ dw[k]
    return np.exp(log_s)


PolicyRule = Callable[[int, Path, float], np.ndarray]


@dataclass(frozen=True)
class PortfolioPolicy:
    """Currency amounts held in each stock; the money-market amount is ``X - pi'1``."""

    rule: PolicyRule
    label: str = "policy"

    def __call__(self, k: int, path: Path, wealth: float) -> np.ndarray:
        return np.asarray(self.rule(k, path, wealth), dtype=np.float64)


@dataclass(frozen=True)
class WealthTrajectory:
    wealth: np.ndarray  # (K + 1,)
    pi: np.ndarray  # (K, n), allocation held over [t_k, t_{k+1})
    cash: np.ndarray  # (K,), X_k - pi_k' 1


def wealth_under_policy(model: MarketModel, policy: PortfolioPolicy, x0: float, path: Path) -> WealthTrajectory:
    """Left-point Euler scheme for self-financing wealth."""
    if x0 < 0:
        raise ValueError("initial wealth must be non-negative")
    grid = path.grid
    K = grid.n_steps
    dw = path.increments
    X = np.empty(K + 1)
    X[0] = x0
    pis = np.empty((K, model.n))
    for k in range(K):
        pi = policy(k, path, X[k])
        if pi.shape != (model.n,) or not np.all(np.isfinite(pi)):
            raise PolicyEvaluationError(f"{policy.label} returned {pi!r} at node {k}", k, path.path_id)
        r, a, s, _ = model.coefficients_at(k, path)
        X[k + 1] = X[k] + X[k] * r * grid.dt + pi @ (a - r) * grid.dt + pi @ (s @ dw[k])
        pis[k] = pi
    return WealthTrajectory(X, pis, X[:K] - pis.sum(axis=1))


def check_admissible(wealth: np.ndarray, tol: float | None = None) -> tuple[bool, int | None]:
    """``(True, None)`` if wealth never drops below ``-tol``, else ``(False, first bad node)``."""
    wealth = np.asarray(wealth, dtype=np.float64)
    if tol is None:
        tol = 1e-12 * abs(wealth[0])
    bad = np.flatnonzero(~(wealth >= -tol))
    if bad.size:
        return False, int(bad[0])
    return True, None
