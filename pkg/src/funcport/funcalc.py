"""Numerical horizontal/vertical derivatives of non-anticipative functionals.

A functional is evaluated as ``F(k, path)`` with ``k`` a node index.  The
vertical derivative is a central bump-and-revalue difference; functionals
that simulate internally must key their randomness on ``path.path_id`` and
``k`` only, so the ``+h`` and ``-h`` evaluations see common random numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import NumericFailure
from .paths import Path, PathEnsemble, bump_path, stop_path

Rule = Callable[[int, Path], float]


@dataclass(frozen=True)
class NonAnticipativeFunctional:
    rule: Rule
    label: str = "F"

    def __call__(self, k: int, path: Path) -> float:
        return self.rule(k, path)


@dataclass(frozen=True)
class IntegrandProcess:
    """Left-point integrand: row ``k`` multiplies the increment on ``[t_k, t_{k+1}]``."""

    grid: object
    values: np.ndarray  # (K, n)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_steps:
            raise ValueError(f"integrand needs {self.grid.n_steps} rows, got {v.shape[0]}")
        object.__setattr__(self, "values", v)


def default_bump(horizon: float) -> float:
    return 0.05 * np.sqrt(horizon)


def central_differences(F: Callable[[int, Path], object], k: int, path: Path,
                        h: float | None = None, label: str | None = None) -> np.ndarray:
    """``(F(k, w_k + h e_i 1_[t_k,T]) - F(k, w_k - h e_i 1_[t_k,T])) / 2h`` for each coordinate ``i``.

    ``F`` may return a scalar or an array (e.g. per-sample inner values); the
    result has shape ``(n,) + F's shape``.
    """
    if h is None:
        h = default_bump(path.grid.horizon)
    if not h > 0:
        raise ValueError(f"bump size must be positive, got {h}")
    label = label or getattr(F, "label", "functional")
    base = stop_path(path, k)
    out = []
    for i in range(path.dim):
        up = np.asarray(F(k, bump_path(base, k, i, h)), dtype=np.float64)
        if not np.all(np.isfinite(up)):
            raise NumericFailure(f"{label} not finite at node {k} under +h bump")
        down = np.asarray(F(k, bump_path(base, k, i, -h)), dtype=np.float64)
        if not np.all(np.isfinite(down)):
            raise NumericFailure(f"{label} not finite at node {k} under -h bump")
        out.append((up - down) / (2.0 * h))
    return np.array(out)


def vertical_derivative(F: Callable[[int, Path], float], k: int, path: Path,
                        h: float | None = None) -> np.ndarray:
    """Central-difference vertical derivative, one entry per coordinate."""
    return central_differences(F, k, path, h).reshape(path.dim)


def horizontal_derivative(F: Callable[[int, Path], float], k: int, path: Path) -> float:
    """Forward difference along the frozen path, one grid step ahead."""
    k = path.grid.check_node(k)
    if k == path.grid.n_steps:
        raise ValueError("horizontal derivative undefined at the terminal node")
    frozen = stop_path(path, k)
    return (F(k + 1, frozen) - F(k, frozen)) / path.grid.dt


def discrete_stochastic_integral(phi, path: Path) -> float:
    """Left-point Ito sum ``sum_k phi(t_k)' (w(t_{k+1}) - w(t_k))``."""
    if isinstance(phi, IntegrandProcess):
        if phi.grid != path.grid:
            raise ValueError("integrand and path live on different grids")
        values = phi.values
    else:
        values = np.asarray(phi, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
    if values.shape != (path.grid.n_steps, path.dim):
        raise ValueError(
            f"integrand shape {values.shape} does not match path ({path.grid.n_steps}, {path.dim})")
    return float(np.sum(values * path.increments))


def integrand(F, path: Path, h: float | None = None) -> IntegrandProcess:
    """Vertical derivative of ``F`` at every node ``t_0 .. t_{K-1}`` of ``path``."""
    K = path.grid.n_steps
    return IntegrandProcess(path.grid, np.array([vertical_derivative(F, k, path, h) for k in range(K)]))


@dataclass
class ResidualResult:
    label: str
    path_ids: np.ndarray
    residuals: np.ndarray

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residuals ** 2)))

    def to_csv(self, filename) -> None:
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "residual"])
            for pid, r in zip(self.path_ids, self.residuals):
                w.writerow([int(pid), f"{r:.12g}"])


def representation_residual(Y, ensemble: PathEnsemble, h: float | None = None,
                            workers: int = 1) -> ResidualResult:
    """Per-path ``Y(T) - Y(0) - sum_k grad Y(t_k)' dW_k`` with the integrand found by bumping."""
    K = ensemble.grid.n_steps

    def one(path: Path) -> float:
        phi = integrand(Y, path, h)
        return Y(K, path) - Y(0, path) - discrete_stochastic_integral(phi, path)

    res = np.array(parallel_map(one, list(ensemble), workers))
    return ResidualResult(getattr(Y, "label", "Y"), ensemble.stream_ids.copy(), res)


def parallel_map(fn, items: list, workers: int = 1) -> list:
    """Order-preserving map; results do not depend on ``workers``."""
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def is_non_anticipative(F, paths: Iterable[Path], atol: float = 0.0) -> bool:
    for path in paths:
        for k in range(path.grid.n_steps + 1):
            if abs(F(k, path) - F(k, stop_path(path, k))) > atol:
                return False
    return True


# A few stock functionals used by the tests and the verification suite.

def coordinate(i: int = 0) -> NonAnticipativeFunctional:
    return NonAnticipativeFunctional(lambda k, w: float(w.values[k, i]), f"w_{i + 1}")


def cylinder(f: Callable[[float, np.ndarray], float], label: str = "f(t, w(t))") -> NonAnticipativeFunctional:
    """``F(t, w) = f(t, w(t))``."""
    return NonAnticipativeFunctional(lambda k, w: float(f(w.grid.times[k], w.values[k])), label)


def ito_integral(phi: Callable[[float], np.ndarray], label: str = "int phi dW") -> NonAnticipativeFunctional:
    """``F(t_k, w) = sum_{j<k} phi(t_j)' dW_j`` for a deterministic integrand."""

    def rule(k: int, w: Path) -> float:
        if k == 0:
            return 0.0
        weights = np.array([np.atleast_1d(phi(t)) for t in w.grid.times[:k]])
        return float(np.sum(weights * w.increments[:k]))

    return NonAnticipativeFunctional(rule, label)


def squared_minus_time() -> NonAnticipativeFunctional:
    """``W(t)^2 - t`` for one-dimensional paths."""
    return NonAnticipativeFunctional(lambda k, w: float(w.values[k, 0] ** 2 - w.grid.times[k]), "W^2 - t")
