"""Experiment configuration: strict JSON schema with full default echo."""

from __future__ import annotations

import difflib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class EstimatorConfig:
    """Monte Carlo budgets and numerical knobs.

    ``budget_rel_tol=None`` picks 1e-6 when the budget has a closed form (log
    utility) and 1e-3 otherwise.
    """

    n_steps: int = 64
    n_outer: int = 256
    n_inner: int = 10_000
    bump: float = 0.05
    seed: int = 0
    budget_paths: int = 1_000_000
    antithetic: bool = True
    budget_rel_tol: float | None = None
    floor: float = 1e-12
    workers: int = 1

    def __post_init__(self):
        if self.n_steps < 1 or self.n_outer < 1 or self.n_inner < 1 or self.budget_paths < 1:
            raise ValueError("path and step counts must be positive")
        if self.antithetic and self.n_inner % 2:
            raise ValueError("antithetic inner sampling needs an even n_inner")
        if not self.bump > 0:
            raise ValueError("bump must be positive")

    def replace(self, **kw) -> "EstimatorConfig":
        return EstimatorConfig(**{**asdict(self), **kw})


# -- experiment schema ------------------------------------------------------------

MARKET_FAMILIES = {
    "constant": {"r": 0.01, "alpha": None, "sigma": None},
    "time-varying-deterministic": {"r0": 0.01, "r1": 0.0, "alpha0": None, "alpha1": None,
                                   "sigma0": None, "sigma_slope": 0.0},
    "path-dependent-demo": {"r": 0.01, "alpha": None, "sigma0": None, "amplitude": 0.5},
}
_MARKET_COMMON = {"family": "constant", "n": 1, "horizon": 1.0, "s0": None, "cond_cap": 1e8}
SABOTAGE = (None, "double-policy", "drifted-martingale", "both")


@dataclass
class MarketConfig:
    family: str = "constant"
    n: int = 1
    horizon: float = 1.0
    s0: list = None
    cond_cap: float = 1e8
    params: dict = field(default_factory=dict)


@dataclass
class UtilityConfig:
    family: str = "log"
    gamma: float | None = None
    x0: float = 1.0


@dataclass
class RunConfig:
    output_dir: str = "out"
    path_id: int = 0
    format: str = "csv"
    sabotage: str | None = None
    oracle_tol: float | None = None
    flatness_outer: int = 2000
    flatness_inner: int = 32
    replication_outer: int = 64
    replication_inner: int = 1000
    representation_outer: int = 32
    representation_inner: int = 2000
    refinement: list = field(default_factory=lambda: [32, 64, 128])
    sweep_h: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    sweep_m: list = field(default_factory=lambda: [100, 1000, 10000])
    sweep_k: list = field(default_factory=lambda: [32, 64, 128])


@dataclass
class ExperimentConfig:
    market: MarketConfig
    utility: UtilityConfig
    estimator: EstimatorConfig
    run: RunConfig

    def to_dict(self) -> dict:
        m = asdict(self.market)
        params = m.pop("params")
        return {"market": {**m, **params}, "utility": asdict(self.utility),
                "estimator": asdict(self.estimator), "run": asdict(self.run)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _reject_unknown(block: dict, allowed, path: str) -> None:
    for key in block:
        if key not in allowed:
            close = difflib.get_close_matches(key, list(allowed), n=1)
            hint = f" (did you mean {close[0]!r}?)" if close else ""
            raise ConfigError(f"{path}{key}" if path else key, f"unknown key{hint}")


def _number(v, path: str, *, positive=False, nonneg=False, integer=False) -> Any:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(path, f"expected an integer, got {v!r}")
        v = int(v)
    elif not np.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, "must be > 0")
    if nonneg and not v >= 0:
        raise ConfigError(path, "must be >= 0")
    return v if integer else float(v)


def _vector(v, n: int, path: str) -> list:
    arr = np.asarray(v, dtype=object)
    if arr.shape != (n,):
        raise ConfigError(path, f"expected a list of {n} numbers")
    return [_number(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _matrix(v, n: int, path: str) -> list:
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(path, f"expected an {n}x{n} matrix")
    return [_vector(row, n, f"{path}[{i}]") for i, row in enumerate(v)]


def _int_list(v, path: str, minimum: int = 1) -> list:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a non-empty list")
    out = [_number(x, f"{path}[{i}]", integer=True) for i, x in enumerate(v)]
    if min(out) < minimum:
        raise ConfigError(path, f"entries must be >= {minimum}")
    return out


def _parse_market(block: dict) -> MarketConfig:
    if not isinstance(block, dict):
        raise ConfigError("market", "expected an object")
    family = block.get("family", "constant")
    if family not in MARKET_FAMILIES:
        raise ConfigError("market.family", f"must be one of {sorted(MARKET_FAMILIES)}")
    spec = MARKET_FAMILIES[family]
    _reject_unknown(block, {**_MARKET_COMMON, **spec}, "market.")
    n = _number(block.get("n", 1), "market.n", integer=True, positive=True)
    horizon = _number(block.get("horizon", 1.0), "market.horizon", positive=True)
    s0 = _vector(block.get("s0", [1.0] * n), n, "market.s0")
    if min(s0) <= 0:
        raise ConfigError("market.s0", "prices must be > 0")
    cond_cap = _number(block.get("cond_cap", 1e8), "market.cond_cap", positive=True)
    eye = np.eye(n).tolist()
    defaults = {"alpha": [0.05] * n, "alpha0": [0.05] * n, "alpha1": [0.0] * n,
                "sigma": [[0.2 * x for x in row] for row in eye],
                "sigma0": [[0.2 * x for x in row] for row in eye]}
    params = {}
    for key, default in spec.items():
        v = block.get(key, defaults.get(key, default))
        path = f"market.{key}"
        if key.startswith("alpha"):
            params[key] = _vector(v, n, path)
        elif key.startswith("sigma") and key != "sigma_slope":
            params[key] = _matrix(v, n, path)
        else:
            params[key] = _number(v, path)
    if family == "path-dependent-demo" and not 0 <= params["amplitude"] < 1:
        raise ConfigError("market.amplitude", "must satisfy 0 <= amplitude < 1")
    if family == "time-varying-deterministic" and 1 + params["sigma_slope"] * horizon <= 0:
        raise ConfigError("market.sigma_slope", "volatility must stay positive on [0, horizon]")
    for key in ("sigma", "sigma0"):
        if key in params:
            cond = np.linalg.cond(np.array(params[key]))
            if not cond <= cond_cap:
                raise ConfigError(f"market.{key}", f"condition number {cond:.3g} exceeds cond_cap")
    return MarketConfig(family, n, horizon, s0, cond_cap, params)


def _parse_utility(block: dict) -> UtilityConfig:
    if not isinstance(block, dict):
        raise ConfigError("utility", "expected an object")
    _reject_unknown(block, {"family", "gamma", "x0"}, "utility.")
    family = block.get("family", "log")
    if family not in ("log", "power"):
        raise ConfigError("utility.family", "must be 'log' or 'power'")
    gamma = block.get("gamma")
    if family == "power":
        if gamma is None:
            raise ConfigError("utility.gamma", "required for power utility")
        gamma = _number(gamma, "utility.gamma")
        if not (gamma < 1 and gamma != 0):
            raise ConfigError("utility.gamma", "must satisfy gamma < 1 and gamma != 0")
    elif gamma is not None:
        raise ConfigError("utility.gamma", "only meaningful for power utility")
    x0 = _number(block.get("x0", 1.0), "utility.x0", positive=True)
    return UtilityConfig(family, gamma, x0)


def _parse_estimator(block: dict) -> EstimatorConfig:
    if not isinstance(block, dict):
        raise ConfigError("estimator", "expected an object")
    names = {f.name: f.default for f in fields(EstimatorConfig)}
    _reject_unknown(block, names, "estimator.")
    kw = {}
    for key, default in names.items():
        v = block.get(key, default)
        path = f"estimator.{key}"
        if key == "antithetic":
            if not isinstance(v, bool):
                raise ConfigError(path, "expected true or false")
        elif key == "budget_rel_tol":
            v = None if v is None else _number(v, path, positive=True)
        elif key == "seed":
            v = _number(v, path, integer=True, nonneg=True)
        elif isinstance(default, int):
            v = _number(v, path, integer=True, positive=True)
        else:
            v = _number(v, path, positive=True)
        kw[key] = v
    if kw["antithetic"] and kw["n_inner"] % 2:
        raise ConfigError("estimator.n_inner", "must be even when antithetic is true")
    return EstimatorConfig(**kw)


def _parse_run(block: dict) -> RunConfig:
    if not isinstance(block, dict):
        raise ConfigError("run", "expected an object")
    base = RunConfig()
    names = {f.name: getattr(base, f.name) for f in fields(RunConfig)}
    _reject_unknown(block, names, "run.")
    kw = {}
    for key, default in names.items():
        v = block.get(key, default)
        path = f"run.{key}"
        if key == "output_dir":
            if not isinstance(v, str):
                raise ConfigError(path, "expected a string")
        elif key == "format":
            if v not in ("csv", "json"):
                raise ConfigError(path, "must be 'csv' or 'json'")
        elif key == "sabotage":
            if v not in SABOTAGE:
                raise ConfigError(path, f"must be one of {SABOTAGE}")
        elif key == "oracle_tol":
            v = None if v is None else _number(v, path, positive=True)
        elif key == "path_id":
            v = _number(v, path, integer=True, nonneg=True)
        elif key == "sweep_h":
            if not isinstance(v, list) or not v:
                raise ConfigError(path, "expected a non-empty list")
            v = [_number(x, f"{path}[{i}]", positive=True) for i, x in enumerate(v)]
        elif isinstance(default, list):
            v = _int_list(v, path)
        else:
            v = _number(v, path, integer=True, positive=True)
        kw[key] = v
    return RunConfig(**kw)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON experiment description."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"malformed JSON at line {exc.lineno} column {exc.colno} "
                              f"(char {exc.pos}): {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("", "top level must be an object")
    _reject_unknown(doc, ("market", "utility", "estimator", "run"), "")
    try:
        estimator = _parse_estimator(doc.get("estimator", {}))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("estimator", str(exc)) from exc
    return ExperimentConfig(
        market=_parse_market(doc.get("market", {})),
        utility=_parse_utility(doc.get("utility", {})),
        estimator=estimator,
        run=_parse_run(doc.get("run", {})),
    )


def build_market(cfg: MarketConfig):
    from . import market as mk

    p = cfg.params
    if cfg.family == "constant":
        return mk.constant_market(p["r"], p["alpha"], p["sigma"], cfg.horizon, cfg.s0, cfg.cond_cap)
    if cfg.family == "time-varying-deterministic":
        return mk.time_varying_market(p["r0"], p["r1"], p["alpha0"], p["alpha1"], p["sigma0"],
                                      p["sigma_slope"], cfg.horizon, cfg.s0, cfg.cond_cap)
    return mk.running_max_vol_market(p["r"], p["alpha"], p["sigma0"], p["amplitude"],
                                     cfg.horizon, cfg.s0, cfg.cond_cap)


def build_utility(cfg: UtilityConfig):
    from .utility import UtilitySpec

    return UtilitySpec(cfg.family, cfg.gamma)
