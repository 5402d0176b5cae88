"""Optimal portfolios in a complete Wiener market via the vertical derivative of deflated wealth."""

from .errors import (NumericFailure, PolicyEvaluationError, SingularVolatilityError,
                     UnattainableBudgetError)
from .funcalc import (IntegrandProcess, NonAnticipativeFunctional, discrete_stochastic_integral,
                      horizontal_derivative, integrand, representation_residual, vertical_derivative)
from .market import (MarketModel, PortfolioPolicy, constant_market, deflators, running_max_vol_market,
                     time_varying_market, wealth_under_policy)
from .optimizer import (DeflatedWealthFunctional, PortfolioResult, closed_form_log, closed_form_power,
                        optimal_portfolio, optimal_wealth, oracle)
from .paths import Path, PathEnsemble, TimeGrid, bump_path, extend_path, simulate_brownian, stop_path
from .utility import UtilitySpec, inverse_marginal, solve_multiplier
from .verify import TestReport

__version__ = "0.1.0"

__all__ = [
    "NumericFailure", "PolicyEvaluationError", "SingularVolatilityError", "UnattainableBudgetError",
    "IntegrandProcess", "NonAnticipativeFunctional", "discrete_stochastic_integral",
    "horizontal_derivative", "integrand", "representation_residual", "vertical_derivative",
    "MarketModel", "PortfolioPolicy", "constant_market", "deflators", "running_max_vol_market",
    "time_varying_market", "wealth_under_policy",
    "DeflatedWealthFunctional", "PortfolioResult", "closed_form_log", "closed_form_power",
    "optimal_portfolio", "optimal_wealth", "oracle",
    "Path", "PathEnsemble", "TimeGrid", "bump_path", "extend_path", "simulate_brownian", "stop_path",
    "UtilitySpec", "inverse_marginal", "solve_multiplier", "TestReport",
]
