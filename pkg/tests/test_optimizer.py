import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcport.config import EstimatorConfig
from funcport.errors import SingularVolatilityError
from funcport.funcalc import is_non_anticipative
from funcport.market import constant_market, deflators, running_max_vol_market, time_varying_market
from funcport.optimizer import (DeflatedWealthFunctional, assemble_portfolio, closed_form_log,
                                closed_form_power, merton_direction, oracle, oracle_policy, optimal_portfolio, optimal_wealth,
                                power_integrand)
from funcport.paths import Path, TimeGrid, bump_path, simulate_brownian, stop_path
from funcport.utility import UtilitySpec

LOG = UtilitySpec("log")
SQRT = UtilitySpec("power", 0.5)
Y_SQRT = math.exp(0.025)  # multiplier for x0 = 1 in the reference market
GRID = TimeGrid(1.0, 32)


@pytest.fixture(scope="module")
def paths():
    return simulate_brownian(GRID, 1, 6, seed=19)


def ref_market():
    return constant_market(0.01, [0.05], [[0.2]], 1.0)


def power_F(m=4000, market=None, seed=0):
    return DeflatedWealthFunctional(market or ref_market(), SQRT, Y_SQRT, m, seed=seed)


class TestDeflatedWealth:
    def test_terminal_node_is_exact(self, paths):
        F = power_F()
        w = paths[2]
        H = deflators(F.market, w).H[-1]
        s = F.samples(GRID.n_steps, w)
        assert s.shape == (1,)
        assert s[0] == pytest.approx(H * SQRT.inverse_marginal(Y_SQRT * H), rel=1e-12)

    def test_log_is_constant(self, paths):
        F = DeflatedWealthFunctional(ref_market(), LOG, 0.5, 100)
        for k in (0, 7, 31, 32):
            mean, se = F.evaluate(k, paths[0])
            assert mean == 2.0 and se == 0.0

    def test_power_start_value(self, paths):
        F = power_F(m=20_000)
        mean, se = F.evaluate(0, paths[0])
        assert abs(mean - 1.0) <= 3 * se

    @pytest.mark.parametrize("j, k", [(0, 5), (1, 16), (3, 30)])
    def test_power_matches_closed_form_wealth(self, paths, j, k):
        F = power_F(m=20_000)
        w = paths[j]
        mean, se = F.evaluate(k, w)
        H = deflators(F.market, w).H[k]
        x_star, _ = closed_form_power(F.market, 0.5, 1.0, k, w)
        assert abs(mean - H * x_star) <= 3 * se

    def test_optimal_wealth_log(self, paths):
        F = DeflatedWealthFunctional(ref_market(), LOG, 1 / 3.0, 10)
        w = paths[4]
        H = deflators(F.market, w).H
        for k in (0, 10, 32):
            assert optimal_wealth(F, k, w) == pytest.approx(3.0 / H[k], rel=1e-12)

    def test_non_anticipative(self, paths):
        assert is_non_anticipative(power_F(m=64), [paths[1], paths[5]])

    def test_common_random_numbers_under_bumps(self, paths):
        F = power_F(m=64)
        w = paths[3]
        base = F.inner_block(w.path_id, 9, GRID)
        bumped = bump_path(w, 9, 0, 0.3)
        assert F.inner_block(bumped.path_id, 9, GRID) is base
        # a fresh functional regenerates the same block from its address
        np.testing.assert_array_equal(power_F(m=64).inner_block(w.path_id, 9, GRID), base)

    def test_blocks_depend_on_address(self, paths):
        F = power_F(m=64)
        a = F.inner_block(0, 4, GRID)
        assert not np.array_equal(a, F.inner_block(1, 4, GRID))
        assert not np.array_equal(a[:, -4:], F.inner_block(0, 5, GRID)[:, -4:])
        assert not np.array_equal(a, power_F(m=64, seed=1).inner_block(0, 4, GRID))

    def test_antithetic_pairs(self):
        block = power_F(m=8).inner_block(0, 0, GRID)
        np.testing.assert_array_equal(block[:4], -block[4:])

    def test_inner_increment_variance(self):
        block = power_F(m=20_000).inner_block(0, 0, GRID)
        assert block.var() == pytest.approx(GRID.dt, rel=0.02)

    def test_node_values_match_pointwise(self, paths):
        F = power_F(m=32)
        w = paths[2]
        np.testing.assert_allclose(F.node_values(w), [F(k, w) for k in range(33)], rtol=1e-13)

    def test_odd_antithetic_count_rejected(self):
        with pytest.raises(ValueError):
            power_F(m=7)

    def test_solved_constructor(self):
        cfg = EstimatorConfig(n_steps=16, budget_paths=100_000)
        F = DeflatedWealthFunctional.solved(ref_market(), SQRT, 1.0, cfg, n_inner=100)
        assert F.y == pytest.approx(Y_SQRT, rel=2e-3)
        assert F.solve.y == F.y and F.n_inner == 100


class TestPortfolio:
    def test_log_start(self, paths):
        F = DeflatedWealthFunctional(ref_market(), LOG, 1.0, 10_000)
        res = optimal_portfolio(F, 0, paths[0], 0.05)
        assert res.pi[0] == pytest.approx(1.0, rel=1e-12)
        assert np.all(res.grad == 0.0)
        assert res.x_star == 1.0 and res.cond == 1.0

    def test_no_premium(self, paths):
        m = constant_market(0.02, [0.02], [[0.3]], 1.0)
        res = optimal_portfolio(DeflatedWealthFunctional(m, SQRT, 1.0, 100), 7, paths[1], 0.05)
        np.testing.assert_allclose(res.pi, 0.0, atol=1e-14)

    def test_power_start_fraction(self, paths):
        res = optimal_portfolio(power_F(m=10_000), 0, paths[0], 0.05)
        assert res.pi[0] == pytest.approx(2.0 * res.x_star, rel=0.05)
        assert res.pi[0] == pytest.approx(2.0, rel=0.05)

    def test_power_gradient_matches_closed_form(self, paths):
        F = power_F(m=10_000)
        for j, k in [(0, 3), (2, 17), (5, 28)]:
            res = optimal_portfolio(F, k, paths[j], 0.05)
            closed = power_integrand(F.market, 0.5, k, paths[j], res.M)
            se = math.hypot(res.grad_stderr[0], 0.2 * res.inner_stderr)
            assert abs(res.grad[0] - closed[0]) <= 3 * se

    def test_reconstruction_identity(self, paths, two_asset_market):
        F = DeflatedWealthFunctional(two_asset_market, SQRT, 1.0, 400)
        w = simulate_brownian(GRID, 2, 1, seed=2)[0]
        res = optimal_portfolio(F, 6, w, 0.05)
        sigma = two_asset_market.table(GRID)["sigma"][6]
        assert res.reconstruction_gap(sigma) < 1e-12
        # grad/H + theta X* and (grad + theta M)/H are the same vector
        alt = np.linalg.solve(sigma.T, res.grad / res.H + res.theta * res.x_star)
        np.testing.assert_allclose(alt, res.pi, rtol=1e-12)

    def test_two_asset_power_fraction(self, two_asset_market):
        F = DeflatedWealthFunctional(two_asset_market, UtilitySpec("power", -1.0), 1.0, 10_000)
        w = simulate_brownian(GRID, 2, 1, seed=7)[0]
        target = merton_direction(two_asset_market, 0, w) / 2.0
        for k in (0, 12, 25):
            res = optimal_portfolio(F, k, w, 0.05)
            np.testing.assert_allclose(res.pi / res.x_star, target, rtol=0.05)

    def test_singular_volatility(self, paths):
        m = constant_market(0.01, [0.05], [[0.0]], 1.0, cond_cap=1e8)
        with pytest.raises(SingularVolatilityError):
            optimal_portfolio(DeflatedWealthFunctional(m, LOG, 1.0, 10), 0, paths[0], 0.05)

    def test_path_dependent_market(self):
        m = running_max_vol_market(0.01, [0.05], [[0.2]], 0.5, 1.0)
        w = simulate_brownian(TimeGrid(1.0, 16), 1, 1, seed=1)[0]
        F = DeflatedWealthFunctional(m, SQRT, 1.0, 200)
        res = optimal_portfolio(F, 5, w, 0.05)
        assert np.all(np.isfinite(res.pi)) and res.x_star > 0
        assert oracle(m, SQRT, 1.0) is None
        # log utility keeps its closed form even with path-dependent coefficients
        F_log = DeflatedWealthFunctional(m, LOG, 1.0, 10)
        np.testing.assert_allclose(optimal_portfolio(F_log, 5, w, 0.05).pi, closed_form_log(m, 1.0, 5, w)[1])

    def test_assemble(self):
        pi = assemble_portfolio(np.array([[2.0]]), np.array([0.5]), 2.0, 4.0, np.array([1.0]))
        assert pi[0] == pytest.approx((1.0 + 2.0) / 2.0 / 2.0)


class TestClosedForms:
    def test_log_start(self, paths):
        assert closed_form_log(ref_market(), 1.0, 0, paths[0]) == (1.0, pytest.approx(np.array([1.0])))

    def test_log_scaled_direction_is_constant(self, paths):
        m = ref_market()
        for k in (0, 9, 31):
            w = paths[k % 6]
            _, pi = closed_form_log(m, 2.0, k, w)
            H = deflators(m, w).H[k]
            assert pi[0] * H / 2.0 == pytest.approx(1.0, rel=1e-12)

    def test_power_start_exact(self, paths):
        x, _ = closed_form_power(ref_market(), 0.5, 3.0, 0, paths[1])
        assert x == 3.0

    @given(st.integers(0, 32), st.integers(0, 5))
    def test_power_fraction_everywhere(self, k, j):
        w = simulate_brownian(GRID, 1, 6, seed=19)[j]
        x, pi = closed_form_power(ref_market(), 0.5, 1.0, k, w)
        assert pi[0] / x == pytest.approx(2.0, rel=1e-12)

    @pytest.mark.parametrize("g", [-1e-7, 1e-7])
    def test_power_fraction_tends_to_log(self, paths, g):
        x, pi = closed_form_power(ref_market(), g, 1.0, 4, paths[0])
        assert pi[0] / x == pytest.approx(1.0, rel=1e-6)

    def test_power_needs_deterministic_market(self, paths):
        m = running_max_vol_market(0.01, [0.05], [[0.2]], 0.5, 1.0)
        with pytest.raises(ValueError):
            closed_form_power(m, 0.5, 1.0, 0, paths[0])

    def test_power_wealth_is_consistent_across_time(self):
        # E[H(t) X*(t)] = x0 for the closed form itself
        m = time_varying_market(0.01, 0.02, [0.05], [0.02], [[0.2]], 0.3, 1.0)
        ens = simulate_brownian(GRID, 1, 40_000, seed=4)
        k = 20
        from funcport.market import log_state_price
        log_h = log_state_price(m, GRID, ens.values, 0, k)
        vals = np.array([closed_form_power(m, 0.5, 1.0, k, ens[j])[0] for j in range(200)])
        assert np.all(vals > 0)
        # vectorised form: X* H = x0 H^p exp(A_k - A_0)
        p = -1.0
        tab = m.table(GRID)
        th2 = tab["theta"][:, 0] ** 2
        A = lambda s: np.sum(-p * tab["r"][s:32] + 0.5 * (p * p - p) * th2[s:32]) / 32  # noqa: E731
        hx = np.exp(p * log_h + A(k) - A(0))
        assert abs(hx.mean() - 1.0) <= 3 * hx.std(ddof=1) / np.sqrt(hx.size)
        np.testing.assert_allclose(vals * np.exp(log_h[:200]), hx[:200], rtol=1e-12)

    def test_power_integrand_examples(self, paths):
        m = ref_market()
        assert power_integrand(m, 0.5, 0, paths[0], 1.0)[0] == pytest.approx(0.2)
        flat = constant_market(0.03, [0.03], [[0.2]], 1.0)
        assert power_integrand(flat, 0.5, 0, paths[0], 1.0)[0] == 0.0

    def test_oracle_policy_scale(self, paths):
        pol = oracle_policy(ref_market(), LOG, 1.0, scale=2.0)
        assert pol(0, paths[0], 1.0)[0] == pytest.approx(2.0)
        assert "2" in pol.label

    def test_oracle_dispatch(self):
        assert oracle(ref_market(), SQRT, 1.0) is not None
        with pytest.raises(ValueError):
            oracle_policy(running_max_vol_market(0.01, [0.05], [[0.2]], 0.5, 1.0), SQRT, 1.0)


def test_stopped_path_gives_same_portfolio(paths):
    F = power_F(m=200)
    w = paths[1]
    a = optimal_portfolio(F, 11, w, 0.05)
    b = optimal_portfolio(F, 11, stop_path(w, 11), 0.05)
    np.testing.assert_array_equal(a.pi, b.pi)


def test_anonymous_path_uses_fixed_stream():
    F = power_F(m=50)
    v = simulate_brownian(GRID, 1, 1, seed=3).values[0]
    assert F(4, Path(GRID, v)) == F(4, Path(GRID, v))
