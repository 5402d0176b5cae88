import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcport.paths import (Path, PathEnsemble, TimeGrid, bump_path, extend_levels, extend_path,
                            gaussian_draws, simulate_brownian, stop_path)


def random_path(K=12, n=2, seed=0, path_id=None):
    grid = TimeGrid(1.5, K)
    rng = np.random.default_rng(seed)
    v = np.vstack([np.zeros(n), np.cumsum(rng.normal(size=(K, n)), axis=0)])
    return Path(grid, v, path_id)


nodes = st.integers(0, 12)
coords = st.integers(0, 1)
bumps = st.floats(-2.0, 2.0, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


class TestTimeGrid:
    def test_times_and_step(self):
        g = TimeGrid(2.0, 8)
        assert g.dt == 0.25
        assert g.times[0] == 0.0 and g.times[-1] == 2.0
        assert len(g.times) == 9

    def test_index_of_round_trip(self):
        g = TimeGrid(1.0, 64)
        for k in (0, 1, 17, 64):
            assert g.index_of(g.times[k]) == k

    @pytest.mark.parametrize("t", [0.3, -0.1, 1.01])
    def test_off_grid_time_rejected(self, t):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 4).index_of(t)

    @pytest.mark.parametrize("horizon, steps", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
    def test_bad_grid(self, horizon, steps):
        with pytest.raises(ValueError):
            TimeGrid(horizon, steps)

    def test_times_read_only(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 4).times[1] = 3.0

    def test_coarsen(self):
        assert TimeGrid(1.0, 128).coarsen(4) == TimeGrid(1.0, 32)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 10).coarsen(3)


class TestSurgery:
    @given(nodes)
    def test_stop_is_idempotent(self, k):
        w = random_path()
        assert stop_path(stop_path(w, k), k) == stop_path(w, k)

    @given(nodes, nodes)
    def test_stop_composes_to_earlier_node(self, k, j):
        w = random_path()
        assert stop_path(stop_path(w, k), j) == stop_path(w, min(k, j))

    @given(nodes, coords, bumps)
    def test_bump_and_stop_commute(self, k, i, h):
        w = random_path()
        a = stop_path(bump_path(w, k, i, h), k)
        b = bump_path(stop_path(w, k), k, i, h)
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-12)

    @given(nodes, coords, bumps, bumps)
    def test_bumps_add(self, k, i, h1, h2):
        w = random_path()
        a = bump_path(bump_path(w, k, i, h1), k, i, h2)
        b = bump_path(w, k, i, h1 + h2)
        np.testing.assert_allclose(a.values, b.values, rtol=0, atol=1e-12)

    @given(nodes, coords, bumps)
    def test_bump_only_moves_later_nodes_of_one_coordinate(self, k, i, h):
        w = random_path()
        d = bump_path(w, k, i, h).values - w.values
        np.testing.assert_allclose(d[k:, i], h, atol=1e-12)
        assert np.all(d[:k] == 0)
        assert np.all(np.delete(d, i, axis=1) == 0)

    def test_bump_changes_only_the_increment_into_k(self):
        w = random_path()
        d = bump_path(w, 5, 0, 0.3).increments - w.increments
        expected = np.zeros_like(d)
        expected[4, 0] = 0.3
        np.testing.assert_allclose(d, expected, atol=1e-12)

    def test_surgery_keeps_path_id(self):
        w = random_path(path_id=42)
        assert stop_path(w, 3).path_id == 42
        assert bump_path(w, 3, 1, 0.1).path_id == 42

    def test_bad_coordinate(self):
        with pytest.raises(ValueError):
            bump_path(random_path(), 2, 2, 0.1)

    @pytest.mark.parametrize("k", [-1, 13, 2.5])
    def test_bad_node(self, k):
        with pytest.raises(ValueError):
            stop_path(random_path(), k)

    def test_extend_agrees_with_stopped_prefix(self):
        w = random_path()
        inc = np.ones((8, 2)) * 0.1
        e = extend_path(stop_path(w, 4), 4, inc)
        np.testing.assert_array_equal(e.values[:5], w.values[:5])
        np.testing.assert_allclose(e.values[-1], w.values[4] + 0.8)

    def test_extend_rejects_wrong_block(self):
        with pytest.raises(ValueError):
            extend_path(random_path(), 4, np.zeros((7, 2)))

    def test_batched_extension_matches_single(self):
        w = random_path()
        block = np.random.default_rng(3).normal(size=(5, 8, 2))
        many = extend_levels(w.values[:5], block)
        for j in range(5):
            np.testing.assert_allclose(many[j], extend_path(w, 4, block[j]).values)

    def test_values_read_only(self):
        with pytest.raises(ValueError):
            random_path().values[0, 0] = 1.0


class TestSimulation:
    @given(seeds)
    def test_same_seed_same_paths(self, seed):
        g = TimeGrid(1.0, 8)
        a = simulate_brownian(g, 2, 3, seed)
        b = simulate_brownian(g, 2, 3, seed)
        np.testing.assert_array_equal(a.values, b.values)

    def test_members_independent_of_batch_position(self):
        g = TimeGrid(1.0, 8)
        full = simulate_brownian(g, 2, 10, seed=5)
        tail = simulate_brownian(g, 2, 4, seed=5, first=6)
        np.testing.assert_array_equal(full.values[6:], tail.values)
        assert list(tail.stream_ids) == [6, 7, 8, 9]

    def test_different_seeds_differ(self):
        g = TimeGrid(1.0, 8)
        assert not np.array_equal(simulate_brownian(g, 1, 2, 1).values, simulate_brownian(g, 1, 2, 2).values)

    def test_starts_at_zero(self):
        ens = simulate_brownian(TimeGrid(1.0, 8), 3, 5, seed=0)
        assert np.all(ens.values[:, 0] == 0)

    def test_increment_moments(self):
        g = TimeGrid(2.0, 4)
        dw = np.diff(simulate_brownian(g, 1, 40_000, seed=9).values, axis=1)
        # mean 0 and variance dt = 0.5, each within a few standard errors
        assert abs(dw.mean()) < 4 * np.sqrt(0.5 / dw.size)
        assert dw.var() == pytest.approx(0.5, rel=0.02)

    def test_draw_addresses(self):
        a = gaussian_draws(1, (3,), 20)
        b = gaussian_draws(1, (3,), 8, offset=12)
        np.testing.assert_array_equal(a[12:], b)
        with pytest.raises(ValueError):
            gaussian_draws(1, (3,), 4, offset=2)

    def test_member_access_and_coarsen(self):
        ens = simulate_brownian(TimeGrid(1.0, 8), 1, 3, seed=2, first=10)
        assert ens[1].path_id == 11
        c = ens.coarsen(2)
        assert c.grid.n_steps == 4
        np.testing.assert_array_equal(c.values[:, -1], ens.values[:, -1])

    def test_ensemble_csv(self, tmp_path):
        ens = simulate_brownian(TimeGrid(1.0, 2), 2, 2, seed=2)
        ens.to_csv(tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert lines[0] == "path_id,node_index,time,w_1,w_2"
        assert len(lines) == 1 + 2 * 3
        assert float(lines[-1].split(",")[3]) == ens.values[1, 2, 0]

    def test_ensemble_shape_checks(self):
        with pytest.raises(ValueError):
            PathEnsemble(TimeGrid(1.0, 4), np.zeros((2, 4, 1)))
