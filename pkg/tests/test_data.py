import json

import numpy as np
import pytest
from scipy import stats

from minimax_ope.data import (
    IID,
    TRAJECTORY,
    Dataset,
    Transition,
    load_dataset,
    make_rng,
    sample_episodes,
    sample_iid,
    sample_trajectory,
    save_dataset,
    sufficient_stats,
)
from minimax_ope.dr import stepwise_is_returns, truncation_bias_bound
from minimax_ope.errors import EmptyDatasetError, ErgodicityError
from minimax_ope.mdp import Policy, TabularMDP, true_return


class TestDatasetType:
    def test_empty_rejected(self):
        with pytest.raises(EmptyDatasetError):
            Dataset([], [], [], [])

    def test_ragged_rejected(self):
        with pytest.raises(ValueError):
            Dataset([0, 1], [0], [0.0], [0])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            Dataset([0], [0], [0.0], [0], mode="bootstrap")

    def test_transitions_round_trip(self):
        rows = [Transition(0, 1, 0.5, 1), Transition(1, 0, 0.25, 0)]
        ds = Dataset.from_transitions(rows)
        assert ds.transitions == rows
        assert len(ds) == 2

    def test_check_shape(self):
        ds = Dataset([0, 3], [0, 0], [0.0, 0.0], [1, 1])
        with pytest.raises(ValueError, match="s"):
            ds.check_shape(2, 1)

    def test_sufficient_stats(self):
        ds = Dataset([0, 0, 1], [1, 1, 0], [0.5, 0.25, 1.0], [1, 0, 1])
        st = sufficient_stats(ds, 2, 2)
        assert st.counts[0, 1, 1] == 1 and st.counts[0, 1, 0] == 1 and st.counts[1, 0, 1] == 1
        np.testing.assert_allclose(st.reward_sum, [[0.0, 0.75], [1.0, 0.0]])
        np.testing.assert_array_equal(st.pair_counts, [[0, 2], [1, 0]])


class TestSampleIid:
    def test_m1(self, single):
        ds = sample_iid(single.mdp, single.pi_b, 5, seed=0)
        assert ds.n == 5
        assert set(ds.s) == {0} and set(ds.a) == {0} and set(ds.s_next) == {0}
        np.testing.assert_array_equal(ds.r, np.ones(5))

    def test_zero_n(self, single):
        with pytest.raises(EmptyDatasetError):
            sample_iid(single.mdp, single.pi_b, 0, seed=0)

    def test_provenance(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 10, seed=3)
        assert ds.mode == IID and ds.seed == 3
        np.testing.assert_allclose(ds.source_dist, np.full((2, 2), 0.25))

    def test_frequency_bands(self, chain):
        n = 10_000
        ds = sample_iid(chain.mdp, chain.pi_b, n, seed=7)
        freq = np.bincount(ds.s * 2 + ds.a, minlength=4) / n
        p = ds.source_dist.ravel()
        band = 3 * np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= band)

    def test_chi_square(self, chain):
        n = 100_000
        ds = sample_iid(chain.mdp, chain.pi_b, n, seed=11)
        counts = np.bincount(ds.s * 2 + ds.a, minlength=4)
        assert stats.chisquare(counts, ds.source_dist.ravel() * n).pvalue > 1e-3

    def test_next_state_frequencies(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 40_000, seed=5)
        for s in range(2):
            for a in range(2):
                mask = (ds.s == s) & (ds.a == a)
                frac = np.mean(ds.s_next[mask] == 1 - s)
                p = chain.mdp.transition[s, a, 1 - s]
                assert abs(frac - p) <= 4 * np.sqrt(p * (1 - p) / mask.sum())

    def test_reward_moments(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 40_000, seed=9)
        for s in range(2):
            for a in range(2):
                r = ds.r[(ds.s == s) & (ds.a == a)]
                se = np.sqrt(chain.mdp.reward_variance[s, a] / len(r))
                assert abs(r.mean() - chain.mdp.expected_reward[s, a]) <= 4 * se

    def test_rewards_in_range(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 20_000, seed=1)
        assert ds.r.min() >= 0.0 and ds.r.max() <= chain.mdp.r_max
        assert np.any(ds.r == 0.0)  # R=0.2 with std 0.1 clips at zero now and then

    def test_deterministic(self, chain):
        a = sample_iid(chain.mdp, chain.pi_b, 500, seed=42)
        b = sample_iid(chain.mdp, chain.pi_b, 500, seed=42)
        c = sample_iid(chain.mdp, chain.pi_b, 500, seed=43)
        for col in ("s", "a", "r", "s_next"):
            np.testing.assert_array_equal(getattr(a, col), getattr(b, col))
        assert not np.array_equal(a.r, c.r)

    def test_draw_order_contract(self, chain):
        """Tuple i is a function of uniform row i: (state, action, reward, next state)."""
        n = 50
        u = make_rng(4).random((n, 4))
        ds = sample_iid(chain.mdp, chain.pi_b, n, seed=4)
        np.testing.assert_array_equal(ds.s, (u[:, 0] >= 0.5).astype(int))
        np.testing.assert_array_equal(ds.a, (u[:, 1] >= 0.5).astype(int))

    def test_non_ergodic_raises(self):
        P = np.zeros((2, 1, 2))
        P[0, 0, 0] = P[1, 0, 1] = 1.0
        mdp = TabularMDP(P, np.zeros((2, 1)), np.zeros((2, 1)), 0.9, [1, 0], 1.0)
        with pytest.raises(ErgodicityError):
            sample_iid(mdp, Policy.uniform(2, 1), 10, seed=0)


class TestSampleTrajectory:
    def test_m1(self, single):
        ds = sample_trajectory(single.mdp, single.pi_b, 3, seed=0)
        assert ds.n == 3 and list(ds.s) == [0, 0, 0] and list(ds.s_next) == [0, 0, 0]

    def test_horizon_one(self, chain):
        ds = sample_trajectory(chain.mdp, chain.pi_b, 1, seed=0)
        assert ds.n == 1 and ds.mode == TRAJECTORY

    def test_chained(self, chain):
        ds = sample_trajectory(chain.mdp, chain.pi_b, 1000, seed=2)
        np.testing.assert_array_equal(ds.s[1:], ds.s_next[:-1])

    def test_ergodic_frequencies(self, chain):
        ds = sample_trajectory(chain.mdp, chain.pi_b, 100_000, seed=8)
        freq = np.bincount(ds.s, minlength=2) / ds.n
        assert np.abs(freq - ds.source_dist.sum(axis=1)).sum() <= 0.01

    def test_deterministic(self, chain):
        a = sample_trajectory(chain.mdp, chain.pi_b, 200, seed=1)
        b = sample_trajectory(chain.mdp, chain.pi_b, 200, seed=1)
        np.testing.assert_array_equal(a.s, b.s)
        np.testing.assert_array_equal(a.r, b.r)

    def test_zero_horizon(self, chain):
        with pytest.raises(EmptyDatasetError):
            sample_trajectory(chain.mdp, chain.pi_b, 0, seed=0)


class TestSampleEpisodes:
    def test_m1(self, single):
        eps = sample_episodes(single.mdp, single.pi_b, 2, 3, seed=0)
        assert eps.states.shape == (2, 3)
        assert np.all(eps.states == 0) and np.all(eps.rewards == 1.0)

    def test_bandit_horizon(self, chain):
        eps = sample_episodes(chain.mdp, chain.pi_b, 100, 1, seed=0)
        assert eps.horizon == 1
        assert np.all(eps.states[:, 0] == 0)  # d0 puts all mass on state 0

    def test_starts_from_d0_and_chains(self, chain):
        eps = sample_episodes(chain.mdp, chain.pi_b, 50, 20, seed=3)
        np.testing.assert_array_equal(eps.states[:, 1:], eps.next_states[:, :-1])

    def test_stepwise_is_mean(self, chain):
        gamma, h = chain.mdp.gamma, 50
        eps = sample_episodes(chain.mdp, chain.pi_b, 500, h, seed=17)
        vals = stepwise_is_returns(eps, chain.pi_e, chain.pi_b, gamma)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        tol = 3 * se + truncation_bias_bound(gamma, h, chain.mdp.r_max)
        assert abs(vals.mean() - true_return(chain.mdp, chain.pi_e)) <= tol


class TestCsv:
    def test_round_trip(self, chain, tmp_path):
        ds = sample_iid(chain.mdp, chain.pi_b, 200, seed=6)
        path = tmp_path / "data.csv"
        meta_path = save_dataset(ds, path)
        assert path.read_text().splitlines()[0] == "s,a,r,s_next"
        meta = json.loads(meta_path.read_text())
        assert meta["mode"] == IID and meta["seed"] == 6
        back = load_dataset(path)
        for col in ("s", "a", "r", "s_next"):
            np.testing.assert_array_equal(getattr(back, col), getattr(ds, col))
        assert back.mode == IID and back.seed == 6
        np.testing.assert_allclose(back.source_dist, ds.source_dist)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            load_dataset(path)

    def test_without_sidecar(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("s,a,r,s_next\n0,1,0.5,1\n")
        ds = load_dataset(path)
        assert ds.n == 1 and ds.mode == IID and ds.seed is None
