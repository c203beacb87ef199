import numpy as np
import pytest

from minimax_ope.data import EpisodeSet, sample_episodes, sample_iid
from minimax_ope.errors import BehaviorSupportError
from minimax_ope.dr import (
    DrInputs,
    dr_error_decomposition,
    dr_estimate,
    naive_behavior_value,
    population_dr,
    population_q_loss,
    population_weight_loss,
    q_estimate,
    stepwise_is,
    stepwise_is_returns,
    truncation_bias_bound,
    weight_estimate,
)
from minimax_ope.fixtures import random_mdp, random_policy
from minimax_ope.mdp import (
    Policy,
    TabularMDP,
    solve_q,
    stationary_distribution,
    stationary_state_distribution,
    true_return,
    true_weight,
)

CHAIN2_RETURN = 0.6726327380169168
CHAIN2_STATIONARY_REWARD = 0.6002122689019667
UNIFORM = np.full((2, 2), 0.25)


def _truth(chain):
    return true_weight(chain.mdp, chain.pi_e, UNIFORM), solve_q(chain.mdp, chain.pi_e)


class TestInputs:
    def test_negative_weight(self, chain):
        with pytest.raises(ValueError, match="non-negative"):
            DrInputs(-np.ones((2, 2)), np.zeros((2, 2)), chain.pi_e, chain.mdp.d0)

    def test_shape(self, chain):
        with pytest.raises(ValueError):
            DrInputs(np.ones((2, 3)), np.zeros((2, 2)), chain.pi_e, chain.mdp.d0)

    def test_non_finite(self, chain):
        with pytest.raises(ValueError):
            DrInputs(np.ones((2, 2)), np.full((2, 2), np.inf), chain.pi_e, chain.mdp.d0)


class TestDefinitionalIdentities:
    def test_zero_weight_is_q_estimate(self, chain, rng):
        ds = sample_iid(chain.mdp, chain.pi_b, 300, seed=1)
        q = rng.uniform(0, 8, size=(2, 2))
        inp = DrInputs(np.zeros((2, 2)), q, chain.pi_e, chain.mdp.d0)
        assert dr_estimate(ds, inp, 0.9) == pytest.approx(q_estimate(q, chain.pi_e, chain.mdp.d0, 0.9), rel=1e-14)

    def test_zero_q_is_weight_estimate(self, chain, rng):
        ds = sample_iid(chain.mdp, chain.pi_b, 300, seed=1)
        w = rng.uniform(0, 2, size=(2, 2))
        inp = DrInputs(w, np.zeros((2, 2)), chain.pi_e, chain.mdp.d0)
        assert dr_estimate(ds, inp, 0.9) == pytest.approx(weight_estimate(ds, w), rel=1e-14)

    def test_zero_weight_true_q_is_exact(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 300, seed=2)
        inp = DrInputs(np.zeros((2, 2)), solve_q(chain.mdp, chain.pi_e), chain.pi_e, chain.mdp.d0)
        assert dr_estimate(ds, inp, 0.9) == pytest.approx(CHAIN2_RETURN, abs=1e-12)

    def test_unit_weight_zero_q_is_mean_reward(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 300, seed=2)
        inp = DrInputs(np.ones((2, 2)), np.zeros((2, 2)), chain.pi_e, chain.mdp.d0)
        assert dr_estimate(ds, inp, 0.9) == pytest.approx(ds.r.mean(), rel=1e-14)

    def test_m1(self, single):
        ds = sample_iid(single.mdp, single.pi_b, 4, seed=0)
        inp = DrInputs(np.ones((1, 1)), np.full((1, 1), 10.0), single.pi_e, single.mdp.d0)
        assert dr_estimate(ds, inp, 0.9) == pytest.approx(1.0)


class TestDoubleRobustness:
    def test_true_weight_any_q(self, chain, rng):
        w, _ = _truth(chain)
        for _ in range(5):
            inp = DrInputs(w, rng.normal(scale=5, size=(2, 2)), chain.pi_e, chain.mdp.d0)
            assert population_dr(chain.mdp, UNIFORM, inp) == pytest.approx(CHAIN2_RETURN, abs=1e-12)

    def test_true_q_any_weight(self, chain, rng):
        _, Q = _truth(chain)
        for _ in range(5):
            inp = DrInputs(rng.uniform(0, 3, size=(2, 2)), Q, chain.pi_e, chain.mdp.d0)
            assert population_dr(chain.mdp, UNIFORM, inp) == pytest.approx(CHAIN2_RETURN, abs=1e-12)

    def test_sample_dr_with_true_weight(self, chain):
        w, _ = _truth(chain)
        ds = sample_iid(chain.mdp, chain.pi_b, 100_000, seed=13)
        inp = DrInputs(w, np.zeros((2, 2)), chain.pi_e, chain.mdp.d0)
        assert abs(dr_estimate(ds, inp, 0.9) - CHAIN2_RETURN) <= 0.02

    def test_sample_dr_with_true_q(self, chain):
        _, Q = _truth(chain)
        ds = sample_iid(chain.mdp, chain.pi_b, 100_000, seed=14)
        inp = DrInputs(np.full((2, 2), 3.0), Q, chain.pi_e, chain.mdp.d0)
        assert abs(dr_estimate(ds, inp, 0.9) - CHAIN2_RETURN) <= 0.02


class TestErrorDecomposition:
    @pytest.mark.parametrize("seed", range(6))
    def test_product_form(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 4, 3, gamma=0.85, noise_std=0.1)
        pi_e, pi_b = random_policy(rng, 4, 3), random_policy(rng, 4, 3)
        data = stationary_distribution(mdp, pi_b)
        inp = DrInputs(rng.uniform(0, 3, size=(4, 3)), rng.normal(size=(4, 3)), pi_e, mdp.d0)
        err = population_dr(mdp, data, inp) - true_return(mdp, pi_e)
        assert dr_error_decomposition(mdp, data, inp) == pytest.approx(err, abs=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_loss_forms(self, seed):
        rng = np.random.default_rng(100 + seed)
        mdp = random_mdp(rng, 3, 2, gamma=0.9)
        pi_e, pi_b = random_policy(rng, 3, 2), random_policy(rng, 3, 2)
        data = stationary_distribution(mdp, pi_b)
        w, q = rng.uniform(0, 3, size=(3, 2)), rng.normal(size=(3, 2))
        Q, w_star = solve_q(mdp, pi_e), true_weight(mdp, pi_e, data)
        err = population_dr(mdp, data, DrInputs(w, q, pi_e, mdp.d0)) - true_return(mdp, pi_e)
        assert population_weight_loss(mdp, pi_e, data, w, q - Q) == pytest.approx(err, abs=1e-12)
        assert population_q_loss(mdp, pi_e, data, q, w - w_star) == pytest.approx(err, abs=1e-12)


class TestPopulationLosses:
    def test_true_weight_zero_loss(self, chain, rng):
        w, _ = _truth(chain)
        f = rng.normal(size=(20, 2, 2))
        np.testing.assert_allclose(population_weight_loss(chain.mdp, chain.pi_e, UNIFORM, w, f), 0.0, atol=1e-12)

    def test_true_q_zero_loss(self, chain, rng):
        _, Q = _truth(chain)
        g = rng.normal(size=(20, 2, 2))
        np.testing.assert_allclose(population_q_loss(chain.mdp, chain.pi_e, UNIFORM, Q, g), 0.0, atol=1e-12)

    def test_stack_matches_single(self, chain, rng):
        w, f = rng.uniform(size=(2, 2)), rng.normal(size=(3, 2, 2))
        stack = population_weight_loss(chain.mdp, chain.pi_e, UNIFORM, w, f)
        for i in range(3):
            assert stack[i] == pytest.approx(float(population_weight_loss(chain.mdp, chain.pi_e, UNIFORM, w, f[i])))

    def test_wrong_weight_detected(self, chain):
        w, _ = _truth(chain)
        f = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert abs(population_weight_loss(chain.mdp, chain.pi_e, UNIFORM, w + 0.5, f)) > 1e-3

    def test_stationary_start_certificate(self, chain):
        """Starting from the behavior stationary law and evaluating behavior gives unit weights."""
        mu = stationary_state_distribution(chain.mdp, chain.pi_b)
        mdp = chain.mdp.replace(d0=mu)
        data = stationary_distribution(mdp, chain.pi_b)
        np.testing.assert_allclose(true_weight(mdp, chain.pi_b, data), 1.0, atol=1e-10)
        assert true_return(mdp, chain.pi_b) == pytest.approx(CHAIN2_STATIONARY_REWARD, abs=1e-12)
        f = np.random.default_rng(0).normal(size=(10, 2, 2))
        np.testing.assert_allclose(population_weight_loss(mdp, chain.pi_b, data, np.ones((2, 2)), f), 0.0, atol=1e-12)


class TestStepwiseIs:
    def test_m1_geometric(self, single):
        eps = sample_episodes(single.mdp, single.pi_b, 3, 10, seed=0)
        np.testing.assert_allclose(stepwise_is_returns(eps, single.pi_e, single.pi_b, 0.9), 1 - 0.9**10)

    def test_on_policy_ratios_are_one(self, chain):
        eps = sample_episodes(chain.mdp, chain.pi_b, 20, 5, seed=2)
        disc = 0.9 ** np.arange(5)
        want = 0.1 * (eps.rewards * disc).sum(axis=1)
        np.testing.assert_allclose(stepwise_is_returns(eps, chain.pi_b, chain.pi_b, 0.9), want)

    def test_hand_computed(self, chain):
        eps = EpisodeSet(
            states=np.array([[0, 1]]), actions=np.array([[1, 0]]),
            rewards=np.array([[0.5, 0.7]]), next_states=np.array([[1, 1]]),
        )
        # rho_0 = 0.8 / 0.5, rho_0 rho_1 = 1.6 * 0.4
        want = 0.1 * (1.6 * 0.5 + 0.9 * 0.64 * 0.7)
        assert stepwise_is(eps, chain.pi_e, chain.pi_b, 0.9) == pytest.approx(want)

    def test_chain2_within_tolerance(self, chain):
        h = 60
        eps = sample_episodes(chain.mdp, chain.pi_b, 2000, h, seed=1)
        vals = stepwise_is_returns(eps, chain.pi_e, chain.pi_b, 0.9)
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - CHAIN2_RETURN) <= 3 * se + truncation_bias_bound(0.9, h, chain.mdp.r_max)

    def test_single_step_episode(self, chain):
        eps = EpisodeSet(
            states=np.array([[0]]), actions=np.array([[1]]), rewards=np.array([[0.9]]), next_states=np.array([[1]]),
        )
        assert stepwise_is(eps, chain.pi_e, chain.pi_b, 0.9) == pytest.approx(0.1 * 1.6 * 0.9)

    def test_support_error(self, chain):
        eps = sample_episodes(chain.mdp, chain.pi_b, 5, 3, seed=0)
        with pytest.raises(BehaviorSupportError):
            stepwise_is(eps, chain.pi_e, Policy.deterministic([0, 0], 2), 0.9)

    def test_bias_bound(self):
        assert truncation_bias_bound(0.9, 10, 2.0) == pytest.approx(0.9**10 * 20.0)


class TestNaive:
    def test_mean_reward(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 50, seed=0)
        assert naive_behavior_value(ds) == pytest.approx(ds.r.mean())

    def test_m1(self, single):
        assert naive_behavior_value(sample_iid(single.mdp, single.pi_b, 20, seed=0)) == 1.0

    def test_constant_reward(self, rng):
        base = random_mdp(rng, 3, 2, gamma=0.7)
        mdp = TabularMDP(base.transition, np.full((3, 2), 0.4), np.zeros((3, 2)), 0.7, base.d0, 1.0)
        ds = sample_iid(mdp, random_policy(rng, 3, 2), 200, seed=1)
        assert naive_behavior_value(ds) == pytest.approx(0.4, abs=1e-15)

    def test_behavior_return_differs_from_stationary_reward(self, chain):
        # d0 is not stationary so the behavior return and the average reward differ
        assert true_return(chain.mdp, chain.pi_b) == pytest.approx(0.5752334957921628, rel=1e-12)
        assert abs(true_return(chain.mdp, chain.pi_b) - CHAIN2_STATIONARY_REWARD) > 0.02

    def test_converges_to_stationary_reward(self, chain):
        ds = sample_iid(chain.mdp, chain.pi_b, 100_000, seed=3)
        se = ds.r.std(ddof=1) / np.sqrt(ds.n)
        assert abs(naive_behavior_value(ds) - CHAIN2_STATIONARY_REWARD) <= 3 * se
