"""Doubly-robust combiner, population losses, step-wise importance sampling and naive baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, EpisodeSet
from .errors import BehaviorSupportError
from .mdp import Policy, TabularMDP, solve_q, state_value, true_weight


@dataclass(frozen=True, eq=False)
class DrInputs:
    """Weight table ``w[s, a]``, Q table ``q[s, a]``, target policy and initial distribution."""

    w: np.ndarray
    q: np.ndarray
    pi_e: Policy
    d0: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        q = np.array(self.q, dtype=float)
        shape = self.pi_e.probs.shape
        if w.shape != shape or q.shape != shape:
            raise ValueError(f"w and q must have shape {shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(q))):
            raise ValueError("w and q must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "d0", np.asarray(self.d0, dtype=float))


def _d0_term(inp: DrInputs, gamma: float) -> float:
    return (1.0 - gamma) * float(inp.d0 @ state_value(inp.q, inp.pi_e))


def dr_estimate(ds: Dataset, inp: DrInputs, gamma: float) -> float:
    """``(1 - gamma) E_d0[q(s, pi_e)] + E_n[w (r + gamma q(s', pi_e) - q(s, a))]``."""
    v = state_value(inp.q, inp.pi_e)
    resid = ds.r + gamma * v[ds.s_next] - inp.q[ds.s, ds.a]
    return _d0_term(inp, gamma) + float(np.mean(inp.w[ds.s, ds.a] * resid))


def weight_estimate(ds: Dataset, w: np.ndarray) -> float:
    """``E_n[w(s, a) r]``."""
    return float(np.mean(np.asarray(w)[ds.s, ds.a] * ds.r))


def q_estimate(q: np.ndarray, pi_e: Policy, d0, gamma: float) -> float:
    """``(1 - gamma) E_d0[q(s, pi_e)]``."""
    return (1.0 - gamma) * float(np.asarray(d0) @ state_value(q, pi_e))


def population_dr(mdp: TabularMDP, data_dist: np.ndarray, inp: DrInputs) -> float:
    """``R[w, q]`` with every expectation taken exactly under the true MDP."""
    v = state_value(inp.q, inp.pi_e)
    resid = mdp.expected_reward + mdp.gamma * mdp.transition @ v - inp.q
    return _d0_term(inp, mdp.gamma) + float(np.sum(data_dist * inp.w * resid))


def dr_error_decomposition(mdp: TabularMDP, data_dist: np.ndarray, inp: DrInputs) -> float:
    """Exact ``R[w, q] - R_{pi_e}`` through the product form

    ``E_d[(w - w*) (gamma v(s') - q(s, a) - gamma V(s') + Q(s, a))]``

    where ``w*`` is the true weight over ``data_dist``, ``Q, V`` are the true
    values of ``pi_e`` and ``v`` is the state value of ``q``.
    """
    w_star = true_weight(mdp, inp.pi_e, data_dist)
    Q = solve_q(mdp, inp.pi_e)
    V = state_value(Q, inp.pi_e)
    v = state_value(inp.q, inp.pi_e)
    second = mdp.gamma * mdp.transition @ (v - V) - inp.q + Q
    return float(np.sum(data_dist * (inp.w - w_star) * second))


def population_weight_loss(mdp: TabularMDP, pi_e: Policy, data_dist: np.ndarray, w, f) -> np.ndarray:
    """``L_w(w, f) = E_d[w (gamma f(s', pi_e) - f(s, a))] + (1 - gamma) E_d0[f(s, pi_e)]``.

    ``f`` is one ``(S, A)`` table or a stack ``(k, S, A)``; returns a scalar
    or a length-``k`` array.
    """
    w = np.asarray(w, dtype=float)
    f = np.asarray(f, dtype=float)
    f_pi = np.sum(f * pi_e.probs, axis=-1)  # (..., S)
    next_f = np.einsum("sat,...t->...sa", mdp.transition, f_pi)
    body = np.sum(data_dist * w * (mdp.gamma * next_f - f), axis=(-2, -1))
    return body + (1.0 - mdp.gamma) * f_pi @ mdp.d0


def population_q_loss(mdp: TabularMDP, pi_e: Policy, data_dist: np.ndarray, q, g) -> np.ndarray:
    """``L_q(q, g) = E_d[g (r + gamma q(s', pi_e) - q(s, a))]`` for one or a stack of ``g``."""
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    resid = mdp.expected_reward + mdp.gamma * mdp.transition @ state_value(q, pi_e) - q
    return np.sum(data_dist * g * resid, axis=(-2, -1))


def _episode_ratios(eps: EpisodeSet, pi_e: Policy, pi_b: Policy) -> np.ndarray:
    pb = pi_b.probs[eps.states, eps.actions]
    if np.any(pb <= 0):
        raise BehaviorSupportError("behavior policy gives probability 0 to an observed action")
    return np.cumprod(pi_e.probs[eps.states, eps.actions] / pb, axis=1)


def stepwise_is_returns(eps: EpisodeSet, pi_e: Policy, pi_b: Policy, gamma: float) -> np.ndarray:
    """Per-episode ``(1 - gamma) sum_t gamma^t rho_{0:t} r_t``."""
    disc = gamma ** np.arange(eps.horizon)
    return (1.0 - gamma) * np.sum(disc * _episode_ratios(eps, pi_e, pi_b) * eps.rewards, axis=1)


def stepwise_is(eps: EpisodeSet, pi_e: Policy, pi_b: Policy, gamma: float) -> float:
    """Step-wise importance sampling estimate of the normalized return."""
    return float(np.mean(stepwise_is_returns(eps, pi_e, pi_b, gamma)))


def truncation_bias_bound(gamma: float, h: int, r_max: float) -> float:
    """Bound ``gamma^h r_max / (1 - gamma)`` on the ignored tail of the return.

    The normalized tail is at most ``gamma^h r_max``; the looser unnormalized
    bound is kept so the tolerance is conservative.
    """
    return gamma**h * r_max / (1.0 - gamma)


def naive_behavior_value(ds: Dataset) -> float:
    """Mean observed reward; treats the behavior value as the target value."""
    return float(np.mean(ds.r))
