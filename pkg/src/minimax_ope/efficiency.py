"""Exact asymptotic variances: the efficiency bound and the MSWL / MVL variances.

Reward moments are the exact moments of the clipped Gaussian reward, so the
formulas describe the data the samplers produce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError
from .mdp import Policy, TabularMDP, discounted_occupancy, solve_q, state_value, true_weight

ORDER_SLACK = 1e-10


@dataclass(frozen=True)
class VarianceReport:
    semiparametric_lb: float
    mswl_var: float
    mvl_var: float

    def __post_init__(self):
        for name in ("mswl_var", "mvl_var"):
            if getattr(self, name) < self.semiparametric_lb - ORDER_SLACK * max(1.0, self.semiparametric_lb):
                raise ArithmeticError(f"{name} is below the lower bound")

    def to_dict(self) -> dict:
        return {"semiparametric_lb": self.semiparametric_lb, "mswl_var": self.mswl_var, "mvl_var": self.mvl_var}


def semiparametric_variance(mdp: TabularMDP, pi_e: Policy, data_dist: np.ndarray) -> float:
    """``E_d[w^2 (r + gamma V(s') - Q(s, a))^2]`` summed exactly over ``(s, a, s')``."""
    w = true_weight(mdp, pi_e, data_dist)
    Q = solve_q(mdp, pi_e)
    V = state_value(Q, pi_e)
    resid = mdp.expected_reward[:, :, None] + mdp.gamma * V[None, None, :] - Q[:, :, None]
    second = mdp.reward_variance + np.sum(mdp.transition * resid**2, axis=2)
    return float(np.sum(data_dist * w**2 * second))


def _state_setup(mdp: TabularMDP, pi_e: Policy, pi_b: Policy, data_dist: np.ndarray):
    d_b = np.asarray(data_dist, dtype=float).sum(axis=1)
    d_e = discounted_occupancy(mdp, pi_e).sum(axis=1)
    if np.any((d_b <= 0) & (d_e > 0)):
        raise CoverageError("target state occupancy is positive where the data has no mass")
    if np.any((pi_b.probs <= 0) & (pi_e.probs > 0) & (d_b[:, None] > 0)):
        raise CoverageError("target policy takes an action the behavior policy never takes")
    rho = np.zeros_like(pi_e.probs)
    np.divide(pi_e.probs, pi_b.probs, out=rho, where=pi_b.probs > 0)
    ratio2 = np.zeros_like(d_b)
    np.divide(d_e**2, d_b, out=ratio2, where=d_b > 0)
    Q = solve_q(mdp, pi_e)
    return rho, ratio2, state_value(Q, pi_e)


def _weighted_conditional_variance(mdp, pi_b, rho, ratio2, target) -> float:
    """``sum_s d_e(s)^2 / d_b(s) * Var[rho (r + target(s, s')) | s]`` with ``a ~ pi_b``."""
    mean_inner = mdp.expected_reward[:, :, None] + target  # (S, A, S')
    first = np.sum(mdp.transition * mean_inner, axis=2)
    second = mdp.reward_variance + np.sum(mdp.transition * mean_inner**2, axis=2)
    m1 = np.sum(pi_b.probs * rho * first, axis=1)
    m2 = np.sum(pi_b.probs * rho**2 * second, axis=1)
    return float(np.sum(ratio2 * np.maximum(m2 - m1**2, 0.0)))


def mswl_asymptotic_variance(mdp: TabularMDP, pi_e: Policy, pi_b: Policy, data_dist: np.ndarray) -> float:
    """``E_s[(d_e/d_b)^2 Var[rho (r + gamma V(s') - V(s)) | s]]`` with state marginal of ``data_dist``."""
    rho, ratio2, V = _state_setup(mdp, pi_e, pi_b, data_dist)
    target = mdp.gamma * V[None, None, :] - V[:, None, None]
    return _weighted_conditional_variance(mdp, pi_b, rho, ratio2, target)


def mvl_asymptotic_variance(mdp: TabularMDP, pi_e: Policy, pi_b: Policy, data_dist: np.ndarray) -> float:
    """``E_s[(d_e/d_b)^2 Var[rho (r + gamma V(s')) | s]]``."""
    rho, ratio2, V = _state_setup(mdp, pi_e, pi_b, data_dist)
    target = np.broadcast_to(mdp.gamma * V[None, None, :], mdp.transition.shape)
    return _weighted_conditional_variance(mdp, pi_b, rho, ratio2, target)


def variance_report(mdp: TabularMDP, pi_e: Policy, pi_b: Policy, data_dist: np.ndarray) -> VarianceReport:
    return VarianceReport(
        semiparametric_variance(mdp, pi_e, data_dist),
        mswl_asymptotic_variance(mdp, pi_e, pi_b, data_dist),
        mvl_asymptotic_variance(mdp, pi_e, pi_b, data_dist),
    )
