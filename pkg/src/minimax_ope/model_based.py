"""Certainty-equivalence baseline: fit the empirical MDP, then evaluate it exactly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, sufficient_stats
from .mdp import Policy, TabularMDP, true_return


@dataclass(frozen=True, eq=False)
class EmpiricalMDP:
    """Maximum-likelihood MDP with its visit counts.

    Unvisited pairs have no data; they are given a self-loop with reward 0
    and listed in :attr:`unvisited`.
    """

    mdp: TabularMDP
    visit_counts: np.ndarray  # (S, A)

    @property
    def unvisited(self) -> np.ndarray:
        return self.visit_counts == 0


def fit_empirical_mdp(ds: Dataset, n_states: int, n_actions: int, gamma: float, d0) -> EmpiricalMDP:
    st = sufficient_stats(ds, n_states, n_actions)
    visits = st.pair_counts
    seen = visits > 0
    P = np.zeros_like(st.counts)
    P[seen] = st.counts[seen] / visits[seen][:, None]
    for s, a in np.argwhere(~seen):
        P[s, a, s] = 1.0
    R = np.zeros((n_states, n_actions))
    R[seen] = st.reward_sum[seen] / visits[seen]
    r_max = max(1.0, float(R.max()))
    mdp = TabularMDP(P, R, np.zeros_like(R), gamma, d0, r_max)
    return EmpiricalMDP(mdp, visits)


def model_based_estimate(emdp: EmpiricalMDP, pi_e: Policy) -> float:
    """Return of ``pi_e`` in the empirical MDP."""
    return true_return(emdp.mdp, pi_e)
