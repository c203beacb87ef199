"""Finite discounted MDPs and exact policy-evaluation oracles.

State-action pairs are flattened as ``s * n_actions + a`` everywhere in the
package, matching the column order of :func:`minimax_ope.features.tabular_features`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import (
    CoverageError,
    ErgodicityError,
    InternalError,
    InvalidMDPError,
    InvalidPolicyError,
)

PROB_ATOL = 1e-12


def clipped_normal_moments(mean, std, lo, hi):
    """Mean and variance of ``clip(mean + std * Z, lo, hi)`` for standard normal Z.

    Works elementwise on arrays. ``std == 0`` gives the clipped point mass.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    out_mean = np.array(np.clip(mean, lo, hi), dtype=float)
    out_var = np.zeros_like(out_mean)
    noisy = std > 0
    if np.any(noisy):
        m, s = mean[noisy], std[noisy]
        a = (lo - m) / s
        b = (hi - m) / s
        Fa, Fb = norm.cdf(a), norm.cdf(b)
        fa, fb = norm.pdf(a), norm.pdf(b)
        mid = Fb - Fa
        upper = norm.sf(b)
        lower = Fa
        e1 = lo * lower + hi * upper + m * mid + s * (fa - fb)
        e2 = (
            lo**2 * lower
            + hi**2 * upper
            + (m**2 + s**2) * mid
            + 2 * m * s * (fa - fb)
            + s**2 * (a * fa - b * fb)
        )
        out_mean[noisy] = e1
        out_var[noisy] = np.maximum(e2 - e1**2, 0.0)
    return out_mean, out_var


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP with Gaussian rewards clipped to ``[0, r_max]``.

    ``reward_mean`` and ``reward_noise_std`` parametrize the Gaussian before
    clipping. The oracles use :attr:`expected_reward` and
    :attr:`reward_variance`, the exact moments after clipping, so that they
    describe the rewards the samplers actually emit.
    """

    transition: np.ndarray  # (S, A, S)
    reward_mean: np.ndarray  # (S, A)
    reward_noise_std: np.ndarray  # (S, A)
    gamma: float
    d0: np.ndarray  # (S,)
    r_max: float
    expected_reward: np.ndarray = field(init=False, repr=False, compare=False)
    reward_variance: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InvalidMDPError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise InvalidMDPError("need at least one state and one action")
        R = np.array(self.reward_mean, dtype=float)
        sig = np.broadcast_to(np.array(self.reward_noise_std, dtype=float), (S, A)).copy()
        d0 = np.array(self.d0, dtype=float)
        if R.shape != (S, A):
            raise InvalidMDPError(f"reward_mean must have shape {(S, A)}, got {R.shape}")
        if d0.shape != (S,):
            raise InvalidMDPError(f"d0 must have shape {(S,)}, got {d0.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > PROB_ATOL):
            raise InvalidMDPError("every transition row must be a probability vector")
        if np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_ATOL:
            raise InvalidMDPError("d0 must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidMDPError(f"gamma must lie in [0, 1), got {self.gamma}")
        r_max = float(self.r_max)
        if not r_max > 0:
            raise InvalidMDPError("r_max must be positive")
        if np.any(R < 0) or np.any(R > r_max):
            raise InvalidMDPError("reward_mean must lie in [0, r_max]")
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise InvalidMDPError("reward_noise_std must be finite and non-negative")
        mean, var = clipped_normal_moments(R, sig, 0.0, r_max)
        for name, value in (
            ("transition", P),
            ("reward_mean", R),
            ("reward_noise_std", sig),
            ("d0", d0),
            ("expected_reward", mean),
            ("reward_variance", var),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def replace(self, **changes) -> "TabularMDP":
        kw = dict(
            transition=self.transition,
            reward_mean=self.reward_mean,
            reward_noise_std=self.reward_noise_std,
            gamma=self.gamma,
            d0=self.d0,
            r_max=self.r_max,
        )
        kw.update(changes)
        return TabularMDP(**kw)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward_mean": self.reward_mean.tolist(),
            "reward_noise_std": self.reward_noise_std.tolist(),
            "gamma": self.gamma,
            "d0": self.d0.tolist(),
            "r_max": self.r_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMDP":
        try:
            mdp = cls(
                transition=data["transition"],
                reward_mean=data["reward_mean"],
                reward_noise_std=data["reward_noise_std"],
                gamma=data["gamma"],
                d0=data["d0"],
                r_max=data["r_max"],
            )
        except KeyError as exc:
            raise InvalidMDPError(f"missing MDP field {exc.args[0]!r}") from None
        for key, actual in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
            if key in data and int(data[key]) != actual:
                raise InvalidMDPError(f"{key}={data[key]} disagrees with array shapes ({actual})")
        return mdp


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2))


def load_mdp(path) -> TabularMDP:
    return TabularMDP.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Policy:
    """Stochastic policy as a table ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise InvalidPolicyError(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > PROB_ATOL):
            raise InvalidPolicyError("each policy row must be a probability vector")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)

    def mix(self, other: "Policy", alpha: float) -> "Policy":
        """``alpha * self + (1 - alpha) * other``."""
        return Policy(alpha * self.probs + (1.0 - alpha) * other.probs)


def _check_pair(mdp: TabularMDP, pi: Policy) -> None:
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidPolicyError(
            f"policy shape {pi.probs.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}"
        )


def pair_transition_matrix(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``P_pi[(s,a), (s',a')] = P(s'|s,a) * pi(a'|s')`` as an (SA, SA) matrix."""
    _check_pair(mdp, pi)
    S, A = mdp.n_states, mdp.n_actions
    return (mdp.transition[:, :, :, None] * pi.probs[None, None, :, :]).reshape(S * A, S * A)


def state_transition_matrix(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)``."""
    _check_pair(mdp, pi)
    return np.einsum("sa,sat->st", pi.probs, mdp.transition)


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise InternalError(f"policy-evaluation system is singular: {exc}") from None


def solve_q(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """Exact ``Q^pi`` as an (S, A) table from ``(I - gamma P_pi) Q = E[r|s,a]``."""
    S, A = mdp.n_states, mdp.n_actions
    M = np.eye(S * A) - mdp.gamma * pair_transition_matrix(mdp, pi)
    return _solve(M, mdp.expected_reward.reshape(-1)).reshape(S, A)


def state_value(q: np.ndarray, pi: Policy) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != pi.probs.shape:
        raise InvalidPolicyError(f"Q shape {q.shape} does not match policy {pi.probs.shape}")
    return np.sum(pi.probs * q, axis=1)


def bellman_residual(mdp: TabularMDP, pi: Policy, q: np.ndarray) -> np.ndarray:
    """``E[r|s,a] + gamma E[q(s', pi)] - q(s,a)``; zero exactly at ``Q^pi``."""
    v = state_value(q, pi)
    return mdp.expected_reward + mdp.gamma * mdp.transition @ v - q


def initial_pair_distribution(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """``d0(s) pi(a|s)`` as an (S, A) table."""
    _check_pair(mdp, pi)
    return mdp.d0[:, None] * pi.probs


def discounted_occupancy(mdp: TabularMDP, pi: Policy) -> np.ndarray:
    """Normalized discounted state-action occupancy as an (S, A) table.

    Solved in row-vector form ``d (I - gamma P_pi) = (1 - gamma) d0 x pi``.
    """
    S, A = mdp.n_states, mdp.n_actions
    M = np.eye(S * A) - mdp.gamma * pair_transition_matrix(mdp, pi)
    rhs = (1.0 - mdp.gamma) * initial_pair_distribution(mdp, pi).reshape(-1)
    d = _solve(M.T, rhs).reshape(S, A)
    # roundoff can leave -1e-17 entries on unreachable pairs
    return np.where(np.abs(d) < 1e-15, 0.0, d)


def occupancy_residual(mdp: TabularMDP, pi: Policy, d: np.ndarray) -> np.ndarray:
    """Fixed-point residual of ``d(s',a') = (1-g) d0(s') pi(a'|s') + g sum P(s'|s,a) pi(a'|s') d(s,a)``."""
    inflow = np.einsum("sa,sat->t", d, mdp.transition)[:, None] * pi.probs
    return (1.0 - mdp.gamma) * initial_pair_distribution(mdp, pi) + mdp.gamma * inflow - d


def true_return(mdp: TabularMDP, pi: Policy, atol: float = 1e-10) -> float:
    """Normalized discounted return, cross-checked through two identities.

    The occupancy route ``sum d(s,a) E[r|s,a]`` and the value route
    ``(1 - gamma) d0 . V`` must agree to ``atol`` (scaled by the magnitude of
    the return); a mismatch raises :class:`InternalError`.
    """
    via_occupancy = float(np.sum(discounted_occupancy(mdp, pi) * mdp.expected_reward))
    via_value = float((1.0 - mdp.gamma) * mdp.d0 @ state_value(solve_q(mdp, pi), pi))
    if abs(via_occupancy - via_value) > atol * max(1.0, abs(via_value)):
        raise InternalError(
            f"return identities disagree: occupancy {via_occupancy!r} vs value {via_value!r}"
        )
    return via_value


def stationary_state_distribution(
    mdp: TabularMDP, pi: Policy, max_iters: int = 100_000, tol: float = 1e-12
) -> np.ndarray:
    """Stationary distribution over states of the chain induced by ``pi``.

    Power iteration from the uniform distribution, stopping when successive
    iterates differ by less than ``tol`` in L1. Raises
    :class:`ErgodicityError` on non-convergence (periodic chains) or when the
    stationary distribution is not unique (reducible chains).
    """
    Ps = state_transition_matrix(mdp, pi)
    S = Ps.shape[0]
    mu = np.full(S, 1.0 / S)
    for _ in range(max_iters):
        nxt = mu @ Ps
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise ErgodicityError(f"power iteration did not converge in {max_iters} iterations")
    # a unique stationary distribution needs eigenvalue 1 to be simple
    sv = np.linalg.svd(np.eye(S) - Ps, compute_uv=False)
    if S > 1 and sv[-2] < 1e-10:
        raise ErgodicityError("induced chain is reducible: stationary distribution is not unique")
    mu = np.where(mu < 1e-300, 0.0, mu)
    return mu / mu.sum()


def stationary_distribution(mdp: TabularMDP, pi: Policy, **kwargs) -> np.ndarray:
    """Stationary state-action distribution ``mu(s) pi(a|s)`` as an (S, A) table."""
    return stationary_state_distribution(mdp, pi, **kwargs)[:, None] * pi.probs


def true_weight(mdp: TabularMDP, pi_e: Policy, data_dist: np.ndarray) -> np.ndarray:
    """Marginalized importance weight ``d_{pi_e,gamma}(s,a) / data_dist(s,a)``.

    Pairs where both are zero get weight 0. Positive occupancy over zero data
    mass raises :class:`CoverageError`.
    """
    data_dist = np.asarray(data_dist, dtype=float)
    d_e = discounted_occupancy(mdp, pi_e)
    if data_dist.shape != d_e.shape:
        raise InvalidPolicyError(f"data_dist shape {data_dist.shape} != {d_e.shape}")
    uncovered = (data_dist <= 0) & (d_e > 0)
    if np.any(uncovered):
        pairs = [tuple(map(int, p)) for p in np.argwhere(uncovered)]
        raise CoverageError(f"target occupancy is positive on uncovered pairs {pairs}")
    out = np.zeros_like(d_e)
    np.divide(d_e, data_dist, out=out, where=data_dist > 0)
    return out


def optimal_q(mdp: TabularMDP, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Optimal action values by value iteration (used to build fixture policies)."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iters):
        nxt = mdp.expected_reward + mdp.gamma * mdp.transition @ q.max(axis=1)
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    return q
