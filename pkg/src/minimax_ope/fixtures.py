"""Named MDP fixtures, random instance generators and policy builders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mdp import Policy, TabularMDP, optimal_q, solve_q


@dataclass(frozen=True, eq=False)
class Fixture:
    """An MDP bundled with its default evaluation and behavior policies."""

    name: str
    mdp: TabularMDP
    pi_e: Policy
    pi_b: Policy


def softmax_policy(q: np.ndarray, temperature: float) -> Policy:
    """``pi(a|s) proportional to exp(Q(s,a) / temperature)``."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(q, dtype=float) / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return Policy(e / e.sum(axis=1, keepdims=True))


def m1() -> Fixture:
    """One state, one action, deterministic reward 1, gamma 0.9."""
    mdp = TabularMDP(
        transition=np.ones((1, 1, 1)),
        reward_mean=np.ones((1, 1)),
        reward_noise_std=np.zeros((1, 1)),
        gamma=0.9,
        d0=np.ones(1),
        r_max=1.0,
    )
    pi = Policy(np.ones((1, 1)))
    return Fixture("m1", mdp, pi, pi)


def chain2() -> Fixture:
    """Two states, two actions.

    Action 0 stays put with probability 0.9 (else swaps), action 1 swaps with
    probability 0.9 (else stays). Mean reward ``0.2 + 0.5 s + 0.3 a`` with
    noise std 0.1, gamma 0.9, start in state 0. Behavior is uniform; the
    evaluation policy picks action 1 with probability 0.8.
    """
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, 0, s], P[s, 0, 1 - s] = 0.9, 0.1
        P[s, 1, 1 - s], P[s, 1, s] = 0.9, 0.1
    R = np.array([[0.2 + 0.5 * s + 0.3 * a for a in range(2)] for s in range(2)])
    mdp = TabularMDP(
        transition=P,
        reward_mean=R,
        reward_noise_std=np.full((2, 2), 0.1),
        gamma=0.9,
        d0=np.array([1.0, 0.0]),
        r_max=2.0,
    )
    pi_e = Policy(np.array([[0.2, 0.8], [0.2, 0.8]]))
    return Fixture("chain2", mdp, pi_e, Policy.uniform(2, 2))


# MiniTaxi layout: 5x5 grid, pickup at the top-left corner, dropoff at the
# bottom-right corner. Actions: north, south, east, west, interact.
TAXI_SIZE = 5
TAXI_PICKUP = (0, 0)
TAXI_DROPOFF = (TAXI_SIZE - 1, TAXI_SIZE - 1)
TAXI_SLIP = 0.1
_MOVES = ((-1, 0), (1, 0), (0, 1), (0, -1))


def taxi_state(row: int, col: int, carrying: bool) -> int:
    return int(carrying) * TAXI_SIZE * TAXI_SIZE + row * TAXI_SIZE + col


def mini_taxi_mdp(gamma: float = 0.95, noise_std: float = 0.02, slip: float = TAXI_SLIP) -> TabularMDP:
    """Desk-scale taxi gridworld with 50 states and 5 actions.

    Moves succeed with probability ``1 - slip`` and otherwise go in a
    uniformly random direction; walls block. Rewards are the classic taxi rewards rescaled to
    ``[0, 1]``: 0.3 per ordinary step, 0 for an illegal interact and 1 for a
    delivery, after which the taxi reappears empty in a uniformly random cell.
    """
    n = TAXI_SIZE
    S, A = 2 * n * n, 5
    P = np.zeros((S, A, S))
    R = np.full((S, A), 0.3)
    for carrying in (False, True):
        for row in range(n):
            for col in range(n):
                s = taxi_state(row, col, carrying)
                for a, _ in enumerate(_MOVES):
                    for k, (dr, dc) in enumerate(_MOVES):
                        p = (1 - slip) * (k == a) + slip / len(_MOVES)
                        r2 = min(max(row + dr, 0), n - 1)
                        c2 = min(max(col + dc, 0), n - 1)
                        P[s, a, taxi_state(r2, c2, carrying)] += p
                if not carrying and (row, col) == TAXI_PICKUP:
                    P[s, 4, taxi_state(row, col, True)] = 1.0
                elif carrying and (row, col) == TAXI_DROPOFF:
                    P[s, 4, : n * n] = 1.0 / (n * n)
                    R[s, 4] = 1.0
                else:
                    P[s, 4, s] = 1.0
                    R[s, 4] = 0.0
    d0 = np.zeros(S)
    d0[: n * n] = 1.0 / (n * n)
    return TabularMDP(P, R, np.full((S, A), noise_std), gamma, d0, 1.0)


def mini_taxi(
    alpha: float = 0.2, target_temperature: float = 0.1, plus_temperature: float = 1.0
) -> Fixture:
    """MiniTaxi with softmax policies over the optimal Q-function.

    The evaluation policy is a sharp softmax; the weaker policy ``pi_+`` is a
    flatter one, and behavior is ``alpha * pi_e + (1 - alpha) * pi_+``.
    """
    mdp = mini_taxi_mdp()
    q_star = optimal_q(mdp)
    pi_e = softmax_policy(q_star, target_temperature)
    pi_plus = softmax_policy(q_star, plus_temperature)
    return Fixture("minitaxi", mdp, pi_e, pi_e.mix(pi_plus, alpha))


FIXTURES = {"m1": m1, "chain2": chain2, "minitaxi": mini_taxi}


def get_fixture(name: str, **kwargs) -> Fixture:
    try:
        factory = FIXTURES[name.lower()]
    except KeyError:
        raise ConfigError(f"unknown fixture {name!r}; known: {sorted(FIXTURES)}", "mdp_source") from None
    return factory(**kwargs)


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float | None = None,
    noise_std: float = 0.0,
    r_max: float = 1.0,
    concentration: float = 1.0,
) -> TabularMDP:
    """Dense random MDP with Dirichlet transitions and uniform mean rewards."""
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    d0 = rng.dirichlet(np.ones(n_states))
    if gamma is None:
        gamma = float(rng.uniform(0.0, 0.99))
    return TabularMDP(P, R, np.full((n_states, n_actions), noise_std), gamma, d0, r_max)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> Policy:
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def uniform_q_policy(mdp: TabularMDP, temperature: float) -> Policy:
    """Softmax over the Q-function of the uniform policy."""
    return softmax_policy(solve_q(mdp, Policy.uniform(mdp.n_states, mdp.n_actions)), temperature)
