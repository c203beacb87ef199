"""Dataset containers and samplers for the two off-policy data protocols.

Random streams
--------------
Every sampler uses ``numpy.random.Generator(numpy.random.Philox(seed))``.
Philox is counter based, so a stream is fully determined by the seed and the
order of draws. The draw-order contract is:

* ``sample_iid`` draws a ``(n, 4)`` block of uniforms; row ``i`` drives tuple
  ``i`` with columns (state, action, reward, next state).
* ``sample_trajectory`` draws a ``(horizon, 4)`` block with the same column
  layout; the state column is used only at ``t = 0`` since later states are
  the previous next state.
* ``sample_episodes`` draws a ``(h, n_episodes, 4)`` block; column 0 picks
  the initial state at ``t = 0`` and is unused afterwards.

Categorical draws use the inverse CDF of the relevant probability row.
Rewards are ``clip(mean + std * Phi^{-1}(u), 0, r_max)``.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from scipy.special import ndtri

from .errors import EmptyDatasetError, InvalidMDPError
from .mdp import Policy, TabularMDP, stationary_distribution

IID = "iid_stationary"
TRAJECTORY = "single_trajectory"
MODES = (IID, TRAJECTORY)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Transition tuples ``(s, a, r, s')`` stored column-wise, plus provenance."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    mode: str = IID
    seed: int | None = None
    source_dist: np.ndarray | None = None

    def __post_init__(self):
        cols = {
            "s": np.array(self.s, dtype=np.int64).reshape(-1),
            "a": np.array(self.a, dtype=np.int64).reshape(-1),
            "r": np.array(self.r, dtype=float).reshape(-1),
            "s_next": np.array(self.s_next, dtype=np.int64).reshape(-1),
        }
        n = len(cols["s"])
        if n == 0:
            raise EmptyDatasetError("dataset must contain at least one transition")
        if any(len(c) != n for c in cols.values()):
            raise ValueError("dataset columns must have equal length")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name, value in cols.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.source_dist is not None:
            src = np.array(self.source_dist, dtype=float)
            src.setflags(write=False)
            object.__setattr__(self, "source_dist", src)

    def __len__(self) -> int:
        return len(self.s)

    @property
    def n(self) -> int:
        return len(self.s)

    def __iter__(self) -> Iterator[Transition]:
        for i in range(self.n):
            yield Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]), int(self.s_next[i]))

    @property
    def transitions(self) -> list[Transition]:
        return list(self)

    @classmethod
    def from_transitions(cls, transitions, **kwargs) -> "Dataset":
        rows = list(transitions)
        if not rows:
            raise EmptyDatasetError("dataset must contain at least one transition")
        s, a, r, s_next = zip(*rows)
        return cls(s, a, r, s_next, **kwargs)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
            mode=self.mode, seed=self.seed, source_dist=self.source_dist,
        )

    def check_shape(self, n_states: int, n_actions: int) -> None:
        """Raise ``ValueError`` if any id falls outside the given ranges."""
        for name, col, hi in (("s", self.s, n_states), ("a", self.a, n_actions), ("s_next", self.s_next, n_states)):
            if col.min() < 0 or col.max() >= hi:
                raise ValueError(f"column {name} has ids outside [0, {hi})")


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Counts that every tabular estimator reduces a dataset to."""

    counts: np.ndarray  # (S, A, S) transition counts
    reward_sum: np.ndarray  # (S, A)
    n: int

    @property
    def pair_counts(self) -> np.ndarray:
        return self.counts.sum(axis=2)


def sufficient_stats(ds: Dataset, n_states: int, n_actions: int) -> SufficientStats:
    ds.check_shape(n_states, n_actions)
    S, A = n_states, n_actions
    flat = (ds.s * A + ds.a) * S + ds.s_next
    counts = np.bincount(flat, minlength=S * A * S).reshape(S, A, S).astype(float)
    reward_sum = np.bincount(ds.s * A + ds.a, weights=ds.r, minlength=S * A).reshape(S, A)
    return SufficientStats(counts, reward_sum, ds.n)


@dataclass(frozen=True, eq=False)
class EpisodeSet:
    """Fixed-horizon episodes; arrays have shape ``(n_episodes, horizon)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    seed: int | None = None

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]


def _inverse_cdf(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws: ``cum`` is ``(n, K)`` cumulative rows."""
    return np.minimum(np.sum(cum <= u[:, None], axis=1), cum.shape[1] - 1)


def _cumulative(p: np.ndarray) -> np.ndarray:
    cum = np.cumsum(p, axis=-1)
    cum[..., -1] = 1.0  # uniforms are < 1, so the last category always catches roundoff
    return cum


def _rewards(mdp: TabularMDP, s, a, u) -> np.ndarray:
    mean = mdp.reward_mean[s, a]
    std = mdp.reward_noise_std[s, a]
    noise = np.zeros_like(mean)
    noisy = std > 0
    noise[noisy] = std[noisy] * ndtri(u[noisy])
    return np.clip(mean + noise, 0.0, mdp.r_max)


def _check_policy(mdp: TabularMDP, pi: Policy) -> None:
    if pi.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidMDPError(f"policy shape {pi.probs.shape} does not match MDP")


def _check_count(value: int, name: str) -> int:
    value = int(value)
    if value <= 0:
        raise EmptyDatasetError(f"{name} must be positive, got {value}")
    return value


def sample_iid(mdp: TabularMDP, pi_b: Policy, n: int, seed: int) -> Dataset:
    """Draw ``n`` independent tuples with ``(s, a)`` from the stationary distribution of ``pi_b``."""
    n = _check_count(n, "n")
    _check_policy(mdp, pi_b)
    source = stationary_distribution(mdp, pi_b)
    u = make_rng(seed).random((n, 4))
    mu_cum = _cumulative(source.sum(axis=1))
    s = np.minimum(np.searchsorted(mu_cum, u[:, 0], side="right"), mdp.n_states - 1)
    a = _inverse_cdf(_cumulative(pi_b.probs)[s], u[:, 1])
    r = _rewards(mdp, s, a, u[:, 2])
    s_next = _inverse_cdf(_cumulative(mdp.transition)[s, a], u[:, 3])
    return Dataset(s, a, r, s_next, mode=IID, seed=int(seed), source_dist=source)


def sample_trajectory(mdp: TabularMDP, pi_b: Policy, horizon: int, seed: int) -> Dataset:
    """One trajectory of ``horizon`` consecutive tuples started from stationarity."""
    horizon = _check_count(horizon, "horizon")
    _check_policy(mdp, pi_b)
    source = stationary_distribution(mdp, pi_b)
    u = make_rng(seed).random((horizon, 4))
    mu_cum = _cumulative(source.sum(axis=1)).tolist()
    pi_cum = _cumulative(pi_b.probs).tolist()
    p_cum = _cumulative(mdp.transition).tolist()
    S, A = mdp.n_states, mdp.n_actions
    s_col = np.empty(horizon, dtype=np.int64)
    a_col = np.empty(horizon, dtype=np.int64)
    n_col = np.empty(horizon, dtype=np.int64)
    ua, un = u[:, 1].tolist(), u[:, 3].tolist()
    s = min(bisect.bisect_right(mu_cum, u[0, 0]), S - 1)
    for t in range(horizon):
        a = min(bisect.bisect_right(pi_cum[s], ua[t]), A - 1)
        s2 = min(bisect.bisect_right(p_cum[s][a], un[t]), S - 1)
        s_col[t], a_col[t], n_col[t] = s, a, s2
        s = s2
    r = _rewards(mdp, s_col, a_col, u[:, 2])
    return Dataset(s_col, a_col, r, n_col, mode=TRAJECTORY, seed=int(seed), source_dist=source)


def sample_episodes(mdp: TabularMDP, pi_b: Policy, n_episodes: int, h: int, seed: int) -> EpisodeSet:
    """``n_episodes`` independent episodes of length ``h`` started from ``d0``."""
    n_episodes = _check_count(n_episodes, "n_episodes")
    h = _check_count(h, "h")
    _check_policy(mdp, pi_b)
    u = make_rng(seed).random((h, n_episodes, 4))
    pi_cum = _cumulative(pi_b.probs)
    p_cum = _cumulative(mdp.transition)
    shape = (n_episodes, h)
    states = np.empty(shape, dtype=np.int64)
    actions = np.empty(shape, dtype=np.int64)
    rewards = np.empty(shape)
    nxt = np.empty(shape, dtype=np.int64)
    s = np.minimum(np.searchsorted(_cumulative(mdp.d0), u[0, :, 0], side="right"), mdp.n_states - 1)
    for t in range(h):
        a = _inverse_cdf(pi_cum[s], u[t, :, 1])
        rewards[:, t] = _rewards(mdp, s, a, u[t, :, 2])
        s2 = _inverse_cdf(p_cum[s, a], u[t, :, 3])
        states[:, t], actions[:, t], nxt[:, t] = s, a, s2
        s = s2
    return EpisodeSet(states, actions, rewards, nxt, seed=int(seed))


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``s,a,r,s_next`` CSV plus a ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("s,a,r,s_next\n")
        for s, a, r, s2 in zip(ds.s.tolist(), ds.a.tolist(), ds.r.tolist(), ds.s_next.tolist()):
            fh.write(f"{s},{a},{r:.17g},{s2}\n")
    meta = {
        "mode": ds.mode,
        "seed": ds.seed,
        "n": ds.n,
        "source_dist": None if ds.source_dist is None else ds.source_dist.tolist(),
    }
    meta_path = _meta_path(path)
    meta_path.write_text(json.dumps(meta, indent=2))
    return meta_path


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if header != ["s", "a", "r", "s_next"]:
        raise ValueError(f"{path}: expected header s,a,r,s_next, got {','.join(header)}")
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if raw.shape[0] == 0:
        raise EmptyDatasetError(f"{path} has no rows")
    meta_path = _meta_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    src = meta.get("source_dist")
    return Dataset(
        raw[:, 0].astype(np.int64),
        raw[:, 1].astype(np.int64),
        raw[:, 2],
        raw[:, 3].astype(np.int64),
        mode=meta.get("mode", IID),
        seed=meta.get("seed"),
        source_dist=None if src is None else np.asarray(src),
    )
