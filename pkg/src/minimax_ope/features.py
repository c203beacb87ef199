"""Feature maps for linear function classes and kernels for RKHS discriminators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import Dataset
from .errors import DegenerateBandwidthError
from .mdp import Policy

KERNEL_KINDS = ("rbf", "linear")
BANDWIDTH_SUBSAMPLE = 2000


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """State-action features stored as a table ``phi[s, a] in R^d``."""

    table: np.ndarray  # (S, A, d)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 3:
            raise ValueError(f"feature table must have shape (S, A, d), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("feature table has non-finite entries")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[2]

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        """Features as an ``(S * A, d)`` matrix in flattened pair order."""
        return self.table.reshape(-1, self.dim)

    def __call__(self, s, a) -> np.ndarray:
        return self.table[s, a]


@dataclass(frozen=True, eq=False)
class StateFeatureMap:
    """State features ``phi[s] in R^d``."""

    table: np.ndarray  # (S, d)

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        if t.ndim != 2:
            raise ValueError(f"state feature table must have shape (S, d), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("feature table has non-finite entries")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, s) -> np.ndarray:
        return self.table[s]


def tabular_features(n_states: int, n_actions: int) -> FeatureMap:
    """One-hot indicators; ``phi(s, a)`` is the unit vector at index ``s * n_actions + a``."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("counts must be positive")
    d = n_states * n_actions
    return FeatureMap(np.eye(d).reshape(n_states, n_actions, d))


def tabular_state_features(n_states: int) -> StateFeatureMap:
    if n_states < 1:
        raise ValueError("n_states must be positive")
    return StateFeatureMap(np.eye(n_states))


def concat_one_hot(n_states: int, n_actions: int) -> FeatureMap:
    """Kernel input ``[e_s, e_a]`` of length ``n_states + n_actions``."""
    t = np.zeros((n_states, n_actions, n_states + n_actions))
    for s in range(n_states):
        t[s, :, s] = 1.0
        t[s, np.arange(n_actions), n_states + np.arange(n_actions)] = 1.0
    return FeatureMap(t)


def feature_expectation_pi(fm: FeatureMap, pi: Policy, s: int) -> np.ndarray:
    """``phi(s, pi) = sum_a pi(a|s) phi(s, a)``."""
    return pi.probs[s] @ fm.table[s]


def policy_features(fm: FeatureMap, pi: Policy) -> np.ndarray:
    """``phi(s, pi)`` for every state, shape ``(S, d)``."""
    if pi.probs.shape != fm.table.shape[:2]:
        raise ValueError(f"policy shape {pi.probs.shape} does not match features {fm.table.shape[:2]}")
    return np.einsum("sa,sad->sd", pi.probs, fm.table)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel on state-action pairs, applied to encoded inputs.

    ``kind="rbf"`` is ``exp(-|x - y|^2 / (2 bandwidth^2))``; ``kind="linear"``
    is ``x . y`` and ignores the bandwidth. ``encoding`` maps each pair to its
    input vector; ``None`` means the concatenated one-hot code.
    """

    kind: str = "rbf"
    bandwidth: float = 1.0
    encoding: FeatureMap | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.kind == "rbf" and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise DegenerateBandwidthError(f"bandwidth must be positive, got {self.bandwidth}")

    def encode(self, n_states: int, n_actions: int) -> FeatureMap:
        enc = self.encoding if self.encoding is not None else concat_one_hot(n_states, n_actions)
        if enc.table.shape[:2] != (n_states, n_actions):
            raise ValueError("kernel encoding does not match the state-action space")
        return enc

    def matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Cross-kernel matrix between rows of ``x`` and rows of ``y``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        if self.kind == "linear":
            return x @ y.T
        d2 = cdist(x, y, "sqeuclidean")
        return np.exp(-d2 / (2.0 * self.bandwidth**2))

    def pair_gram(self, n_states: int, n_actions: int) -> np.ndarray:
        """Kernel over all state-action pairs, ``(S * A, S * A)`` in flattened order."""
        x = self.encode(n_states, n_actions).matrix
        return self.matrix(x, x)


def rbf_eval(kspec: KernelSpec, x, y) -> float:
    """Kernel value at one pair of input vectors."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if kspec.kind == "linear":
        return float(x @ y)
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * kspec.bandwidth**2)))


def gram_matrix(kspec: KernelSpec, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return kspec.matrix(pts, pts)


def median_bandwidth(ds: Dataset, encode: FeatureMap, max_points: int = BANDWIDTH_SUBSAMPLE) -> float:
    """Median pairwise Euclidean distance among the encoded ``(s, a)`` of a dataset.

    Datasets larger than ``max_points`` use an evenly spaced subsample so the
    cost stays bounded and deterministic.
    """
    pts = encode.table[ds.s, ds.a]
    if len(pts) > max_points:
        pts = pts[np.linspace(0, len(pts) - 1, max_points).round().astype(int)]
    if len(pts) < 2:
        raise DegenerateBandwidthError("need at least two points for a median distance")
    h = float(np.median(pdist(pts)))
    if h <= 0:
        raise DegenerateBandwidthError("median pairwise distance is zero (points are identical)")
    return h
