"""Closed-form linear-class estimators.

With ``w = phi^T alpha`` and discriminators ``f = phi^T beta`` the weight
loss ``E_n[w (gamma f(s', pi_e) - f(s, a))] + (1 - gamma) E_d0[f(s, pi_e)]``
vanishes for every ``beta`` iff ``M^T alpha = b`` with

    M = E_n[phi(s, a) (phi(s, a) - gamma phi(s', pi_e))^T]
    b = (1 - gamma) E_d0[phi(s, pi_e)]

and the Q-function loss vanishes iff ``M beta = c`` with ``c = E_n[r phi]``.
Both estimates equal ``b^T M^{-1} c`` (LSTDQ). ``M``, ``b`` and ``c`` are
built from transition counts, so the cost is independent of ``n`` once the
dataset is tallied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, sufficient_stats
from .errors import BehaviorSupportError, SingularMatrixError
from .features import FeatureMap, StateFeatureMap, policy_features
from .mdp import Policy

COND_LIMIT = 1e12
FALLBACK_RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class LinearFitReport:
    """Fitted parameters and diagnostics of a closed-form estimator."""

    method: str
    alpha: np.ndarray
    estimate: float
    matrix_cond: float
    ridge_used: float
    flags: tuple[str, ...] = ()
    unvisited: tuple[tuple[int, int], ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "estimate": self.estimate,
            "alpha": self.alpha.tolist(),
            "matrix_cond": self.matrix_cond,
            "ridge_used": self.ridge_used,
            "flags": list(self.flags),
            "unvisited": [list(p) for p in self.unvisited],
        }


def solve_regularized(matrix: np.ndarray, rhs: np.ndarray, ridge: float | None):
    """Solve ``(matrix + ridge I) x = rhs`` under the package ridge policy.

    ``ridge=None`` solves exactly unless the condition number exceeds
    ``COND_LIMIT``, in which case ``FALLBACK_RIDGE`` is added and the flag
    ``"ridge_fallback"`` is returned. An explicit ``ridge=0`` raises
    :class:`SingularMatrixError` instead of falling back.

    Returns ``(x, cond, ridge_used, flags)``.
    """
    cond = float(np.linalg.cond(matrix)) if matrix.size else 1.0
    flags: list[str] = []
    if ridge is None:
        ridge_used = 0.0
        if not cond <= COND_LIMIT:
            ridge_used = FALLBACK_RIDGE
            flags.append("ridge_fallback")
    else:
        ridge_used = float(ridge)
        if ridge_used < 0:
            raise ValueError("ridge must be non-negative")
        if ridge_used == 0.0 and not cond <= COND_LIMIT:
            raise SingularMatrixError(f"matrix condition number {cond:.3g} exceeds {COND_LIMIT:.0e}")
    system = matrix + ridge_used * np.eye(matrix.shape[0]) if ridge_used else matrix
    try:
        x = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"regularized system is singular: {exc}") from None
    return x, cond, ridge_used, tuple(flags)


@dataclass(frozen=True, eq=False)
class LinearMoments:
    """The empirical moment matrices shared by MWL and MQL."""

    M: np.ndarray
    b: np.ndarray
    c: np.ndarray
    unvisited: tuple[tuple[int, int], ...]


def linear_moments(ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float) -> LinearMoments:
    S, A = fm.n_states, fm.n_actions
    st = sufficient_stats(ds, S, A)
    phi = fm.matrix  # (SA, d)
    phi_pi = policy_features(fm, pi_e)  # (S, d)
    n_sa = st.pair_counts.reshape(-1) / st.n
    flow = st.counts.reshape(S * A, S) / st.n
    M = phi.T @ (n_sa[:, None] * phi) - gamma * phi.T @ (flow @ phi_pi)
    b = (1.0 - gamma) * np.asarray(d0, dtype=float) @ phi_pi
    c = phi.T @ (st.reward_sum.reshape(-1) / st.n)
    unvisited = tuple((int(s), int(a)) for s, a in np.argwhere(st.pair_counts == 0))
    return LinearMoments(M, b, c, unvisited)


def mwl_linear(
    ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, ridge: float | None = None
) -> LinearFitReport:
    """Minimax weight learning with linear weights and linear discriminators.

    Solves ``(M^T + ridge I) alpha = b``; the estimate is ``E_n[r phi^T] alpha``
    and the fitted weights are ``phi^T alpha``.
    """
    mom = linear_moments(ds, fm, d0, pi_e, gamma)
    alpha, cond, ridge_used, flags = solve_regularized(mom.M.T, mom.b, ridge)
    return LinearFitReport("mwl", alpha, float(mom.c @ alpha), cond, ridge_used, flags, mom.unvisited)


def mql_linear(
    ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, ridge: float | None = None
) -> LinearFitReport:
    """Minimax Q-function learning (LSTDQ): ``(M + ridge I) beta = c``, estimate ``b^T beta``."""
    mom = linear_moments(ds, fm, d0, pi_e, gamma)
    beta, cond, ridge_used, flags = solve_regularized(mom.M, mom.c, ridge)
    return LinearFitReport("mql", beta, float(mom.b @ beta), cond, ridge_used, flags, mom.unvisited)


def mwl_moment_residual(
    ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, alpha: np.ndarray
) -> np.ndarray:
    """Empirical weight loss ``L_{w,n}(phi^T alpha, f)`` for each basis discriminator ``f``."""
    mom = linear_moments(ds, fm, d0, pi_e, gamma)
    return mom.b - mom.M.T @ alpha


def importance_ratios(pi_e: Policy, pi_b: Policy, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``pi_e(a|s) / pi_b(a|s)`` per sample; zero behavior probability is an error."""
    pb = pi_b.probs[s, a]
    if np.any(pb <= 0):
        i = int(np.argmax(pb <= 0))
        raise BehaviorSupportError(
            f"behavior policy gives probability 0 to observed pair (s={int(s[i])}, a={int(a[i])})"
        )
    return pi_e.probs[s, a] / pb


MSWL_VARIANTS = ("v2", "v4")


def mswl_linear(
    ds: Dataset,
    sfm: StateFeatureMap,
    d0,
    pi_e: Policy,
    pi_b: Policy,
    gamma: float,
    variant: str = "v2",
    ridge: float | None = None,
) -> LinearFitReport:
    """Off-policy LSTD on state features (MSWL / MVL in the linear case).

    ``v2`` uses ``E_n[rho phi(s) (phi(s) - gamma phi(s'))^T]`` and ``v4``
    uses ``E_n[phi(s) (phi(s) - gamma rho phi(s'))^T]``, with
    ``rho = pi_e / pi_b``. The estimate is ``D1^T (D + ridge I)^{-1} D3`` where
    ``D1 = (1 - gamma) E_d0[phi(s)]`` and ``D3 = E_n[r rho phi(s)]``; the
    returned parameters solve ``(D + ridge I)^T alpha = D1`` so that
    ``phi(s)^T alpha`` is the fitted state weight.
    """
    if variant not in MSWL_VARIANTS:
        raise ValueError(f"variant must be one of {MSWL_VARIANTS}, got {variant!r}")
    rho = importance_ratios(pi_e, pi_b, ds.s, ds.a)
    phi, phi_next = sfm.table[ds.s], sfm.table[ds.s_next]
    n = ds.n
    if variant == "v2":
        D = (rho[:, None] * phi).T @ (phi - gamma * phi_next) / n
    else:
        D = phi.T @ (phi - gamma * rho[:, None] * phi_next) / n
    D1 = (1.0 - gamma) * np.asarray(d0, dtype=float) @ sfm.table
    D3 = phi.T @ (ds.r * rho) / n
    alpha, cond, ridge_used, flags = solve_regularized(D.T, D1, ridge)
    return LinearFitReport(f"mswl_{variant}", alpha, float(D3 @ alpha), cond, ridge_used, flags)


def estimate_behavior_policy(ds: Dataset, n_states: int, n_actions: int) -> Policy:
    """Empirical action frequencies per state; unobserved states get uniform rows."""
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (ds.s, ds.a), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, counts / np.maximum(totals, 1.0), 1.0 / n_actions)
    return Policy(probs)
