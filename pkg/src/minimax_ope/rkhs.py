"""Closed-form RKHS discriminator losses and the quadratic fits they induce.

Over the unit ball of an RKHS the squared minimax loss is the squared norm
of a witness function. For the weight loss the witness is

    f* = E_n[w(s,a) (gamma K((s', pi_e), .) - K((s,a), .))] + (1 - gamma) E_{d0 x pi_e}[K((s,a), .)]

and for the Q-function loss it is ``g* = E_n[Delta K((s,a), .)]`` with
``Delta = r + gamma q(s', pi_e) - q(s, a)``. On a finite state-action space
both are kernel expansions over the ``S * A`` pairs, so the V-statistic is
``c^T K c`` for a coefficient vector ``c`` aggregated from the data. That is
the ``"witness"`` route and it is exact for any ``n``. The ``"pairwise"``
route evaluates the same V-statistic as an explicit double sum over samples
and is capped at ``max_points`` samples (evenly spaced subsample).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, make_rng, sufficient_stats
from .features import FeatureMap, KernelSpec, policy_features
from .linear import LinearFitReport, solve_regularized
from .mdp import Policy, state_value

PAIRWISE_CAP = 4000
_BLOCK = 2048


@dataclass(frozen=True, eq=False)
class RkhsLossReport:
    """Squared RKHS-ball loss and its additive terms (the terms sum to the loss)."""

    loss_value: float
    breakdown: dict = field(default_factory=dict)
    method: str = "witness"
    n_used: int = 0
    flags: tuple[str, ...] = ()


def _shape(pi_e: Policy) -> tuple[int, int]:
    return pi_e.probs.shape


def _per_sample(values, ds: Dataset, n_states: int, n_actions: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape == (n_states, n_actions):
        return v[ds.s, ds.a]
    if v.shape == (ds.n,):
        return v
    raise ValueError(f"values must be an (S, A) table or one value per sample, got shape {v.shape}")


def _d0_pairs(d0, pi_e: Policy) -> np.ndarray:
    return (np.asarray(d0, dtype=float)[:, None] * pi_e.probs).reshape(-1)


def _quad(kspec: KernelSpec, x: np.ndarray, wx: np.ndarray, y: np.ndarray, wy: np.ndarray) -> float:
    """``wx^T K(x, y) wy`` accumulated block by block."""
    total = 0.0
    for i in range(0, len(x), _BLOCK):
        kx = kspec.matrix(x[i : i + _BLOCK], y)
        total += float(wx[i : i + _BLOCK] @ kx @ wy)
    return total


def _pairwise_subsample(ds: Dataset, values: np.ndarray, max_points: int):
    if ds.n <= max_points:
        return ds, values, ()
    idx = np.linspace(0, ds.n - 1, max_points).round().astype(int)
    return ds.subset(idx), values[idx], ("subsampled",)


# ---------------------------------------------------------------- weight loss


def mwl_witness_coefficients(w_vals, ds: Dataset, d0, pi_e: Policy, gamma: float) -> dict:
    """Kernel-expansion coefficients of the three parts of ``f*`` over all pairs."""
    S, A = _shape(pi_e)
    w = _per_sample(w_vals, ds, S, A)
    cur = np.bincount(ds.s * A + ds.a, weights=w, minlength=S * A) / ds.n
    nxt_state = np.bincount(ds.s_next, weights=w, minlength=S) / ds.n
    nxt = (nxt_state[:, None] * pi_e.probs).reshape(-1)
    return {
        "next": gamma * nxt,
        "cur": cur,
        "d0": (1.0 - gamma) * _d0_pairs(d0, pi_e),
    }


def _mwl_terms(inner) -> dict:
    return {
        "next_next": inner("next", "next"),
        "cur_cur": inner("cur", "cur"),
        "d0_d0": inner("d0", "d0"),
        "next_cur": -2.0 * inner("next", "cur"),
        "next_d0": 2.0 * inner("next", "d0"),
        "cur_d0": -2.0 * inner("cur", "d0"),
    }


def mwl_rkhs_loss(
    w_vals,
    ds: Dataset,
    d0,
    pi_e: Policy,
    gamma: float,
    k: KernelSpec,
    method: str = "auto",
    max_points: int = PAIRWISE_CAP,
) -> RkhsLossReport:
    """``max_{|f| <= 1} L_{w,n}(w, f)^2`` as a V-statistic.

    ``w_vals`` is an ``(S, A)`` table or one weight per sample. ``method`` is
    ``"witness"``, ``"pairwise"`` or ``"auto"`` (pairwise when ``n`` is
    within ``max_points``, witness otherwise).
    """
    S, A = _shape(pi_e)
    method = _resolve(method, ds.n, max_points)
    if method == "witness":
        coef = mwl_witness_coefficients(w_vals, ds, d0, pi_e, gamma)
        K = k.pair_gram(S, A)
        terms = _mwl_terms(lambda p, q: float(coef[p] @ K @ coef[q]))
        return RkhsLossReport(sum(terms.values()), terms, "witness", ds.n)

    w = _per_sample(w_vals, ds, S, A)
    sub, w, flags = _pairwise_subsample(ds, w, max_points)
    n = sub.n
    enc = k.encode(S, A)
    pts = {
        "cur": enc.table[sub.s, sub.a],
        "next": enc.table[sub.s_next].reshape(n * A, -1),
        "d0": enc.matrix,
    }
    wts = {
        "cur": w / n,
        "next": (gamma * w[:, None] * pi_e.probs[sub.s_next]).reshape(-1) / n,
        "d0": (1.0 - gamma) * _d0_pairs(d0, pi_e),
    }
    terms = _mwl_terms(lambda p, q: _quad(k, pts[p], wts[p], pts[q], wts[q]))
    return RkhsLossReport(sum(terms.values()), terms, "pairwise", n, flags)


def _resolve(method: str, n: int, max_points: int) -> str:
    if method == "auto":
        return "pairwise" if n <= max_points else "witness"
    if method not in ("witness", "pairwise"):
        raise ValueError(f"method must be 'auto', 'witness' or 'pairwise', got {method!r}")
    return method


# ------------------------------------------------------------- Q-function loss


def bellman_deltas(q_vals, ds: Dataset, pi_e: Policy, gamma: float) -> np.ndarray:
    """``r + gamma q(s', pi_e) - q(s, a)`` per sample for a ``(S, A)`` table ``q``."""
    q = np.asarray(q_vals, dtype=float)
    v = state_value(q, pi_e)
    return ds.r + gamma * v[ds.s_next] - q[ds.s, ds.a]


def mql_witness_coefficients(q_vals, ds: Dataset, pi_e: Policy, gamma: float) -> np.ndarray:
    S, A = _shape(pi_e)
    delta = bellman_deltas(q_vals, ds, pi_e, gamma)
    return np.bincount(ds.s * A + ds.a, weights=delta, minlength=S * A) / ds.n


def mql_rkhs_loss(
    q_vals,
    ds: Dataset,
    pi_e: Policy,
    gamma: float,
    k: KernelSpec,
    method: str = "auto",
    max_points: int = PAIRWISE_CAP,
) -> RkhsLossReport:
    """``max_{|g| <= 1} L_{q,n}(q, g)^2 = (1/n^2) sum_ij Delta_i Delta_j K_ij``."""
    S, A = _shape(pi_e)
    method = _resolve(method, ds.n, max_points)
    if method == "witness":
        coef = mql_witness_coefficients(q_vals, ds, pi_e, gamma)
        value = float(coef @ k.pair_gram(S, A) @ coef)
        return RkhsLossReport(value, {"delta_delta": value}, "witness", ds.n)
    delta = bellman_deltas(q_vals, ds, pi_e, gamma)
    sub, delta, flags = _pairwise_subsample(ds, delta, max_points)
    x = k.encode(S, A).table[sub.s, sub.a]
    value = _quad(k, x, delta / sub.n, x, delta / sub.n)
    return RkhsLossReport(value, {"delta_delta": value}, "pairwise", sub.n, flags)


# ------------------------------------------------------------- quadratic fits


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``loss(theta) = theta^T M theta + 2 b^T theta + const``."""

    M: np.ndarray
    b: np.ndarray
    const: float

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.M @ theta + 2.0 * self.b @ theta + self.const)


def _quadratic(G: np.ndarray, u0: np.ndarray, K: np.ndarray) -> Quadratic:
    KG = K @ G
    M = G.T @ KG
    return Quadratic(0.5 * (M + M.T), KG.T @ u0, float(u0 @ K @ u0))


def mwl_rkhs_quadratic(ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, k: KernelSpec) -> Quadratic:
    """Weight loss of ``w = phi^T alpha`` as a quadratic in ``alpha``.

    The witness coefficients are affine in ``alpha``: ``c = G alpha + u0``.
    """
    S, A = _shape(pi_e)
    st = sufficient_stats(ds, S, A)
    phi = fm.matrix
    cur = st.pair_counts.reshape(-1, 1) / st.n * phi
    # sum over samples of phi(x_i) into the next-state slot, spread by pi_e
    into = st.counts.reshape(S * A, S).T @ phi / st.n  # (S, d)
    nxt = (pi_e.probs[:, :, None] * into[:, None, :]).reshape(S * A, -1)
    G = gamma * nxt - cur
    u0 = (1.0 - gamma) * _d0_pairs(d0, pi_e)
    return _quadratic(G, u0, k.pair_gram(S, A))


def mql_rkhs_quadratic(ds: Dataset, fm: FeatureMap, pi_e: Policy, gamma: float, k: KernelSpec) -> Quadratic:
    """Q-function loss of ``q = phi^T beta`` as a quadratic in ``beta``."""
    S, A = _shape(pi_e)
    st = sufficient_stats(ds, S, A)
    phi = fm.matrix
    phi_pi = policy_features(fm, pi_e)
    H = (gamma * st.counts.reshape(S * A, S) @ phi_pi - st.pair_counts.reshape(-1, 1) * phi) / st.n
    h0 = st.reward_sum.reshape(-1) / st.n
    return _quadratic(H, h0, k.pair_gram(S, A))


def mwl_rkhs_fit(
    ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, k: KernelSpec, ridge: float | None = None
) -> LinearFitReport:
    """Minimize the RKHS weight loss over ``w = phi^T alpha``; estimate ``E_n[r phi^T alpha]``."""
    quad = mwl_rkhs_quadratic(ds, fm, d0, pi_e, gamma, k)
    alpha, cond, ridge_used, flags = solve_regularized(quad.M, -quad.b, ridge)
    w = fm.table[ds.s, ds.a] @ alpha
    return LinearFitReport("mwl_rkhs", alpha, float(np.mean(ds.r * w)), cond, ridge_used, flags)


def mql_rkhs_fit(
    ds: Dataset, fm: FeatureMap, d0, pi_e: Policy, gamma: float, k: KernelSpec, ridge: float | None = None
) -> LinearFitReport:
    """Minimize the RKHS Q-function loss over ``q = phi^T beta``; estimate ``(1 - gamma) E_d0[q(s, pi_e)]``."""
    quad = mql_rkhs_quadratic(ds, fm, pi_e, gamma, k)
    beta, cond, ridge_used, flags = solve_regularized(quad.M, -quad.b, ridge)
    value = (1.0 - gamma) * np.asarray(d0, dtype=float) @ policy_features(fm, pi_e) @ beta
    return LinearFitReport("mql_rkhs", beta, float(value), cond, ridge_used, flags)


# ---------------------------------------------------------- max certification


@dataclass(frozen=True, eq=False)
class RkhsMaxReport:
    closed_form: float
    witness_value: float
    max_probe: float
    violations: int
    trials: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.violations == 0 and abs(self.witness_value - self.closed_form) <= self.tol


def _empirical_loss(kind, f_tab, vals, ds, d0, pi_e, gamma) -> float:
    """Empirical loss for one discriminator given by its values on all pairs."""
    if kind == "mwl":
        f_pi = state_value(f_tab, pi_e)
        d0_term = (1.0 - gamma) * float(np.asarray(d0) @ f_pi)
        return float(np.mean(vals * (gamma * f_pi[ds.s_next] - f_tab[ds.s, ds.a]))) + d0_term
    return float(np.mean(vals * f_tab[ds.s, ds.a]))


def verify_rkhs_max(
    kind: str,
    values,
    ds: Dataset,
    pi_e: Policy,
    gamma: float,
    k: KernelSpec,
    d0=None,
    trials: int = 100,
    seed: int = 0,
    tol: float = 1e-8,
) -> RkhsMaxReport:
    """Certify the closed form against random unit-norm RKHS discriminators.

    ``kind`` is ``"mwl"`` (``values`` are weights, ``d0`` required) or
    ``"mql"`` (``values`` is a Q table). Each probe is
    ``f = sum_j c_j K(z_j, .)`` scaled to unit RKHS norm, with centers ``z_j``
    drawn either from the encoded pairs or as Gaussian points in the input
    space. Its squared empirical loss, computed directly from the samples,
    must not exceed the closed form by more than ``tol``. The normalized
    witness must attain the closed form within ``tol``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    S, A = _shape(pi_e)
    enc = k.encode(S, A).matrix
    K = k.pair_gram(S, A)
    if kind == "mwl":
        if d0 is None:
            raise ValueError("d0 is required for the weight loss")
        vals = _per_sample(values, ds, S, A)
        parts = mwl_witness_coefficients(vals, ds, d0, pi_e, gamma)
        coef = parts["next"] - parts["cur"] + parts["d0"]
    elif kind == "mql":
        vals = bellman_deltas(values, ds, pi_e, gamma)
        coef = mql_witness_coefficients(values, ds, pi_e, gamma)
    else:
        raise ValueError(f"kind must be 'mwl' or 'mql', got {kind!r}")
    closed = float(coef @ K @ coef)

    norm2 = closed
    if norm2 > 0:
        f_tab = (K @ coef / np.sqrt(norm2)).reshape(S, A)
        witness = _empirical_loss(kind, f_tab, vals, ds, d0, pi_e, gamma) ** 2
    else:
        witness = 0.0

    rng = make_rng(seed)
    worst, violations = -np.inf, 0
    for t in range(trials):
        m = int(rng.integers(1, S * A + 1))
        if t % 2 == 0:
            centers = enc[rng.choice(S * A, size=m, replace=False)]
        else:
            centers = enc[rng.integers(0, S * A, size=m)] + rng.normal(size=(m, enc.shape[1]))
        c = rng.normal(size=m)
        fnorm2 = float(c @ k.matrix(centers, centers) @ c)
        if fnorm2 <= 1e-14:
            continue
        f_tab = (k.matrix(enc, centers) @ c / np.sqrt(fnorm2)).reshape(S, A)
        val = _empirical_loss(kind, f_tab, vals, ds, d0, pi_e, gamma) ** 2
        worst = max(worst, val)
        if val > closed + tol:
            violations += 1
    return RkhsMaxReport(closed, float(witness), float(worst), violations, trials, tol)
