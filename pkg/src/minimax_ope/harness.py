"""Replication harness: configs, estimator registry, result tables and CSV output."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .data import IID, TRAJECTORY, Dataset, sample_iid, sample_trajectory
from .dr import DrInputs, dr_estimate, naive_behavior_value
from .errors import ConfigError, DegenerateNormalizationError
from .features import KernelSpec, median_bandwidth, tabular_features, tabular_state_features
from .fixtures import FIXTURES, get_fixture, softmax_policy
from .linear import estimate_behavior_policy, mql_linear, mswl_linear, mwl_linear
from .mdp import Policy, TabularMDP, load_mdp, optimal_q, solve_q, stationary_distribution, true_return
from .model_based import fit_empirical_mdp, model_based_estimate
from .rkhs import mql_rkhs_fit, mwl_rkhs_fit

__all__ = [
    "ESTIMATORS",
    "ExperimentConfig",
    "Problem",
    "ResultRow",
    "load_config",
    "normalized_mse",
    "resolve_problem",
    "run_estimator",
    "run_experiment",
    "softmax_policy",
    "summarize",
    "write_csv",
]

CSV_HEADER = "estimator,n,rep,estimate,error,runtime_ms"


# ------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Everything a replication study needs; JSON keys match the field names.

    Policies are given as specs: ``"fixture:e"`` / ``"fixture:b"`` (the
    fixture defaults), ``"uniform"``, ``{"softmax": {"q": "optimal" |
    "uniform", "temperature": t}}``, ``{"mixture": {"alpha": a, "first":
    spec, "second": spec}}`` meaning ``a * first + (1 - a) * second``, or
    ``{"table": [[...], ...]}``.
    """

    mdp_source: str = "chain2"
    fixture_params: dict = field(default_factory=dict)
    pi_e: object = "fixture:e"
    pi_b: object = "fixture:b"
    estimators: list = field(default_factory=lambda: ["mwl"])
    sample_sizes: list = field(default_factory=lambda: [1000])
    n_replications: int = 1
    base_seed: int = 0
    ridge: float | None = None
    kernel: dict = field(default_factory=dict)
    data_mode: str = IID
    output: str | None = None
    workers: int = 1
    record_runtime: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.mdp_source, str) or not self.mdp_source:
            raise ConfigError("mdp_source must be a fixture name or a file path", "mdp_source")
        if not isinstance(self.fixture_params, dict):
            raise ConfigError("fixture_params must be an object", "fixture_params")
        if not isinstance(self.estimators, list) or not self.estimators:
            raise ConfigError("estimators must be a non-empty list", "estimators")
        for name in self.estimators:
            if name not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {name!r}; known: {sorted(ESTIMATORS)}", "estimators")
        if len(set(self.estimators)) != len(self.estimators):
            raise ConfigError("estimators must not repeat", "estimators")
        sizes = self.sample_sizes
        if not isinstance(sizes, list) or not sizes or not all(isinstance(n, int) and n > 0 for n in sizes):
            raise ConfigError("sample_sizes must be a non-empty list of positive integers", "sample_sizes")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("sample_sizes must be strictly ascending", "sample_sizes")
        if not isinstance(self.n_replications, int) or self.n_replications < 1:
            raise ConfigError("n_replications must be an integer >= 1", "n_replications")
        if not isinstance(self.base_seed, int) or self.base_seed < 0:
            raise ConfigError("base_seed must be a non-negative integer", "base_seed")
        if self.ridge is not None and not (isinstance(self.ridge, (int, float)) and self.ridge >= 0):
            raise ConfigError("ridge must be null or a non-negative number", "ridge")
        if not isinstance(self.kernel, dict):
            raise ConfigError("kernel must be an object", "kernel")
        unknown = set(self.kernel) - {"kind", "bandwidth", "bandwidth_divisor"}
        if unknown:
            raise ConfigError(f"unknown kernel settings {sorted(unknown)}", "kernel")
        if self.kernel.get("kind", "rbf") not in ("rbf", "linear"):
            raise ConfigError("kernel.kind must be 'rbf' or 'linear'", "kernel.kind")
        for key in ("bandwidth", "bandwidth_divisor"):
            v = self.kernel.get(key)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"kernel.{key} must be positive", f"kernel.{key}")
        if self.data_mode not in (IID, TRAJECTORY):
            raise ConfigError(f"data_mode must be {IID!r} or {TRAJECTORY!r}", "data_mode")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be an integer >= 1", "workers")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s) {unknown}", unknown[0])
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config; keys in the file win over ``overrides``."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    merged = dict(overrides or {})
    if isinstance(data, dict):
        merged.update(data)
    else:
        merged = data
    return ExperimentConfig.from_dict(merged)


# ------------------------------------------------------------------ problem


@dataclass(frozen=True, eq=False)
class Problem:
    """Resolved MDP, policies and exact reference values for a config."""

    mdp: TabularMDP
    pi_e: Policy
    pi_b: Policy
    true_value: float
    behavior_value: float  # mean reward under the data distribution
    data_dist: np.ndarray


def _policy_from_spec(spec, mdp: TabularMDP, defaults: dict, field_name: str) -> Policy:
    S, A = mdp.n_states, mdp.n_actions
    try:
        if isinstance(spec, str):
            if spec in ("fixture:e", "fixture:b"):
                key = spec[-1]
                if defaults.get(key) is None:
                    raise ConfigError(f"{spec!r} needs a named fixture", field_name)
                return defaults[key]
            if spec == "uniform":
                return Policy.uniform(S, A)
            raise ConfigError(f"unknown policy spec {spec!r}", field_name)
        if isinstance(spec, dict) and len(spec) == 1:
            (kind, body), = spec.items()
            if kind == "table":
                return Policy(np.asarray(body, dtype=float))
            if kind == "softmax":
                base = body.get("q", "optimal")
                if base not in ("optimal", "uniform"):
                    raise ConfigError("softmax.q must be 'optimal' or 'uniform'", field_name)
                q = optimal_q(mdp) if base == "optimal" else solve_q(mdp, Policy.uniform(S, A))
                return softmax_policy(q, float(body["temperature"]))
            if kind == "mixture":
                first = _policy_from_spec(body["first"], mdp, defaults, field_name)
                second = _policy_from_spec(body["second"], mdp, defaults, field_name)
                alpha = float(body["alpha"])
                if not 0.0 <= alpha <= 1.0:
                    raise ConfigError("mixture.alpha must lie in [0, 1]", field_name)
                return first.mix(second, alpha)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed policy spec: {exc}", field_name) from None
    raise ConfigError(f"unknown policy spec {spec!r}", field_name)


def resolve_problem(cfg: ExperimentConfig) -> Problem:
    defaults: dict = {}
    if cfg.mdp_source.lower() in FIXTURES:
        try:
            fx = get_fixture(cfg.mdp_source, **cfg.fixture_params)
        except TypeError as exc:
            raise ConfigError(f"bad fixture_params: {exc}", "fixture_params") from None
        mdp, defaults = fx.mdp, {"e": fx.pi_e, "b": fx.pi_b}
    else:
        path = Path(cfg.mdp_source)
        if not path.exists():
            raise ConfigError(f"{cfg.mdp_source!r} is neither a fixture nor an existing file", "mdp_source")
        mdp = load_mdp(path)
    pi_e = _policy_from_spec(cfg.pi_e, mdp, defaults, "pi_e")
    pi_b = _policy_from_spec(cfg.pi_b, mdp, defaults, "pi_b")
    for name, pi in (("pi_e", pi_e), ("pi_b", pi_b)):
        if pi.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ConfigError(f"{name} shape {pi.probs.shape} does not match the MDP", name)
    data_dist = stationary_distribution(mdp, pi_b)
    return Problem(
        mdp,
        pi_e,
        pi_b,
        true_return(mdp, pi_e),
        float(np.sum(data_dist * mdp.expected_reward)),
        data_dist,
    )


# --------------------------------------------------------------- estimators


def _kernel(cfg: ExperimentConfig, ds: Dataset, mdp: TabularMDP) -> KernelSpec:
    kind = cfg.kernel.get("kind", "rbf")
    if kind == "linear":
        return KernelSpec("linear", encoding=tabular_features(mdp.n_states, mdp.n_actions))
    spec = KernelSpec("rbf")
    bw = cfg.kernel.get("bandwidth")
    if bw is None:
        bw = median_bandwidth(ds, spec.encode(mdp.n_states, mdp.n_actions))
    return KernelSpec("rbf", float(bw) / float(cfg.kernel.get("bandwidth_divisor", 1.0)))


def _fit_report(rep) -> tuple[float, dict]:
    return rep.estimate, {"matrix_cond": rep.matrix_cond, "ridge_used": rep.ridge_used, "flags": list(rep.flags)}


def _mwl(p: Problem, ds: Dataset, cfg: ExperimentConfig):
    fm = tabular_features(p.mdp.n_states, p.mdp.n_actions)
    return _fit_report(mwl_linear(ds, fm, p.mdp.d0, p.pi_e, p.mdp.gamma, cfg.ridge))


def _mql(p: Problem, ds: Dataset, cfg: ExperimentConfig):
    fm = tabular_features(p.mdp.n_states, p.mdp.n_actions)
    return _fit_report(mql_linear(ds, fm, p.mdp.d0, p.pi_e, p.mdp.gamma, cfg.ridge))


def _mswl(variant: str, plugin: bool = False):
    def run(p: Problem, ds: Dataset, cfg: ExperimentConfig):
        sfm = tabular_state_features(p.mdp.n_states)
        pi_b = estimate_behavior_policy(ds, p.mdp.n_states, p.mdp.n_actions) if plugin else p.pi_b
        return _fit_report(mswl_linear(ds, sfm, p.mdp.d0, p.pi_e, pi_b, p.mdp.gamma, variant, cfg.ridge))

    return run


def _model_based(p: Problem, ds: Dataset, cfg: ExperimentConfig):
    emdp = fit_empirical_mdp(ds, p.mdp.n_states, p.mdp.n_actions, p.mdp.gamma, p.mdp.d0)
    return model_based_estimate(emdp, p.pi_e), {"unvisited": int(emdp.unvisited.sum())}


def _rkhs(fit):
    def run(p: Problem, ds: Dataset, cfg: ExperimentConfig):
        fm = tabular_features(p.mdp.n_states, p.mdp.n_actions)
        k = _kernel(cfg, ds, p.mdp)
        est, diag = _fit_report(fit(ds, fm, p.mdp.d0, p.pi_e, p.mdp.gamma, k, cfg.ridge))
        diag["bandwidth"] = k.bandwidth
        return est, diag

    return run


def _naive(p: Problem, ds: Dataset, cfg: ExperimentConfig):
    return naive_behavior_value(ds), {}


def _dr(p: Problem, ds: Dataset, cfg: ExperimentConfig):
    S, A = p.mdp.n_states, p.mdp.n_actions
    fm = tabular_features(S, A)
    w = mwl_linear(ds, fm, p.mdp.d0, p.pi_e, p.mdp.gamma, cfg.ridge)
    q = mql_linear(ds, fm, p.mdp.d0, p.pi_e, p.mdp.gamma, cfg.ridge)
    w_tab = np.maximum((fm.matrix @ w.alpha).reshape(S, A), 0.0)
    inp = DrInputs(w_tab, (fm.matrix @ q.alpha).reshape(S, A), p.pi_e, p.mdp.d0)
    return dr_estimate(ds, inp, p.mdp.gamma), {}


ESTIMATORS: dict[str, Callable] = {
    "mwl": _mwl,
    "mql": _mql,
    "mswl": _mswl("v2"),
    "mvl": _mswl("v4"),
    "mswl_plugin": _mswl("v2", plugin=True),
    "model_based": _model_based,
    "mwl_rkhs": _rkhs(mwl_rkhs_fit),
    "mql_rkhs": _rkhs(mql_rkhs_fit),
    "naive": _naive,
    "dr": _dr,
}


def run_estimator(name: str, problem: Problem, ds: Dataset, cfg: ExperimentConfig) -> tuple[float, dict]:
    try:
        fn = ESTIMATORS[name]
    except KeyError:
        raise ConfigError(f"unknown estimator {name!r}", "estimators") from None
    return fn(problem, ds, cfg)


# ------------------------------------------------------------------ running


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    n: int
    rep: int
    estimate: float
    error: float
    runtime_ms: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    def csv_line(self) -> str:
        return f"{self.estimator},{self.n},{self.rep},{self.estimate:.17g},{self.error:.17g},{self.runtime_ms:.17g}"


def _sample(problem: Problem, cfg: ExperimentConfig, n: int, seed: int) -> Dataset:
    if cfg.data_mode == TRAJECTORY:
        return sample_trajectory(problem.mdp, problem.pi_b, n, seed)
    return sample_iid(problem.mdp, problem.pi_b, n, seed)


def _run_task(cfg: ExperimentConfig, problem: Problem, n: int, rep: int) -> list[ResultRow]:
    ds = _sample(problem, cfg, n, cfg.base_seed + rep)
    rows = []
    for name in cfg.estimators:
        start = time.perf_counter()
        est, diag = run_estimator(name, problem, ds, cfg)
        elapsed = (time.perf_counter() - start) * 1e3 if cfg.record_runtime else 0.0
        rows.append(ResultRow(name, n, rep, float(est), float(est) - problem.true_value, elapsed, diag))
    return rows


def _run_task_star(args) -> list[ResultRow]:
    return _run_task(*args)


def run_experiment(cfg: ExperimentConfig, problem: Problem | None = None) -> list[ResultRow]:
    """Run every ``(n, rep)`` task and return rows sorted by estimator order, ``n`` and ``rep``.

    Replication ``rep`` uses seed ``base_seed + rep`` at every sample size.
    Results do not depend on ``workers``. If ``cfg.output`` is set the CSV is
    written there.
    """
    problem = problem or resolve_problem(cfg)
    tasks = [(cfg, problem, n, rep) for n in cfg.sample_sizes for rep in range(cfg.n_replications)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_task_star, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        chunks = [_run_task(*t) for t in tasks]
    order = {name: i for i, name in enumerate(cfg.estimators)}
    rows = sorted((r for chunk in chunks for r in chunk), key=lambda r: (order[r.estimator], r.n, r.rep))
    if cfg.output:
        write_csv(rows, cfg.output)
    return rows


def write_csv(rows, path) -> None:
    lines = [CSV_HEADER] + [r.csv_line() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- summaries


def normalized_mse(estimates, r_e: float, r_b: float) -> float:
    """``mean((R_hat - r_e)^2) / (r_b - r_e)^2``; the naive guess ``r_b`` scores 1."""
    denom = (float(r_b) - float(r_e)) ** 2
    if denom == 0.0:
        raise DegenerateNormalizationError("target and behavior values coincide; normalization undefined")
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ValueError("need at least one estimate")
    return float(np.mean((est - r_e) ** 2) / denom)


def summarize(rows, problem: Problem) -> list[dict]:
    """Per ``(estimator, n)``: mean, bias, MSE and normalized MSE."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.estimator, r.n), []).append(r.estimate)
    out = []
    for (name, n), est in groups.items():
        arr = np.asarray(est)
        entry = {
            "estimator": name,
            "n": n,
            "reps": len(arr),
            "mean": float(arr.mean()),
            "bias": float(arr.mean() - problem.true_value),
            "mse": float(np.mean((arr - problem.true_value) ** 2)),
        }
        try:
            entry["normalized_mse"] = normalized_mse(arr, problem.true_value, problem.behavior_value)
        except DegenerateNormalizationError:
            entry["normalized_mse"] = None
        out.append(entry)
    return out


def config_error_payload(exc: BaseException) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.field:
        payload["field"] = exc.field
    return payload

