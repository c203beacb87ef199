"""Command-line entry point: ``solve``, ``sample``, ``evaluate``, ``bench`` and ``variance``.

Every subcommand prints JSON (or writes CSV) on success and exits 0. Failures
print ``{"error": ..., "message": ..., "field": ...}`` on stderr and exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys

from .data import IID, TRAJECTORY, load_dataset, sample_iid, sample_trajectory, save_dataset
from .efficiency import variance_report
from .errors import OPEError
from .harness import (
    ESTIMATORS,
    ExperimentConfig,
    config_error_payload,
    load_config,
    resolve_problem,
    run_estimator,
    run_experiment,
    summarize,
)
from .mdp import discounted_occupancy, solve_q, state_value, true_weight


def _json_arg(text: str):
    """Policy specs may be bare words (``uniform``) or JSON objects."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _key_value(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, _json_arg(value)


def _add_problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mdp", dest="mdp_source", default="chain2", help="fixture name or MDP JSON file")
    p.add_argument("--fixture-param", action="append", type=_key_value, default=[], metavar="KEY=VALUE")
    p.add_argument("--pi-e", type=_json_arg, default="fixture:e", help="target policy spec")
    p.add_argument("--pi-b", type=_json_arg, default="fixture:b", help="behavior policy spec")


def _problem_cfg(args, **extra) -> ExperimentConfig:
    return ExperimentConfig(
        mdp_source=args.mdp_source,
        fixture_params=dict(args.fixture_param),
        pi_e=args.pi_e,
        pi_b=args.pi_b,
        **extra,
    )


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_solve(args) -> int:
    p = resolve_problem(_problem_cfg(args))
    out = {}
    for name, pi in (("pi_e", p.pi_e), ("pi_b", p.pi_b)):
        q = solve_q(p.mdp, pi)
        out[name] = {
            "return": float((1 - p.mdp.gamma) * p.mdp.d0 @ state_value(q, pi)),
            "q": q.tolist(),
            "v": state_value(q, pi).tolist(),
            "occupancy": discounted_occupancy(p.mdp, pi).tolist(),
        }
    out["pi_e"]["return"] = p.true_value
    out["stationary_pi_b"] = p.data_dist.tolist()
    out["behavior_mean_reward"] = p.behavior_value
    out["true_weight"] = true_weight(p.mdp, p.pi_e, p.data_dist).tolist()
    _emit(out)
    return 0


def cmd_sample(args) -> int:
    p = resolve_problem(_problem_cfg(args))
    if args.mode == TRAJECTORY:
        ds = sample_trajectory(p.mdp, p.pi_b, args.n, args.seed)
    else:
        ds = sample_iid(p.mdp, p.pi_b, args.n, args.seed)
    meta = save_dataset(ds, args.out)
    _emit({"rows": ds.n, "csv": str(args.out), "meta": str(meta), "mode": ds.mode, "seed": ds.seed})
    return 0


def cmd_evaluate(args) -> int:
    cfg = _problem_cfg(args, estimators=[args.estimator], ridge=args.ridge, kernel=args.kernel or {})
    p = resolve_problem(cfg)
    ds = load_dataset(args.data)
    ds.check_shape(p.mdp.n_states, p.mdp.n_actions)
    est, diag = run_estimator(args.estimator, p, ds, cfg)
    _emit({"estimator": args.estimator, "n": ds.n, "estimate": est, "true_value": p.true_value,
           "error": est - p.true_value, "diagnostics": diag})
    return 0


def cmd_bench(args) -> int:
    flags = {
        "mdp_source": args.mdp_source,
        "fixture_params": dict(args.fixture_param),
        "pi_e": args.pi_e,
        "pi_b": args.pi_b,
        "estimators": args.estimators,
        "sample_sizes": args.sample_sizes,
        "n_replications": args.reps,
        "base_seed": args.seed,
        "ridge": args.ridge,
        "workers": args.workers,
        "record_runtime": args.record_runtime,
        "data_mode": args.mode,
    }
    if args.kernel is not None:
        flags["kernel"] = args.kernel
    if args.out is not None:
        flags["output"] = args.out
    cfg = load_config(args.config, flags) if args.config else ExperimentConfig.from_dict(flags)
    problem = resolve_problem(cfg)
    rows = run_experiment(cfg, problem)
    summary = {
        "true_value": problem.true_value,
        "behavior_value": problem.behavior_value,
        "rows": len(rows),
        "output": cfg.output,
        "summary": summarize(rows, problem),
    }
    _emit(summary)
    return 0


def cmd_variance(args) -> int:
    p = resolve_problem(_problem_cfg(args))
    rep = variance_report(p.mdp, p.pi_e, p.pi_b, p.data_dist)
    _emit(rep.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minimax-ope", description="Off-policy evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact oracles for a fixture or MDP file")
    _add_problem_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sample", help="write a dataset CSV with a metadata sidecar")
    _add_problem_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=(IID, TRAJECTORY), default=IID)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="run one estimator on one dataset")
    _add_problem_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--estimator", choices=sorted(ESTIMATORS), default="mwl")
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--kernel", type=json.loads, default=None, help='JSON, e.g. {"kind": "rbf"}')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="replication study; writes the result CSV")
    _add_problem_args(p)
    p.add_argument("--config", help="JSON config; its keys override the flags")
    p.add_argument("--estimators", nargs="+", default=["mwl"])
    p.add_argument("--sample-sizes", nargs="+", type=int, default=[1000])
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--kernel", type=json.loads, default=None)
    p.add_argument("--mode", choices=(IID, TRAJECTORY), default=IID)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--record-runtime", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("variance", help="efficiency bound and MSWL/MVL asymptotic variances")
    _add_problem_args(p)
    p.set_defaults(func=cmd_variance)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OPEError, ValueError, OSError, KeyError) as exc:
        print(json.dumps(config_error_payload(exc)), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
