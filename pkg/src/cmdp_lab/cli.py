"""Command-line front door: run, sweep, verify, oracle, gen.

Outputs are deterministic functions of (config, seed): CSV logs use repr-level
float precision, summaries carry no timestamps, and files are written through
a temp-file rename so concurrent sweeps never see partial output. The only
environment variable honored is CMDP_LAB_OUT (default output directory).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import algorithm, envs, metrics, oracle, schedules, verify
from .cmdp import StateFeatures, load_cmdp, save_cmdp, validate_cmdp
from .config import (
    ConfigError,
    ExperimentConfig,
    build_algorithm_config,
    build_features,
    build_model,
    build_sa_features,
    build_schedules,
    load_config,
)
from .policy import SoftmaxPolicy, reduced_tabular_sa_features, tabular_sa_features

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _default_out() -> str:
    return os.environ.get("CMDP_LAB_OUT", ".")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _parse_seeds(spec: str) -> list[int]:
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip() != ""]
    return list(range(int(spec)))


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- run ---------------------------------------------------------------------


def _single_run(args):
    """One seeded run; module-level for ProcessPoolExecutor pickling."""
    config, seed = args
    model = build_model(config)
    feats = build_features(config, model)
    x_sa = build_sa_features(config, model)
    alg_cfg = build_algorithm_config(config)
    log = algorithm.run(model, feats, x_sa, alg_cfg, horizon=config.horizon, seed=seed)
    return seed, log


def _rate_fit_or_none(records, field, t_lo, t_hi):
    try:
        fit = metrics.fit_rate(records, field, t_lo, t_hi)
        return {
            "window": [fit.t_min, fit.t_max],
            "slope": fit.slope,
            "intercept": fit.intercept,
            "r_squared": fit.r_squared,
        }
    except ValueError as exc:
        return {"error": str(exc)}


def _summarize_seed(config: ExperimentConfig, log: metrics.MetricsLog) -> dict:
    records = log.records
    T = records[-1].t
    t_lo = max(config.eval_every * 10, T // 100)
    final = {
        "t": T,
        "windowed_y_sq": metrics.windowed_mean(records, "y_sq", T),
        "windowed_z_sq": metrics.windowed_mean(records, "z_sq", T),
        "windowed_mbar_sq": metrics.windowed_mean(records, "mbar_sq", T),
        "gap": [float(g) for g in records[-1].gap],
        "gamma": [float(g) for g in records[-1].gamma],
        "objective": records[-1].objective,
        "constraint_satisfied": [bool(g <= 0) for g in records[-1].gap],
    }
    return {
        "final": final,
        "rate_fits": {
            "z_sq": _rate_fit_or_none(records, "z_sq", t_lo, T),
            "mbar_sq": _rate_fit_or_none(records, "mbar_sq", t_lo, T),
            "y_sq": _rate_fit_or_none(records, "y_sq", t_lo, T),
        },
        "violations": log.violations,
        "lambda_min_g_inv": min(log.lambda_min_g_inv),
    }


def cmd_run(config: ExperimentConfig, out_dir: Path, jobs: int = 1) -> int:
    sched = build_schedules(config)
    report = schedules.validate(sched)
    if not report.ok:
        for c in report.failures():
            print(f"schedule constraint violated: {c.name} ({c.detail})", file=sys.stderr)
        return EXIT_CONFIG

    variant = config.algorithm["variant"].lower()
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_single_run, [(config, s) for s in config.seeds]))
        else:
            results = [_single_run((config, s)) for s in config.seeds]
    except algorithm.StepFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    per_seed = {}
    for seed, log in sorted(results):
        csv_path = out_dir / f"run_{variant}_seed{seed}.csv"
        _atomic_write(csv_path, metrics.records_to_csv(log.records))
        per_seed[str(seed)] = _summarize_seed(config, log)

    model = build_model(config)
    feats = build_features(config, model)
    x_sa = build_sa_features(config, model)
    grid = [np.zeros(x_sa.shape[2])] + [log.final_state.theta for _, log in sorted(results)]
    trail = [lam for _, log in sorted(results) for lam in log.lambda_min_g_inv]
    bounds = metrics.bounds_report(
        model, feats, x_sa, grid, config.algorithm.get("multiplier_cap", 1000.0), trail
    )
    summary = {
        "variant": variant,
        "horizon": config.horizon,
        "eval_every": config.eval_every,
        "schedule_checks": [
            {"name": c.name, "passed": c.passed, "advisory": c.advisory} for c in report.checks
        ],
        "seeds": per_seed,
        "bounds_report": {
            "B": bounds.B,
            "U_r": bounds.U_r,
            "U_bar_v": bounds.U_bar_v,
            "lambda_e": bounds.lambda_e,
            "lambda_G": bounds.lambda_G,
            "eps_app": bounds.eps_app,
        },
    }
    _atomic_write(out_dir / f"summary_{variant}.json", _json_dumps(summary))
    print(f"wrote {len(per_seed)} CSV log(s) and summary_{variant}.json to {out_dir}")
    return EXIT_OK


# --- sweep -------------------------------------------------------------------


def _variant_entry(entry) -> tuple[str, bool, int | None]:
    """Normalize a sweep entry to (variant, modified, horizon_override)."""
    if isinstance(entry, dict):
        name = entry.get("variant", "")
        horizon = entry.get("horizon")
    else:
        name, horizon = str(entry), None
    name = name.lower()
    modified = False
    for suffix in ("-m", "-modified"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            modified = True
            break
    if name not in algorithm.VARIANTS:
        raise ConfigError(f"sweep variant {entry!r} not one of {sorted(algorithm.VARIANTS)}")
    return name, modified, horizon


def cmd_sweep(config: ExperimentConfig, variants: list, out_dir: Path, jobs: int = 1) -> int:
    if len(config.seeds) < 2:
        print("sweep needs >= 2 seeds for a standard error", file=sys.stderr)
        return EXIT_CONFIG
    parsed = [_variant_entry(v) for v in variants]
    horizons = {h for _, _, h in parsed if h is not None}
    if len(horizons) > 1 or (horizons and horizons != {config.horizon}):
        print("mixed horizons across variants rejected", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    for name, modified, _ in parsed:
        sch_doc = dict(config.schedules)
        if modified:
            sch_doc = {
                "mode": schedules.MODIFIED,
                "nu": max(0.5, sch_doc.get("nu", 0.5)),
                "beta": sch_doc.get("beta", 1.0),
                **{k: sch_doc[k] for k in ("c_a", "c_b", "c_c", "c_d") if k in sch_doc},
            }
        sub = ExperimentConfig(
            env=config.env,
            features=config.features,
            sa_features=config.sa_features,
            algorithm={**config.algorithm, "variant": name, "modified": modified},
            schedules=sch_doc,
            horizon=config.horizon,
            seeds=config.seeds,
            eval_every=config.eval_every,
            out_dir=config.out_dir,
            base_dir=config.base_dir,
        )
        sched = build_schedules(sub)
        rep = schedules.validate(sched)
        if not rep.ok:
            for c in rep.failures():
                print(f"schedule constraint violated: {c.name}", file=sys.stderr)
            return EXIT_CONFIG
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_single_run, [(sub, s) for s in sub.seeds]))
        else:
            results = [_single_run((sub, s)) for s in sub.seeds]
        objectives, gaps = [], []
        for _, log in sorted(results):
            T = log.records[-1].t
            objectives.append(metrics.windowed_mean(log.records, "objective", T))
            gaps.append([float(g) for g in log.records[-1].gap])
        objectives = np.array(objectives)
        gaps = np.array(gaps)
        n = len(objectives)
        label = name + ("-m" if modified else "")
        rows.append(
            {
                "variant": label,
                "objective_mean": float(objectives.mean()),
                "objective_stderr": float(objectives.std(ddof=1) / math.sqrt(n)),
                "gap_mean": [float(x) for x in gaps.mean(axis=0)],
                "gap_stderr": [float(x) for x in gaps.std(axis=0, ddof=1) / math.sqrt(n)],
                "n_seeds": n,
            }
        )

    _atomic_write(out_dir / "sweep.json", _json_dumps({"horizon": config.horizon, "rows": rows}))
    lines = [f"{'variant':<10} {'objective (mean ± stderr)':<28} constraint gap(s) (mean ± stderr)"]
    for r in rows:
        gap_txt = ", ".join(
            f"{m:+.4f} ± {s:.4f}" for m, s in zip(r["gap_mean"], r["gap_stderr"])
        )
        obj_txt = f"{r['objective_mean']:.5f} ± {r['objective_stderr']:.5f}"
        lines.append(f"{r['variant']:<10} {obj_txt:<28} {gap_txt}")
    table = "\n".join(lines) + "\n"
    _atomic_write(out_dir / "sweep.txt", table)
    print(table, end="")
    return EXIT_OK


# --- verify ------------------------------------------------------------------


def cmd_verify(out_dir: Path, include_module_checks: bool = True) -> int:
    results = verify.run_all(include_module_checks=include_module_checks)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} ({r.seconds:.1f}s): {r.detail}")
    report = [
        {"name": r.name, "passed": bool(r.passed), "detail": r.detail} for r in results
    ]
    _atomic_write(out_dir / "verify_report.json", _json_dumps(report))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else 1


# --- oracle ------------------------------------------------------------------


def cmd_oracle(args) -> int:
    model, feats, x_sa = load_cmdp(args.instance)
    report = validate_cmdp(model)
    if not report.ok:
        print(f"invalid instance {args.instance}: " + "; ".join(report.failures), file=sys.stderr)
        return EXIT_CONFIG
    if feats is None:
        kind = args.features or envs.ONE_HOT
        d1 = args.d1 or model.n_states
        feats = envs.make_features(model, kind, d1, seed=args.feature_seed)
    if x_sa is None:
        x_sa = tabular_sa_features(model.n_states, model.n_actions)
    if args.theta:
        theta = np.array(json.loads(Path(args.theta).read_text()), dtype=float)
    else:
        theta = np.zeros(x_sa.shape[2])
    gamma = np.array([float(g) for g in args.gamma.split(",")]) if args.gamma else np.zeros(
        model.n_constraints
    )
    if (gamma < 0).any() or (gamma > args.multiplier_cap).any():
        print(f"gamma outside [0, {args.multiplier_cap}] rejected", file=sys.stderr)
        return EXIT_CONFIG

    pol = SoftmaxPolicy(x_sa, theta)
    sol = oracle.solve(model, pol, gamma, feats)
    doc = sol.to_document()
    audit_failures = []
    if sol.lambda_e <= 0:
        audit_failures.append(
            f"negative-definiteness audit failed: lambda_e = {sol.lambda_e!r} <= 0"
        )
    doc["audit_failures"] = audit_failures
    print(_json_dumps(doc), end="")
    return EXIT_OK


# --- gen ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.kind == envs.BINDING_CHAIN:
        model, meta = envs.binding_chain_cmdp(args.n_states, seed=args.seed)
        print(f"binding chain margins: {meta}", file=sys.stderr)
    else:
        spec = envs.EnvSpec(
            kind=args.kind,
            n_states=args.n_states,
            n_actions=args.n_actions,
            n_constraints=args.n_constraints,
            seed=args.seed,
            min_transition_prob=args.rho,
            cost_high=args.cost_high,
        )
        model = envs.random_ergodic_cmdp(spec)
    feats = None
    if args.features:
        d1 = args.d1 or model.n_states
        feats = envs.make_features(model, args.features, d1, seed=args.feature_seed)
    x_sa = None
    if args.sa_features == "tabular":
        x_sa = tabular_sa_features(model.n_states, model.n_actions)
    elif args.sa_features == "reduced_tabular":
        x_sa = reduced_tabular_sa_features(model.n_states, model.n_actions)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_cmdp(out, model, state_features=feats, sa_features=x_sa)
    print(f"wrote {out}")
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cmdp-lab",
        description="Constrained (natural) critic-actor laboratory on finite CMDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config across seeds")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seeds", default=None, help="seed count N or comma list")
    p_run.add_argument("--jobs", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="compare variants on one config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--variants", required=True, help="comma list, e.g. c-ac,c-nca,c-nca-m")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seeds", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)

    p_verify = sub.add_parser("verify", help="run the acceptance and audit suite")
    p_verify.add_argument("--out", default=None)
    p_verify.add_argument(
        "--acceptance-only", action="store_true", help="skip the fast module audits"
    )

    p_oracle = sub.add_parser("oracle", help="exact oracle dump for a frozen (theta, gamma)")
    p_oracle.add_argument("--instance", required=True)
    p_oracle.add_argument("--theta", default=None, help="JSON file with the parameter vector")
    p_oracle.add_argument("--gamma", default=None, help="comma list of multipliers")
    p_oracle.add_argument("--multiplier-cap", type=float, default=1000.0)
    p_oracle.add_argument("--features", default=None, choices=[envs.ONE_HOT, envs.RANDOM_PROJECTION])
    p_oracle.add_argument("--d1", type=int, default=None)
    p_oracle.add_argument("--feature-seed", type=int, default=0)

    p_gen = sub.add_parser("gen", help="generate a CMDP instance file")
    p_gen.add_argument("--kind", default=envs.RANDOM_ERGODIC,
                       choices=[envs.RANDOM_ERGODIC, envs.BINDING_CHAIN])
    p_gen.add_argument("--n-states", type=int, default=5)
    p_gen.add_argument("--n-actions", type=int, default=2)
    p_gen.add_argument("--n-constraints", type=int, default=1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--rho", type=float, default=0.01)
    p_gen.add_argument("--cost-high", type=float, default=1.0)
    p_gen.add_argument("--features", default=None, choices=[envs.ONE_HOT, envs.RANDOM_PROJECTION])
    p_gen.add_argument("--d1", type=int, default=None)
    p_gen.add_argument("--feature-seed", type=int, default=0)
    p_gen.add_argument("--sa-features", default=None, choices=["tabular", "reduced_tabular"])
    p_gen.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    out_dir = Path(args.out if getattr(args, "out", None) else _default_out())

    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.seeds:
                config.seeds = _parse_seeds(args.seeds)
            return cmd_run(config, out_dir, jobs=args.jobs)
        if args.command == "sweep":
            config = load_config(args.config)
            if args.seeds:
                config.seeds = _parse_seeds(args.seeds)
            return cmd_sweep(config, args.variants.split(","), out_dir, jobs=args.jobs)
        if args.command == "verify":
            return cmd_verify(out_dir, include_module_checks=not args.acceptance_only)
        if args.command == "oracle":
            return cmd_oracle(args)
        if args.command == "gen":
            return cmd_gen(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except algorithm.StepFailure as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
