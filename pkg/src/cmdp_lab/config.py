"""Experiment configuration: strict JSON documents driving the CLI.

Unknown fields anywhere in the document are hard errors: a silently ignored
typo in an exponent name would invalidate a whole experiment. Field names
follow the serialization interfaces of the modules they configure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import envs
from .algorithm import VARIANTS, AlgorithmConfig
from .cmdp import Cmdp, StateFeatures, load_cmdp
from .policy import reduced_tabular_sa_features, tabular_sa_features
from .schedules import MODIFIED, STANDARD, DEFAULT_COEFFICIENTS, ScheduleSet


class ConfigError(ValueError):
    """A configuration document failed validation; the message names the field."""


def _require_keys(section: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"{where}: missing required field(s) {sorted(missing)}")


@dataclass
class ExperimentConfig:
    env: dict
    features: dict
    sa_features: dict
    algorithm: dict
    schedules: dict
    horizon: int
    seeds: list[int]
    eval_every: int
    out_dir: str = "."
    base_dir: Path = field(default_factory=Path)


def parse_config(doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    _require_keys(
        doc,
        allowed={
            "env",
            "features",
            "sa_features",
            "algorithm",
            "schedules",
            "horizon",
            "seeds",
            "eval_every",
            "out_dir",
        },
        required={"env", "features", "algorithm", "schedules", "horizon", "seeds"},
        where="config",
    )

    env = doc["env"]
    if "instance" in env:
        _require_keys(env, {"instance"}, {"instance"}, "env")
        path = base_dir / env["instance"]
        if not path.exists():
            raise ConfigError(f"env.instance: file {path} does not exist")
    else:
        _require_keys(
            env,
            allowed={
                "kind",
                "n_states",
                "n_actions",
                "n_constraints",
                "seed",
                "min_transition_prob",
                "cost_low",
                "cost_high",
            },
            required={"kind", "n_states"},
            where="env",
        )
        if env["kind"] not in (envs.RANDOM_ERGODIC, envs.BINDING_CHAIN):
            raise ConfigError(f"env.kind: unknown generator {env['kind']!r}")

    feats = doc["features"]
    _require_keys(feats, {"kind", "d1", "seed"}, {"kind"}, "features")
    if feats["kind"] not in (envs.ONE_HOT, envs.RANDOM_PROJECTION):
        raise ConfigError(f"features.kind: unknown kind {feats['kind']!r}")

    sa = doc.get("sa_features", {"kind": "reduced_tabular"})
    _require_keys(sa, {"kind", "d", "seed", "scale"}, {"kind"}, "sa_features")
    if sa["kind"] not in ("tabular", "reduced_tabular", "random"):
        raise ConfigError(f"sa_features.kind: unknown kind {sa['kind']!r}")

    alg = doc["algorithm"]
    _require_keys(
        alg,
        allowed={
            "variant",
            "modified",
            "projection_radius",
            "multiplier_cap",
            "fisher_init",
            "cost_noise",
            "inverse_update",
        },
        required={"variant"},
        where="algorithm",
    )
    if alg["variant"].lower() not in VARIANTS:
        raise ConfigError(f"algorithm.variant: unknown variant {alg['variant']!r}")

    sch = doc["schedules"]
    mode = sch.get("mode", MODIFIED if alg.get("modified") else STANDARD)
    if mode not in (STANDARD, MODIFIED):
        raise ConfigError(f"schedules.mode: unknown mode {mode!r}")
    if "modified" in alg and (mode == MODIFIED) != bool(alg["modified"]):
        raise ConfigError("algorithm.modified disagrees with schedules.mode")
    coeffs = {"c_a", "c_b", "c_c", "c_d"}
    if mode == STANDARD:
        _require_keys(sch, {"mode", "nu", "sigma", "beta", "delta"} | coeffs, {"nu", "beta"}, "schedules")
        if "sigma" not in sch and "delta" not in sch:
            raise ConfigError("schedules: standard mode needs sigma (or delta)")
    else:
        _require_keys(sch, {"mode", "nu", "beta"} | coeffs, {"nu", "beta"}, "schedules")

    horizon = doc["horizon"]
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError("horizon: must be an integer >= 1")
    seeds = doc["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: need a non-empty list of integers")
    eval_every = doc.get("eval_every", 100)
    if not isinstance(eval_every, int) or eval_every < 1:
        raise ConfigError("eval_every: must be an integer >= 1")

    return ExperimentConfig(
        env=env,
        features=feats,
        sa_features=sa,
        algorithm=alg,
        schedules={**sch, "mode": mode},
        horizon=horizon,
        seeds=list(seeds),
        eval_every=eval_every,
        out_dir=doc.get("out_dir", "."),
        base_dir=base_dir,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: not valid JSON ({exc})") from exc
    return parse_config(doc, base_dir=path.parent)


def build_model(config: ExperimentConfig) -> Cmdp:
    env = config.env
    if "instance" in env:
        model, _, _ = load_cmdp(config.base_dir / env["instance"])
        return model
    if env["kind"] == envs.BINDING_CHAIN:
        model, _ = envs.binding_chain_cmdp(env["n_states"], seed=env.get("seed", 0))
        return model
    spec = envs.EnvSpec(
        kind=env["kind"],
        n_states=env["n_states"],
        n_actions=env.get("n_actions", 2),
        n_constraints=env.get("n_constraints", 1),
        seed=env.get("seed", 0),
        min_transition_prob=env.get("min_transition_prob", 0.01),
        cost_low=env.get("cost_low", 0.0),
        cost_high=env.get("cost_high", 1.0),
    )
    return envs.random_ergodic_cmdp(spec)


def build_features(config: ExperimentConfig, model: Cmdp) -> StateFeatures:
    if "instance" in config.env:
        _, feats, _ = load_cmdp(config.base_dir / config.env["instance"])
        if feats is not None and "d1" not in config.features:
            return feats
    kind = config.features["kind"]
    d1 = config.features.get("d1", model.n_states)
    return envs.make_features(model, kind, d1, seed=config.features.get("seed", 0))


def build_sa_features(config: ExperimentConfig, model: Cmdp) -> np.ndarray:
    if "instance" in config.env:
        _, _, sa = load_cmdp(config.base_dir / config.env["instance"])
        if sa is not None:
            return sa
    section = config.sa_features
    if section["kind"] == "tabular":
        return tabular_sa_features(model.n_states, model.n_actions)
    if section["kind"] == "reduced_tabular":
        return reduced_tabular_sa_features(model.n_states, model.n_actions)
    return envs.random_sa_features(
        model.n_states,
        model.n_actions,
        section.get("d", model.n_states),
        seed=section.get("seed", 0),
        scale=section.get("scale", 1.0),
    )


def build_schedules(config: ExperimentConfig) -> ScheduleSet:
    sch = config.schedules
    coeffs = {k: sch.get(k, DEFAULT_COEFFICIENTS[k]) for k in DEFAULT_COEFFICIENTS}
    if sch["mode"] == STANDARD:
        sigma = sch.get("sigma", sch["nu"] + sch.get("delta", 0.02))
        return ScheduleSet.standard(sch["nu"], sigma, sch["beta"], **coeffs)
    return ScheduleSet.modified(sch["nu"], sch["beta"], **coeffs)


def build_algorithm_config(
    config: ExperimentConfig, schedules: ScheduleSet | None = None
) -> AlgorithmConfig:
    alg = config.algorithm
    return AlgorithmConfig.for_variant(
        alg["variant"],
        schedules if schedules is not None else build_schedules(config),
        projection_radius=alg.get("projection_radius", 100.0),
        multiplier_cap=alg.get("multiplier_cap", 1000.0),
        fisher_init=alg.get("fisher_init", 1.0),
        cost_noise=alg.get("cost_noise", 0.0),
        inverse_update=alg.get("inverse_update", "factorize"),
        eval_every=config.eval_every,
    )
