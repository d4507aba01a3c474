"""Critic convergence-rate study on the binding chain.

Runs the natural critic-actor under standard and sqrt-log schedules over a
seed batch, then reports windowed critic errors at two checkpoints and the
fitted log-log decay slopes. With --out, per-seed CSV logs are written in the
standard schema.

Usage:
    python scripts/rate_experiment.py [--horizon 500000] [--seeds 10] [--out DIR]
"""

import argparse
from pathlib import Path

import numpy as np

from cmdp_lab import algorithm, envs, metrics, policy, schedules


def run_mode(mode, model, feats, x_sa, horizon, seeds, eval_every, out_dir):
    if mode == "standard":
        sch = schedules.ScheduleSet.standard(0.5, 0.52, 1.0, c_a=0.03, c_b=0.5, c_c=1.0, c_d=1.0)
    else:
        sch = schedules.ScheduleSet.modified(0.5, 1.0, c_a=0.012, c_b=0.5, c_c=1.0, c_d=1.0)
    cfg = algorithm.AlgorithmConfig.for_variant("c-nca", sch, eval_every=eval_every)
    rows = []
    for seed in seeds:
        log = algorithm.run(model, feats, x_sa, cfg, horizon=horizon, seed=seed)
        r = log.records
        rows.append(
            dict(
                z_mid=metrics.windowed_mean(r, "z_sq", min(10_000, horizon)),
                z_final=metrics.windowed_mean(r, "z_sq", horizon),
                slope=metrics.fit_rate(r, "z_sq", 1_000, min(100_000, horizon)).slope,
                gap=float(r[-1].gap[0]),
            )
        )
        if out_dir is not None:
            metrics.write_csv(out_dir / f"rate_{mode}_seed{seed}.csv", r)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=500_000)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--eval-every", type=int, default=100)
    ap.add_argument("--n-states", type=int, default=6)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    model, meta = envs.binding_chain_cmdp(args.n_states, seed=0)
    feats = envs.make_features(model, envs.RANDOM_PROJECTION, args.n_states - 2, seed=1)
    x_sa = policy.reduced_tabular_sa_features(args.n_states, 2)
    out_dir = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)

    print(f"binding chain: alpha = {meta['alpha']:.4f}, "
          f"greedy violation margin = +{meta['greedy_violation_margin']:.4f}")
    print(f"{'mode':<10} {'win z^2 @1e4':>14} {'win z^2 final':>14} {'slope':>8} {'gap':>9}")
    for mode in ("standard", "modified"):
        rows = run_mode(mode, model, feats, x_sa, args.horizon, range(args.seeds),
                        args.eval_every, out_dir)
        med = lambda k: float(np.median([r[k] for r in rows]))
        print(f"{mode:<10} {med('z_mid'):>14.3e} {med('z_final'):>14.3e} "
              f"{med('slope'):>8.3f} {med('gap'):>+9.4f}")


if __name__ == "__main__":
    main()
