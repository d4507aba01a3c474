"""Six-way variant comparison on one constrained instance.

Runs C-AC, C-NAC, C-CA, C-NCA plus the sqrt-log ("modified") versions of the
critic-actor variants over a common seed batch and prints final objective and
constraint gap as mean ± standard error per variant.

Usage:
    python scripts/variant_comparison.py [--horizon 200000] [--seeds 10]
"""

import argparse
import math

import numpy as np

from cmdp_lab import algorithm, envs, metrics, policy, schedules

VARIANTS = ["c-ac", "c-nac", "c-ca", "c-nca", "c-ca-m", "c-nca-m"]


def build_schedules(modified):
    if modified:
        return schedules.ScheduleSet.modified(0.5, 1.0, c_a=0.012, c_b=0.5, c_c=1.0, c_d=1.0)
    return schedules.ScheduleSet.standard(0.5, 0.52, 1.0, c_a=0.03, c_b=0.5, c_c=1.0, c_d=1.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n-states", type=int, default=6)
    ap.add_argument("--eval-every", type=int, default=500)
    args = ap.parse_args()

    model, meta = envs.binding_chain_cmdp(args.n_states, seed=0)
    feats = envs.make_features(model, envs.RANDOM_PROJECTION, args.n_states - 2, seed=1)
    x_sa = policy.reduced_tabular_sa_features(args.n_states, 2)
    print(f"alpha = {meta['alpha']:.4f}; objective below is the long-run cost J "
          f"(lower is better), gap <= 0 means the constraint is met\n")
    print(f"{'variant':<10} {'objective (mean ± stderr)':<28} gap (mean ± stderr)")

    for token in VARIANTS:
        modified = token.endswith("-m")
        name = token[:-2] if modified else token
        cfg = algorithm.AlgorithmConfig.for_variant(
            name, build_schedules(modified), eval_every=args.eval_every
        )
        objectives, gaps = [], []
        for seed in range(args.seeds):
            log = algorithm.run(model, feats, x_sa, cfg, horizon=args.horizon, seed=seed)
            T = log.records[-1].t
            objectives.append(metrics.windowed_mean(log.records, "objective", T))
            gaps.append(float(log.records[-1].gap[0]))
        n = len(objectives)
        o, g = np.array(objectives), np.array(gaps)
        print(f"{token:<10} {f'{o.mean():.5f} ± {o.std(ddof=1) / math.sqrt(n):.5f}':<28} "
              f"{g.mean():+.4f} ± {g.std(ddof=1) / math.sqrt(n):.4f}")


if __name__ == "__main__":
    main()
