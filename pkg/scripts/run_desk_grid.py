"""Run the desk-scale Monte-Carlo grid and print a per-cell summary.

    python3 scripts/run_desk_grid.py --out results/desk --jobs 4
"""
import argparse
import os
import time

from onebit_amp import experiment
from onebit_amp.experiment import GridConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--N", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = GridConfig(N=args.N, trials=args.trials, seed=args.seed)
    t0 = time.perf_counter()
    res = experiment.run_grid(cfg, jobs=args.jobs, progress=print)
    os.makedirs(args.out, exist_ok=True)
    experiment.write_grid_csv(res, os.path.join(args.out, "grid.csv"))
    experiment.write_grid_csv(res, os.path.join(args.out, "grid_scaled.csv"), scaled=True)
    experiment.write_trials_csv(res, os.path.join(args.out, "trials.csv"))
    experiment.write_curves(res, cfg, args.out)

    print(f"\n{'S/N':>5} {'gw':>5} {'M/N':>4} {'arm':>11} {'SNR':>7} {'scaled':>7} {'iters':>6} {'div':>4}")
    for r in res.rows:
        print(f"{r.sparsity:5.2f} {r.gamma_w:5.2f} {r.ratio:4g} {r.arm:>11} {r.mean_snr_db:7.2f} "
              f"{r.mean_snr_scaled_db:7.2f} {r.mean_iters:6.0f} {r.trials_diverged:4d}")
    print(f"\n{time.perf_counter() - t0:.0f}s, outputs in {args.out}")


if __name__ == "__main__":
    main()
