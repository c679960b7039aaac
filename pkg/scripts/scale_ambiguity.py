"""Show that sign data fixes the noise variance only relative to the signal amplitude.

The likelihood is unchanged by x -> c x, gamma_w -> c^2 gamma_w (and the prior
scaled alike), so AMP-PE settles on an amplitude set by its initialization.
For several initial sparsity guesses this prints the raw gamma_w estimate, the
fitted amplitude alpha = <x, x_hat>/||x_hat||^2 and the rescaled estimate
alpha^2 * gamma_w_hat, which is the noise variance in the units of x_true.
"""
import argparse

import numpy as np

from onebit_amp.engine import solve
from onebit_amp.experiment import amplitude_fit, generate_problem, snr_db
from onebit_amp.model import NoisePriorParams, SignalPriorParams, SolverConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma-w", type=float, default=0.02)
    ap.add_argument("--ratio", type=float, default=6.0)
    ap.add_argument("--trials", type=int, default=5)
    args = ap.parse_args()
    N, S = 256, 26
    M = int(round(args.ratio * N))
    print(f"{'kappa0':>7} {'gw_hat':>9} {'alpha':>7} {'a2*gw_hat':>10} {'plain':>7} {'scaled':>7}")
    for kappa0 in (0.05, 0.1, 0.5, 1.0):
        rows = []
        for t in range(args.trials):
            x, p, _, _ = generate_problem(N, S, M, args.gamma_w, np.random.SeedSequence(0, spawn_key=(t,)))
            rep = solve(p, SignalPriorParams.default(1, kappa0), NoisePriorParams(1e-2), SolverConfig())
            a = amplitude_fit(x, rep.x_hat)
            rows.append((rep.theta_hat.gamma_w, a, a * a * rep.theta_hat.gamma_w, *snr_db(x, rep.x_hat)))
        m = np.mean(rows, axis=0)
        print(f"{kappa0:7.2f} {m[0]:9.4f} {m[1]:7.3f} {m[2]:10.4f} {m[3]:7.2f} {m[4]:7.2f}")
    print(f"true gamma_w = {args.gamma_w}")


if __name__ == "__main__":
    main()
