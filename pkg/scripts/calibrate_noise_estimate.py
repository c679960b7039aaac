"""Compare the Newton noise-variance estimate with a brute-force grid maximizer of g1.

At the final state of each AMP-PE run, g1 is maximized over a fine
log-spaced gamma_w grid and the result is set beside the solver's estimate.
"""
import numpy as np

from onebit_amp import channel
from onebit_amp.engine import solve
from onebit_amp.experiment import generate_problem
from onebit_amp.model import NoisePriorParams, SignalPriorParams, SolverConfig

GRID = np.geomspace(1e-10, 10.0, 11001)


def main(trials: int = 5, gamma_w: float = 0.02, ratio: int = 6):
    print(f"{'trial':>5} {'newton':>10} {'grid':>10} {'rel diff':>9}")
    for t in range(trials):
        x, p, _, _ = generate_problem(256, 26, ratio * 256, gamma_w, np.random.SeedSequence(1, spawn_key=(t,)))
        rep = solve(p, SignalPriorParams.default(), NoisePriorParams(1e-2), SolverConfig())
        q, tau_q = rep.state.q, rep.state.tau_q
        est = channel.estimate_noise_param(q, tau_q, p.y, rep.theta_hat.gamma_w, iters=50)
        g = [channel.noise_objective(q, tau_q, p.y, v) for v in GRID]
        best = GRID[int(np.argmax(g))]
        print(f"{t:5d} {est:10.5f} {best:10.5f} {abs(est - best) / best:9.2e}")


if __name__ == "__main__":
    main()
