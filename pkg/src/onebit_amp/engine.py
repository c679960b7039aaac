"""AMP with built-in parameter estimation for sign-quantized measurements.

One iteration runs, in order: output nonlinear step (channel moments),
input linear step, EM update of the signal prior, input nonlinear step
(prior moments), output linear step with the Onsager term, Newton update of
the noise variance, and the convergence test on ``x_hat``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, prior
from .model import (
    GampState,
    NoisePriorParams,
    Problem,
    SignalPriorParams,
    SolverConfig,
    validate_noise,
    validate_prior,
)

log = logging.getLogger(__name__)

TAU_FLOOR = 1e-12


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"divergence at iteration {iteration}: non-finite {what}")
        self.iteration = iteration
        self.what = what


@dataclass
class SolveReport:
    x_hat: np.ndarray
    lambda_hat: SignalPriorParams
    theta_hat: NoisePriorParams
    iterations: int
    converged: bool
    residual_trace: list[float] = field(default_factory=list)
    state: GampState | None = None


def damp(new, old, rate: float):
    if rate == 1.0:
        return new
    return rate * new + (1.0 - rate) * old


def output_nonlinear_update(state: GampState, problem: Problem, theta: NoisePriorParams):
    mom = channel.posterior_moments_z(state.q, state.tau_q, problem.y, theta.gamma_w)
    s = (mom.mean_z - state.q) / state.tau_q
    tau_s = float(np.mean((1.0 - mom.var_z / state.tau_q) / state.tau_q))
    return s, max(tau_s, 0.0)


def input_linear_update(state: GampState, problem: Problem):
    n = problem.A.shape[1]
    tau_s = max(state.tau_s, TAU_FLOOR)
    tau_r = 1.0 / (problem.frob_sq / n * tau_s)
    r = state.x_hat + tau_r * (problem.A.T @ state.s)
    return r, tau_r


def output_linear_update(state: GampState, problem: Problem):
    m = problem.A.shape[0]
    tau_q = problem.frob_sq / m * state.tau_x
    q = problem.A @ state.x_hat - tau_q * state.s
    return q, tau_q


def initial_state(problem: Problem, lam: SignalPriorParams) -> GampState:
    m, n = problem.A.shape
    tau_x = lam.second_moment()
    if not (np.isfinite(tau_x) and tau_x > 0.0):
        tau_x = 1.0
    x = np.zeros(n)
    st = GampState(x_hat=x, tau_x=tau_x, q=np.zeros(m), tau_q=1.0,
                   s=np.zeros(m), tau_s=0.0, r=np.zeros(n), tau_r=1.0)
    st.q, st.tau_q = output_linear_update(st, problem)
    return st


def _require_finite(t, **values):
    for name, v in values.items():
        if not np.all(np.isfinite(v)):
            raise DivergenceError(t, name)


def solve(problem: Problem, lambda_init: SignalPriorParams, theta_init: NoisePriorParams,
          config: SolverConfig = SolverConfig()) -> SolveReport:
    """Recover ``x`` (and optionally the prior/noise parameters) from ``problem``.

    ``s`` and ``tau_s`` are damped at ``config.damping_rate``.  On the input
    side a damped copy ``x_bar`` of the estimate feeds ``r``, while
    ``x_hat`` and ``tau_x`` themselves stay undamped.  The first pass is
    undamped since there is no previous iterate to blend with.  Raises
    :class:`DivergenceError` on any non-finite state.
    """
    validate_prior(lambda_init)
    validate_noise(theta_init)
    lam, theta = lambda_init, theta_init
    rate = config.damping_rate
    floor = max(config.variance_floor, TAU_FLOOR)
    st = initial_state(problem, lam)
    trace: list[float] = []
    converged = False

    for t in range(config.max_iters):
        s_new, tau_s_new = output_nonlinear_update(st, problem, theta)
        if t == 0:
            st.s, st.tau_s = s_new, tau_s_new
        else:
            st.s = damp(s_new, st.s, rate)
            st.tau_s = damp(tau_s_new, st.tau_s, rate)
        st.tau_s = max(st.tau_s, floor)

        x_old = st.x_hat
        if t <= 1:
            x_bar = x_old
        else:
            x_bar = damp(x_old, x_bar, rate)
        st.r, st.tau_r = input_linear_update(replace(st, x_hat=x_bar), problem)
        _require_finite(t, r=st.r, tau_r=st.tau_r)

        if config.estimate_signal_params:
            lam = prior.estimate_signal_params(st.r, st.tau_r, lam, config.em_inner_iters,
                                               floor=config.variance_floor)

        st.x_hat, st.tau_x = prior.posterior_moments_x(st.r, st.tau_r, lam)
        st.tau_x = max(st.tau_x, floor)

        st.q, st.tau_q = output_linear_update(st, problem)
        _require_finite(t, x_hat=st.x_hat, q=st.q, tau_q=st.tau_q)

        if config.estimate_noise_param:
            gw = channel.estimate_noise_param(st.q, st.tau_q, problem.y, theta.gamma_w,
                                              config.noise_newton_iters)
            theta = NoisePriorParams(gw)

        resid = float(np.linalg.norm(st.x_hat - x_old) / max(np.linalg.norm(x_old), 1e-12))
        trace.append(resid)
        if resid < config.convergence_tol:
            converged = True
            break

    log.debug("solve: %d iterations, converged=%s", len(trace), converged)
    return SolveReport(x_hat=st.x_hat, lambda_hat=lam, theta_hat=theta,
                       iterations=len(trace), converged=converged, residual_trace=trace,
                       state=st)
