"""Sign-quantizer output channel with Gaussian noise added before quantization.

Measurement model: ``y = +1`` if ``z + w > 0`` else ``-1``, ``w ~ N(0, gamma_w)``.
The GAMP pseudo-prior on ``z`` is ``N(q, tau_q)``.

Everything is expressed through ``a = y * q / sqrt(tau_q + gamma_w)`` and the
inverse Mills ratio ``phi(a) / Phi(a)``, which is evaluated with the scaled
complementary error function so the far tails never produce 0/0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcx, log_ndtr

SQRT2 = np.sqrt(2.0)
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

GAMMA_W_FLOOR = 1e-10
GAMMA_W_CEILING = 1e4
BACKTRACK_HALVINGS = 20
STEP_RTOL = 1e-12
NEWTON_RTOL = 1e-9


def _total_var(tau_q, gamma_w):
    v = tau_q + gamma_w
    if not np.all(v > 0.0):
        raise ValueError("tau_q + gamma_w must be positive")
    return v


def normal_pdf(x, var):
    return INV_SQRT_2PI / np.sqrt(var) * np.exp(-0.5 * x * x / var)


def mills_ratio(a):
    """``phi(a) / Phi(a)`` for the standard normal, stable over the real line."""
    return SQRT_2_OVER_PI / erfcx(-np.asarray(a, dtype=float) / SQRT2)


# These three follow the closed forms literally; the solver path goes
# through the Mills ratio instead.

def h0(q, tau_q, gamma_w):
    """Probability that ``z + w <= 0`` when ``z ~ N(q, tau_q)``."""
    v = _total_var(tau_q, gamma_w)
    return 0.5 * erfc(np.asarray(q, dtype=float) / np.sqrt(v) / SQRT2)


def h1(q, tau_q, gamma_w):
    """``E[z ; z + w <= 0]``."""
    v = _total_var(tau_q, gamma_w)
    q = np.asarray(q, dtype=float)
    return q * h0(q, tau_q, gamma_w) - tau_q * normal_pdf(q, v)


def h2(q, tau_q, gamma_w):
    """``E[z^2 ; z + w <= 0]``."""
    v = _total_var(tau_q, gamma_w)
    q = np.asarray(q, dtype=float)
    return ((q * q + tau_q) * h0(q, tau_q, gamma_w)
            - q * (tau_q**2 + 2.0 * tau_q * gamma_w) / v * normal_pdf(q, v))


@dataclass(frozen=True)
class ChannelMoments:
    mean_z: np.ndarray
    var_z: np.ndarray
    log_evidence: float


def _check_signs(y):
    y = np.asarray(y, dtype=float)
    if np.any((y != 1.0) & (y != -1.0)):
        raise ValueError("y must contain only +1/-1")
    return y


def posterior_moments_z(q, tau_q, y, gamma_w) -> ChannelMoments:
    """Posterior mean/variance of ``z`` under ``N(z | q, tau_q) p(y | z)``.

    Uses Var = E[z^2] - E[z]^2, which after simplification reads
    ``tau_q - tau_q^2 / v * rho * (a + rho)`` with ``rho`` the Mills ratio.
    """
    if not (tau_q > 0.0):
        raise ValueError(f"tau_q must be positive, got {tau_q}")
    if gamma_w < 0.0:
        raise ValueError(f"gamma_w must be nonnegative, got {gamma_w}")
    y = _check_signs(y)
    q = np.asarray(q, dtype=float)
    v = tau_q + gamma_w
    sv = np.sqrt(v)
    a = y * q / sv
    rho = mills_ratio(a)
    mean = q + y * (tau_q / sv) * rho
    var = tau_q - (tau_q * tau_q / v) * rho * (a + rho)
    var = np.clip(var, 0.0, tau_q)
    return ChannelMoments(mean_z=mean, var_z=var, log_evidence=float(np.sum(log_ndtr(a))))


def noise_objective(q, tau_q, y, gamma_w) -> float:
    """``g1 = sum_m log U0(q_m, y_m)``, the log evidence of the measurements."""
    v = _total_var(tau_q, gamma_w)
    return float(np.sum(log_ndtr(np.asarray(y) * np.asarray(q) / np.sqrt(v))))


def noise_objective_and_derivatives(q, tau_q, y, gamma_w):
    """``g1`` and its first two derivatives in the noise variance.

    With ``dh0 = qbar phi(qbar) / (2 v)`` and
    ``d2h0 = (qbar^3 - 3 qbar) phi(qbar) / (4 v^2)``, the sign selector gives
    ``dU0 / U0 = -a rho / (2 v)`` and ``d2U0 / U0 = -(a^3 - 3a) rho / (4 v^2)``.
    """
    v = _total_var(tau_q, gamma_w)
    a = np.asarray(y, dtype=float) * np.asarray(q, dtype=float) / np.sqrt(v)
    rho = mills_ratio(a)
    d1 = -a * rho / (2.0 * v)
    d2 = -(a**3 - 3.0 * a) * rho / (4.0 * v * v)
    g1 = float(np.sum(log_ndtr(a)))
    return g1, float(np.sum(d1)), float(np.sum(d2 - d1 * d1))


def dh0_dgamma(q, tau_q, gamma_w):
    v = _total_var(tau_q, gamma_w)
    qb = np.asarray(q, dtype=float) / np.sqrt(v)
    return qb / (2.0 * np.sqrt(2.0 * np.pi) * v) * np.exp(-0.5 * qb * qb)


def d2h0_dgamma2(q, tau_q, gamma_w):
    v = _total_var(tau_q, gamma_w)
    qb = np.asarray(q, dtype=float) / np.sqrt(v)
    return (qb**3 - 3.0 * qb) / (4.0 * np.sqrt(2.0 * np.pi) * v * v) * np.exp(-0.5 * qb * qb)


def estimate_noise_param(q, tau_q, y, gamma_w_init, iters: int = 5,
                         floor: float = GAMMA_W_FLOOR, ceiling: float = GAMMA_W_CEILING) -> float:
    """Maximize ``g1`` in the noise variance by safeguarded Newton steps.

    Each step is Newton's when ``g1'' < 0`` and a gradient-sign step of size
    ``max(gamma, tau_q) / 2`` otherwise.  A step that does not increase
    ``g1`` is halved until it does not decrease it; if none of the halvings helps the
    iteration stops.  ``g1`` never decreases from ``gamma_w_init``.
    """
    if iters <= 0:
        return float(gamma_w_init)
    gamma = float(np.clip(gamma_w_init, floor, ceiling))
    tau_q = float(tau_q)
    g0, d1, d2 = noise_objective_and_derivatives(q, tau_q, y, gamma)
    for _ in range(iters):
        if d1 == 0.0:
            break
        if d2 < 0.0:
            step = -d1 / d2
        else:
            step = np.sign(d1) * 0.5 * max(gamma, tau_q)
        accepted = False
        for _ in range(BACKTRACK_HALVINGS):
            cand = float(np.clip(gamma + step, floor, ceiling))
            if abs(cand - gamma) <= STEP_RTOL * gamma:
                break
            g_c = noise_objective(q, tau_q, y, cand)
            if g_c >= g0:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        done = abs(cand - gamma) <= NEWTON_RTOL * gamma
        gamma = cand
        if done:
            break
        g0, d1, d2 = noise_objective_and_derivatives(q, tau_q, y, gamma)
    return gamma
