"""Bernoulli / Gaussian-mixture input channel.

Posterior moments of a signal entry ``x`` observed through the scalar
pseudo-channel ``r = x + N(0, tau_r)`` and EM estimation of the prior
parameters from the pseudo-observations ``r``.  All density ratios are
formed in the log domain.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import SignalPriorParams

LOG_2PI = np.log(2.0 * np.pi)

VARIANCE_FLOOR = 1e-12
STARVATION_FRACTION = 1e-8
BACKTRACK_HALVINGS = 20


class ComponentStarvation(RuntimeWarning):
    """A mixture component received (almost) no responsibility."""


def log_normal_pdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def _check_tau(tau_r):
    if not (tau_r > 0.0):
        raise ValueError(f"tau_r must be positive, got {tau_r}")


def _log_joint(r, tau_r, lam: SignalPriorParams) -> np.ndarray:
    """(N, D+1) log weights; column 0 is the spike, column i the i-th Gaussian."""
    _check_tau(tau_r)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        log_spike = np.log1p(-lam.kappa) + log_normal_pdf(r, 0.0, tau_r)
        log_w = np.log(lam.kappa) + np.log(lam.weights)
    slab = log_w + log_normal_pdf(r[..., None], lam.means, lam.variances + tau_r)
    return np.concatenate([log_spike[..., None], slab], axis=-1)


def log_psi_norm(r, tau_r, lam: SignalPriorParams):
    return logsumexp(_log_joint(r, tau_r, lam), axis=-1)


def psi_norm(r, tau_r, lam: SignalPriorParams):
    """Normalizing constant of ``p(x | lam) N(x | r, tau_r)`` in ``x``."""
    return np.exp(log_psi_norm(r, tau_r, lam))


@dataclass(frozen=True)
class Responsibilities:
    psi0: np.ndarray  # (N,)
    psi: np.ndarray  # (N, D)


def responsibilities(r, tau_r, lam: SignalPriorParams) -> Responsibilities:
    lj = _log_joint(r, tau_r, lam)
    post = np.exp(lj - logsumexp(lj, axis=-1, keepdims=True))
    return Responsibilities(psi0=post[..., 0], psi=post[..., 1:])


def _component_posteriors(r, tau_r, lam):
    """Per-component Gaussian posterior mean (N, D) and variance (D,)."""
    g = lam.variances
    mean = (lam.means * tau_r + np.asarray(r, dtype=float)[..., None] * g) / (g + tau_r)
    var = g * tau_r / (g + tau_r)
    return mean, var


def posterior_mean_var_x(r, tau_r, lam: SignalPriorParams):
    """Entrywise posterior mean and variance of ``x`` given ``r``."""
    resp = responsibilities(r, tau_r, lam)
    m, v = _component_posteriors(r, tau_r, lam)
    x_hat = np.sum(resp.psi * m, axis=-1)
    ex2 = np.sum(resp.psi * (v + m * m), axis=-1)
    return x_hat, np.maximum(ex2 - x_hat * x_hat, 0.0)


def posterior_moments_x(r, tau_r, lam: SignalPriorParams):
    """Posterior mean vector and the averaged posterior variance."""
    x_hat, var = posterior_mean_var_x(r, tau_r, lam)
    return x_hat, float(np.mean(var))


def em_objective(r, tau_r, lam: SignalPriorParams) -> float:
    """Marginal log-likelihood ``sum_n log Psi(r_n)`` of the pseudo-observations."""
    return float(np.sum(log_psi_norm(r, tau_r, lam)))


def em_update_weights_means(resp: Responsibilities, r, tau_r, lam: SignalPriorParams):
    """Closed-form M-step for the Bernoulli rate, mixture weights and means.

    Components whose total responsibility is below ``1e-8 * N`` keep their
    previous mean and trigger a :class:`ComponentStarvation` warning.
    Returns ``(kappa, weights, means, starved)``.
    """
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    mass = resp.psi.sum(axis=0)
    spike_mass = resp.psi0.sum()
    slab_mass = mass.sum()
    kappa = float(np.clip(slab_mass / (spike_mass + slab_mass), 0.0, 1.0))

    starved = mass < STARVATION_FRACTION * n
    if np.any(starved):
        warnings.warn(
            f"component starvation in mixture components {np.flatnonzero(starved).tolist()}",
            ComponentStarvation,
            stacklevel=2,
        )
    xi = mass / slab_mass if slab_mass > 0 else lam.weights.copy()
    xi = xi / xi.sum()

    # weights psi/(gamma+tau_r) share the denominator within a component
    prec = 1.0 / (lam.variances + tau_r)
    num = (resp.psi * r[:, None]).sum(axis=0) * prec
    den = mass * prec
    mu = lam.means.copy()
    ok = ~starved
    mu[ok] = num[ok] / den[ok]
    return kappa, xi, mu, starved


def gm_variance_objective(psi_i, r, tau_r, gamma, mu) -> float:
    """The part of the EM objective that depends on one mixture variance."""
    v = gamma + tau_r
    d2 = (np.asarray(r, dtype=float) - mu) ** 2
    return float(np.sum(psi_i * (-0.5 * np.log(v) - 0.5 * d2 / v)))


def gm_variance_derivatives(psi_i, r, tau_r, gamma, mu):
    """First and second derivative of the EM objective in the i-th variance."""
    v = gamma + tau_r
    d2 = (np.asarray(r, dtype=float) - mu) ** 2
    f1 = np.sum(psi_i * (0.5 * d2 / v**2 - 0.5 / v))
    f2 = np.sum(psi_i * (-d2 / v**3 + 0.5 / v**2))
    return float(f1), float(f2)


def update_gm_variance(psi_i, r, tau_r, gamma, mu, floor: float = VARIANCE_FLOOR) -> float:
    """One second-order step on a mixture variance.

    Newton's step when the objective is locally concave; otherwise a
    halving line search along the gradient sign starting at ``gamma / 2``.
    """
    f1, f2 = gm_variance_derivatives(psi_i, r, tau_r, gamma, mu)
    if f1 == 0.0:
        return gamma
    if f2 < 0.0:
        return max(gamma - f1 / f2, floor)

    f0 = gm_variance_objective(psi_i, r, tau_r, gamma, mu)
    step = 0.5 * gamma
    for _ in range(BACKTRACK_HALVINGS):
        cand = max(gamma + np.sign(f1) * step, floor)
        if gm_variance_objective(psi_i, r, tau_r, cand, mu) > f0:
            return cand
        step *= 0.5
    return gamma


def em_round(r, tau_r, lam: SignalPriorParams, update_variances: bool = True,
             floor: float = VARIANCE_FLOOR) -> SignalPriorParams:
    """One EM round: E-step, closed-form weights/means, then the variance steps."""
    resp = responsibilities(r, tau_r, lam)
    kappa, xi, mu, starved = em_update_weights_means(resp, r, tau_r, lam)
    gammas = lam.variances.copy()
    if update_variances:
        old_mu = lam.means
        for i in range(lam.n_components):
            if starved[i]:
                continue
            gammas[i] = update_gm_variance(resp.psi[:, i], r, tau_r, gammas[i], old_mu[i], floor)
    return SignalPriorParams.from_arrays(kappa, xi, mu, gammas)


def estimate_signal_params(r, tau_r, lam_init: SignalPriorParams, iters: int = 1,
                           floor: float = VARIANCE_FLOOR) -> SignalPriorParams:
    lam = lam_init
    for _ in range(iters):
        lam = em_round(r, tau_r, lam, floor=floor)
    return lam
