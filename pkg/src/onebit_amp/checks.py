"""Independent numerical oracles and the self-diagnostic batteries.

The oracles integrate the defining densities by adaptive quadrature
(``scipy.integrate.quad``) and differentiate the objectives with
high-precision central differences (``mpmath.diff``), so they share no code
path with the closed forms they check.  Each battery takes the function
under test as an argument, which is how the mutation tests inject faults.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np
from scipy import integrate
from scipy.special import ndtr

from . import channel, prior
from .model import SignalPriorParams

QUAD_KW = dict(epsabs=0.0, epsrel=1e-12, limit=400)


def _gauss(x, mean, var):
    return math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def _quad_pieces(f, pts) -> float:
    pts = np.unique(np.asarray(pts, dtype=float))
    with warnings.catch_warnings():
        # at epsrel=1e-12 quad reports roundoff on pieces that are already exact
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return float(sum(integrate.quad(f, a, b, **QUAD_KW)[0] for a, b in zip(pts[:-1], pts[1:])))


def _breakpoints(c1, c2, width, reach):
    """Breakpoints spaced at most ``width`` between two centres, plus tails out to ``reach``."""
    lo, hi = min(c1, c2), max(c1, c2)
    n = max(2, int(math.ceil((hi - lo) / width)) + 1)
    inner = np.linspace(lo, hi, n)
    tail = np.array([1.0, 3.0, 6.0, 10.0, 15.0]) * reach
    return np.concatenate([inner, lo - tail, hi + tail])


# -- signal side ---------------------------------------------------------------

def quad_signal_moments(r: float, tau_r: float, lam: SignalPriorParams):
    """``(Psi, E[x], Var[x])`` of ``p(x | lam) N(x | r, tau_r)`` by quadrature.

    The spike at zero contributes mass ``(1 - kappa) N(0 | r, tau_r)`` and
    nothing to the moments; each Gaussian component is integrated numerically.
    """
    spike = (1.0 - lam.kappa) * _gauss(0.0, r, tau_r)
    comps = []
    for c in lam.components:
        w = lam.kappa * c.weight
        if w == 0.0:
            continue
        pts = _breakpoints(r, c.mean, 0.5 * math.sqrt(min(c.variance, tau_r)),
                           math.sqrt(max(c.variance, tau_r)))
        comps.append((w, c.mean, c.variance, pts))

    def integral(k, shift=0.0):
        tot = 0.0
        for w, mu, g, pts in comps:
            tot += w * _quad_pieces(lambda x: (x - shift) ** k * _gauss(x, mu, g) * _gauss(x, r, tau_r), pts)
        return tot

    z = spike + integral(0)
    mean = integral(1) / z
    # central moment directly, the spike sits at x = 0
    var = (integral(2, shift=mean) + spike * mean**2) / z
    return z, mean, var


def random_prior(rng: np.random.Generator, n_components: int) -> SignalPriorParams:
    w = rng.dirichlet(np.ones(n_components))
    return SignalPriorParams.from_arrays(rng.uniform(0.02, 0.98), w / w.sum(),
                                         rng.uniform(-2.0, 2.0, n_components),
                                         rng.uniform(0.1, 3.0, n_components))


# -- channel side --------------------------------------------------------------

def _prob_y_given_z(y: float, z: float, gamma_w: float) -> float:
    """``P(y | z)``: a hard threshold without noise, a normal CDF otherwise."""
    if gamma_w == 0.0:
        return 1.0 if y * z > 0.0 else 0.0
    return float(ndtr(y * z / math.sqrt(gamma_w)))


def _z_breakpoints(q, tau_q, gamma_w):
    sd = math.sqrt(tau_q)
    pts = list(_breakpoints(q, 0.0, 0.5 * sd, sd))
    if gamma_w > 0.0:
        pts += list(np.arange(-8, 9) * math.sqrt(gamma_w))
    pts.append(0.0)
    return pts


def quad_h(k: int, q: float, tau_q: float, gamma_w: float) -> float:
    """``int z^k P(z + w <= 0 | z) N(z | q, tau_q) dz`` by quadrature over ``z``."""
    f = lambda z: z**k * _prob_y_given_z(-1.0, z, gamma_w) * _gauss(z, q, tau_q)
    pts = _z_breakpoints(q, tau_q, gamma_w)
    if gamma_w == 0.0:
        pts = [p for p in pts if p <= 0.0]
    return _quad_pieces(f, pts)


def quad_h0(q: float, tau_q: float, gamma_w: float) -> float:
    v = tau_q + gamma_w
    sd = math.sqrt(v)
    pts = [p for p in [min(q, 0.0) - 40.0 * sd, min(q, 0.0) - 5.0 * sd, q, 0.0] if p <= 0.0]
    return _quad_pieces(lambda u: _gauss(u, q, v), pts)


def quad_channel_moments(q: float, tau_q: float, y: float, gamma_w: float):
    """``(U0, E[z], Var[z])`` of ``P(y | z) N(z | q, tau_q)`` by quadrature."""
    lik = lambda z: _prob_y_given_z(y, z, gamma_w)
    pts = _z_breakpoints(q, tau_q, gamma_w)
    if gamma_w == 0.0:
        pts = [p for p in pts if y * p >= 0.0]
    u0 = _quad_pieces(lambda z: lik(z) * _gauss(z, q, tau_q), pts)
    mean = _quad_pieces(lambda z: z * lik(z) * _gauss(z, q, tau_q), pts) / u0
    var = _quad_pieces(lambda z: (z - mean) ** 2 * lik(z) * _gauss(z, q, tau_q), pts) / u0
    return u0, mean, var


def random_channel_instance(rng: np.random.Generator):
    q = rng.uniform(-3.0, 3.0)
    tau_q = rng.uniform(0.05, 3.0)
    gamma_w = 0.0 if rng.random() < 0.2 else rng.uniform(1e-3, 1.0)
    y = 1.0 if rng.random() < 0.5 else -1.0
    return q, tau_q, y, gamma_w


# -- finite-difference oracles ---------------------------------------------------

mpmath.mp.dps = 40


def mp_gm_variance_objective(psi_i, r, tau_r, mu, kappa, xi):
    """EM objective terms of one component as an mpmath function of its variance."""
    psi_i = [mpmath.mpf(float(p)) for p in psi_i]
    r = [mpmath.mpf(float(v)) for v in r]
    logw = mpmath.log(mpmath.mpf(kappa) * mpmath.mpf(xi))

    def f(g):
        v = g + tau_r
        return mpmath.fsum(p * (logw - 0.5 * mpmath.log(2 * mpmath.pi * v) - (rn - mu) ** 2 / (2 * v))
                           for p, rn in zip(psi_i, r))
    return f


def mp_noise_objective(q, tau_q, y):
    q = [mpmath.mpf(float(v)) for v in q]
    y = [int(v) for v in y]

    def g1(gw):
        sv = mpmath.sqrt(tau_q + gw)
        return mpmath.fsum(mpmath.log(mpmath.ncdf(yy * qq / sv)) for qq, yy in zip(q, y))
    return g1


def fd_derivatives(f, x0):
    """Central-difference first and second derivatives at 40 digits."""
    x0 = mpmath.mpf(x0)
    return float(mpmath.diff(f, x0, 1)), float(mpmath.diff(f, x0, 2))


def random_em_instance(rng: np.random.Generator, n: int = 25, n_components: int = 2):
    lam = random_prior(rng, n_components)
    tau_r = rng.uniform(0.05, 1.0)
    r = rng.normal(0.0, 1.5, n)
    return r, tau_r, lam


def random_noise_instance(rng: np.random.Generator, m: int = 30):
    tau_q = rng.uniform(0.05, 1.0)
    x = rng.normal(0.0, 1.0, m)
    q = x + rng.normal(0.0, math.sqrt(tau_q), m)
    y = np.where(x + rng.normal(0.0, 0.3, m) > 0, 1.0, -1.0)
    return q, tau_q, y, rng.uniform(0.01, 0.5)


# -- batteries -----------------------------------------------------------------

@dataclass
class BatteryResult:
    name: str
    passed: bool
    cases: int
    worst: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.cases} cases, worst {self.worst:.3g} "
                f"(tol {self.tolerance:g}), {self.seconds:.1f}s")


def rel_err(a, b, atol=0.0) -> float:
    return float(abs(a - b) / max(abs(b), atol if atol > 0 else 1e-300))


def _run(name, tol, cases: Callable, n: int, seed: int) -> BatteryResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for i in range(n):
        err, extra_ok = cases(rng, i)
        worst = max(worst, err)
        ok = ok and extra_ok and err <= tol
    return BatteryResult(name, ok, n, worst, tol, time.perf_counter() - t0)


def signal_quadrature_battery(n: int = 200, seed: int = 1, tol: float = 1e-6,
                              psi_norm=prior.psi_norm, moments=prior.posterior_mean_var_x) -> BatteryResult:
    def case(rng, i):
        lam = random_prior(rng, 1 + i % 3)
        tau_r = rng.uniform(0.1, 3.0)
        r = rng.uniform(-4.0, 4.0)
        z, m, v = quad_signal_moments(r, tau_r, lam)
        xm, xv = moments(np.array([r]), tau_r, lam)
        errs = [rel_err(float(psi_norm(np.array([r]), tau_r, lam)[0]), z),
                rel_err(float(xm[0]), m), rel_err(float(xv[0]), v)]
        return max(errs), True
    return _run("signal posterior vs quadrature", tol, case, n, seed)


def _channel_case(h_fn, k):
    def case(rng, i):
        q, tau_q, _, gamma_w = random_channel_instance(rng)
        ref = quad_h0(q, tau_q, gamma_w) if k == 0 else quad_h(k, q, tau_q, gamma_w)
        return rel_err(float(h_fn(q, tau_q, gamma_w)), ref, atol=1e-10), True
    return case


def h0_battery(n=200, seed=2, tol=1e-7, fn=channel.h0):
    return _run("h0 vs quadrature", tol, _channel_case(fn, 0), n, seed)


def h1_battery(n=200, seed=3, tol=1e-7, fn=channel.h1):
    return _run("h1 vs quadrature", tol, _channel_case(fn, 1), n, seed)


def h2_battery(n=200, seed=4, tol=1e-7, fn=channel.h2):
    return _run("h2 vs quadrature", tol, _channel_case(fn, 2), n, seed)


def channel_moments_battery(n=200, seed=5, tol=1e-7, fn=channel.posterior_moments_z) -> BatteryResult:
    def case(rng, i):
        q, tau_q, y, gamma_w = random_channel_instance(rng)
        u0, m, v = quad_channel_moments(q, tau_q, y, gamma_w)
        mom = fn(np.array([q]), tau_q, np.array([y]), gamma_w)
        mz, vz = float(mom.mean_z[0]), float(mom.var_z[0])
        in_range = 0.0 <= vz <= tau_q
        return max(rel_err(mz, m, atol=1e-10), rel_err(vz, v), rel_err(math.exp(mom.log_evidence), u0)), in_range
    return _run("channel posterior vs quadrature", tol, case, n, seed)


def gm_variance_derivative_battery(n=100, seed=6, tol1=1e-5, tol2=1e-3, fn=prior.gm_variance_derivatives):
    def case(rng, i):
        r, tau_r, lam = random_em_instance(rng)
        resp = prior.responsibilities(r, tau_r, lam)
        j = i % lam.n_components
        c = lam.components[j]
        g = c.variance
        f1, f2 = fn(resp.psi[:, j], r, tau_r, g, c.mean)
        fd1, fd2 = fd_derivatives(
            mp_gm_variance_objective(resp.psi[:, j], r, tau_r, c.mean, lam.kappa, c.weight), g)
        return max(rel_err(f1, fd1) / tol1, rel_err(f2, fd2) / tol2), True
    return _run(f"EM variance f', f'' vs finite differences (error/tol, tol {tol1:g}/{tol2:g})",
                1.0, case, n, seed)


def noise_derivative_battery(n=100, seed=7, tol1=1e-5, tol2=1e-3, fn=channel.noise_objective_and_derivatives):
    def case(rng, i):
        q, tau_q, y, gw = random_noise_instance(rng)
        g, d1, d2 = fn(q, tau_q, y, gw)
        f = mp_noise_objective(q, tau_q, y)
        fd1, fd2 = fd_derivatives(f, gw)
        return max(rel_err(d1, fd1) / tol1, rel_err(d2, fd2) / tol2, rel_err(g, float(f(gw))) / tol1), True
    return _run(f"noise g1', g1'' vs finite differences (error/tol, tol {tol1:g}/{tol2:g})",
                1.0, case, n, seed)


def symmetry_battery(n=200, seed=8, tol=1e-12) -> BatteryResult:
    def case(rng, i):
        q, tau_q, y, gamma_w = random_channel_instance(rng)
        qa = np.array([q])
        errs = [abs(channel.h0(q, tau_q, gamma_w) + channel.h0(-q, tau_q, gamma_w) - 1.0)]
        up = math.exp(channel.posterior_moments_z(qa, tau_q, np.array([1.0]), gamma_w).log_evidence)
        dn = math.exp(channel.posterior_moments_z(qa, tau_q, np.array([-1.0]), gamma_w).log_evidence)
        errs.append(abs(up + dn - 1.0))
        a = channel.posterior_moments_z(qa, tau_q, np.array([y]), gamma_w)
        b = channel.posterior_moments_z(-qa, tau_q, np.array([-y]), gamma_w)
        errs.append(abs(a.mean_z[0] + b.mean_z[0]))
        errs.append(abs(a.var_z[0] - b.var_z[0]))
        in_range = 0.0 <= a.var_z[0] <= tau_q * (1.0 + 1e-9)
        return max(errs), in_range
    return _run("channel symmetries", tol, case, n, seed)


def em_monotonicity_battery(n=50, seed=9, tol=1e-10) -> BatteryResult:
    """Closed-form weight/mean steps never decrease sum log Psi."""
    def case(rng, i):
        r, tau_r, lam = random_em_instance(rng, n=200, n_components=1 + i % 3)
        worst_drop = 0.0
        obj = prior.em_objective(r, tau_r, lam)
        for _ in range(10):
            lam = prior.em_round(r, tau_r, lam, update_variances=False)
            new = prior.em_objective(r, tau_r, lam)
            worst_drop = max(worst_drop, obj - new)
            obj = new
        return worst_drop, True
    return _run("EM closed-form monotonicity", tol, case, n, seed)


def noise_ascent_battery(n=50, seed=10, tol=1e-12) -> BatteryResult:
    def case(rng, i):
        q, tau_q, y, gw = random_noise_instance(rng)
        before = channel.noise_objective(q, tau_q, y, gw)
        after = channel.noise_objective(q, tau_q, y, channel.estimate_noise_param(q, tau_q, y, gw, iters=5))
        return max(before - after, 0.0), True
    return _run("noise variance update ascent", tol, case, n, seed)


def run_all(scale: float = 1.0) -> list[BatteryResult]:
    """Every battery; ``scale`` shrinks the case counts for quick runs."""
    k = lambda n: max(1, int(n * scale))
    return [
        signal_quadrature_battery(k(200)),
        h0_battery(k(200)),
        h1_battery(k(200)),
        h2_battery(k(200)),
        channel_moments_battery(k(200)),
        gm_variance_derivative_battery(k(100)),
        noise_derivative_battery(k(100)),
        symmetry_battery(k(200)),
        em_monotonicity_battery(k(50)),
        noise_ascent_battery(k(50)),
    ]
