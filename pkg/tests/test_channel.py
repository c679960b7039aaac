import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_amp import channel, checks
from onebit_amp.engine import solve
from onebit_amp.experiment import generate_problem
from onebit_amp.model import SolverConfig

finite_q = st.floats(-30, 30)
pos = st.floats(1e-3, 10)
noise = st.one_of(st.just(0.0), st.floats(1e-6, 10))
sign = st.sampled_from([-1.0, 1.0])


def test_h0_trivial_values():
    assert channel.h0(0.0, 1.0, 0.3) == 0.5
    assert channel.h0(1e3, 1.0, 0.0) == 0.0
    assert channel.h0(-1e3, 1.0, 0.0) == 1.0


def test_h1_h2_at_origin():
    assert channel.h1(0.0, 1.0, 0.0) == pytest.approx(-1 / math.sqrt(2 * math.pi), rel=1e-14)
    assert channel.h2(0.0, 1.0, 0.0) == pytest.approx(0.5, rel=1e-14)


def test_h_functions_match_quadrature(rng):
    for _ in range(25):
        q, tau_q, _, gw = checks.random_channel_instance(rng)
        assert channel.h0(q, tau_q, gw) == pytest.approx(checks.quad_h0(q, tau_q, gw), abs=1e-10)
        assert channel.h1(q, tau_q, gw) == pytest.approx(checks.quad_h(1, q, tau_q, gw), rel=1e-7, abs=1e-12)
        assert channel.h2(q, tau_q, gw) == pytest.approx(checks.quad_h(2, q, tau_q, gw), rel=1e-7, abs=1e-12)


def test_h_functions_match_two_dimensional_quadrature():
    # the defining double integral over (z, w) without any closed-form inner step
    from scipy import integrate

    q, tau_q, gw = 0.4, 0.8, 0.3
    for k, fn in ((1, channel.h1), (2, channel.h2)):
        val, _ = integrate.dblquad(
            lambda w, z: z**k * checks._gauss(z, q, tau_q) * checks._gauss(w, 0.0, gw),
            -12, 12, lambda z: -12.0, lambda z: -z, epsabs=1e-13, epsrel=1e-11)
        assert fn(q, tau_q, gw) == pytest.approx(val, rel=1e-7)


def test_half_normal_mean():
    mom = channel.posterior_moments_z(np.array([0.0]), 1.0, np.array([1.0]), 0.0)
    assert mom.mean_z[0] == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert mom.var_z[0] == pytest.approx(1 - 2 / math.pi, rel=1e-13)


@given(finite_q, pos, noise, sign)
def test_sign_symmetry(q, tau_q, gw, y):
    a = channel.posterior_moments_z(np.array([q]), tau_q, np.array([y]), gw)
    b = channel.posterior_moments_z(np.array([-q]), tau_q, np.array([-y]), gw)
    assert a.mean_z[0] == -b.mean_z[0]
    assert a.var_z[0] == b.var_z[0]


@given(st.floats(-1e3, 1e3), pos, noise, sign)
def test_posterior_variance_in_range(q, tau_q, gw, y):
    mom = channel.posterior_moments_z(np.array([q]), tau_q, np.array([y]), gw)
    assert np.isfinite(mom.mean_z[0])
    assert 0.0 <= mom.var_z[0] <= tau_q
    assert np.isfinite(mom.log_evidence) and mom.log_evidence <= 0.0


@given(finite_q, pos, noise)
def test_evidences_sum_to_one(q, tau_q, gw):
    up = channel.posterior_moments_z(np.array([q]), tau_q, np.array([1.0]), gw).log_evidence
    dn = channel.posterior_moments_z(np.array([q]), tau_q, np.array([-1.0]), gw).log_evidence
    assert math.exp(up) + math.exp(dn) == pytest.approx(1.0, abs=1e-12)
    assert math.exp(dn) == pytest.approx(float(channel.h0(q, tau_q, gw)), abs=1e-12)


def test_posterior_moments_match_quadrature(rng):
    for _ in range(25):
        q, tau_q, y, gw = checks.random_channel_instance(rng)
        u0, m, v = checks.quad_channel_moments(q, tau_q, y, gw)
        mom = channel.posterior_moments_z(np.array([q]), tau_q, np.array([y]), gw)
        assert mom.mean_z[0] == pytest.approx(m, rel=1e-7, abs=1e-10)
        assert mom.var_z[0] == pytest.approx(v, rel=1e-7)
        assert math.exp(mom.log_evidence) == pytest.approx(u0, rel=1e-7)


def test_deep_tail_no_nan():
    q = np.array([-40.0, 40.0, -1e4])
    mom = channel.posterior_moments_z(q, 1.0, np.ones(3), 0.0)
    assert np.all(np.isfinite(mom.mean_z)) and np.all(np.isfinite(mom.var_z))
    # the evidence of an observation far against the prior pins z to the boundary
    assert mom.mean_z[0] == pytest.approx(0.0, abs=0.05)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        channel.posterior_moments_z(np.zeros(2), 1.0, np.array([1.0, 0.0]), 0.0)
    with pytest.raises(ValueError):
        channel.posterior_moments_z(np.zeros(1), 0.0, np.ones(1), 0.0)
    with pytest.raises(ValueError):
        channel.posterior_moments_z(np.zeros(1), 1.0, np.ones(1), -1.0)


def test_zero_q_gives_zero_gradient():
    y = np.array([1.0, -1.0, 1.0])
    _, d1, _ = channel.noise_objective_and_derivatives(np.zeros(3), 0.7, y, 0.1)
    assert d1 == 0.0
    assert np.all(channel.dh0_dgamma(np.zeros(3), 0.7, 0.1) == 0.0)


def test_noise_derivatives_match_finite_differences(rng):
    for _ in range(10):
        q, tau_q, y, gw = checks.random_noise_instance(rng)
        _, d1, d2 = channel.noise_objective_and_derivatives(q, tau_q, y, gw)
        fd1, fd2 = checks.fd_derivatives(checks.mp_noise_objective(q, tau_q, y), gw)
        assert d1 == pytest.approx(fd1, rel=1e-5)
        assert d2 == pytest.approx(fd2, rel=1e-3)


def test_h0_derivatives_match_finite_differences():
    q, tau_q, gw, h = 0.8, 0.6, 0.2, 1e-5
    fd1 = (channel.h0(q, tau_q, gw + h) - channel.h0(q, tau_q, gw - h)) / (2 * h)
    fd2 = (channel.h0(q, tau_q, gw + h) - 2 * channel.h0(q, tau_q, gw) + channel.h0(q, tau_q, gw - h)) / h**2
    assert channel.dh0_dgamma(q, tau_q, gw) == pytest.approx(fd1, rel=1e-7)
    assert channel.d2h0_dgamma2(q, tau_q, gw) == pytest.approx(fd2, rel=1e-3)


def test_estimate_identity_cases():
    y = np.array([1.0, -1.0])
    assert channel.estimate_noise_param(np.zeros(2), 1.0, y, 0.05, iters=3) == 0.05
    assert channel.estimate_noise_param(np.array([0.3, 0.1]), 1.0, y, 0.05, iters=0) == 0.05


@given(st.integers(0, 2**32 - 1), st.floats(1e-6, 2.0))
def test_estimate_never_decreases_g1(seed, gw0):
    rng = np.random.default_rng(seed)
    q, tau_q, y, _ = checks.random_noise_instance(rng)
    g0 = channel.noise_objective(q, tau_q, y, gw0)
    gw = channel.estimate_noise_param(q, tau_q, y, gw0, iters=5)
    assert channel.GAMMA_W_FLOOR <= gw <= channel.GAMMA_W_CEILING
    assert channel.noise_objective(q, tau_q, y, gw) >= g0


def test_estimate_from_converged_oracle_run():
    gw_true = 0.02
    x, problem, lam, theta = generate_problem(256, 26, 10_000, gw_true, np.random.SeedSequence(3))
    rep = solve(problem, lam, theta, SolverConfig().as_oracle())
    assert rep.converged
    q, tau_q = rep.state.q, rep.state.tau_q
    est = channel.estimate_noise_param(q, tau_q, problem.y, 1e-2, iters=50)
    grid = np.geomspace(1e-4, 1.0, 2001)
    best = grid[np.argmax([channel.noise_objective(q, tau_q, problem.y, g) for g in grid])]
    assert est == pytest.approx(best, rel=5e-3)
    assert gw_true / 2 <= est <= gw_true * 2
