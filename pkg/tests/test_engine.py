import numpy as np
import pytest
from hypothesis import given, strategies as st

from onebit_amp import channel, engine, prior
from onebit_amp.engine import DivergenceError, damp, solve
from onebit_amp.experiment import generate_problem, snr_db
from onebit_amp.model import GampState, NoisePriorParams, SignalPriorParams, SolverConfig, build_problem


def _state(m, n, **kw):
    base = dict(x_hat=np.zeros(n), tau_x=1.0, q=np.zeros(m), tau_q=1.0, s=np.zeros(m),
                tau_s=1.0, r=np.zeros(n), tau_r=1.0)
    base.update(kw)
    return GampState(**base)


def test_damp_trivial():
    assert damp(3.0, 7.0, 1.0) == 3.0
    assert damp(2.5, 2.5, 0.3) == 2.5
    assert damp(1.0, 0.0, 0.1) == pytest.approx(0.1)


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0.0, 1.0))
def test_damp_is_convex_combination(new, old, rate):
    out = damp(new, old, rate)
    assert min(new, old) - 1e-9 * (abs(new) + abs(old)) <= out <= max(new, old) + 1e-9 * (abs(new) + abs(old))


def test_uninformative_channel_gives_zero_innovation(monkeypatch):
    p = build_problem(np.eye(3), [1, -1, 1])
    st_ = _state(3, 3, q=np.array([0.2, -0.1, 0.4]), tau_q=0.7)
    monkeypatch.setattr(channel, "posterior_moments_z",
                        lambda q, tau_q, y, gw: channel.ChannelMoments(q.copy(), np.full(q.shape, tau_q), 0.0))
    s, tau_s = engine.output_nonlinear_update(st_, p, NoisePriorParams(0.1))
    assert np.all(s == 0.0) and tau_s == 0.0


def test_output_nonlinear_matches_recomputation(rng):
    m = 40
    A = rng.standard_normal((m, 10))
    p = build_problem(A, np.where(rng.random(m) < 0.5, 1.0, -1.0))
    q, tau_q, gw = rng.standard_normal(m), 0.6, 0.05
    s, tau_s = engine.output_nonlinear_update(_state(m, 10, q=q, tau_q=tau_q), p, NoisePriorParams(gw))
    for i in range(m):
        mom = channel.posterior_moments_z(q[i:i + 1], tau_q, p.y[i:i + 1], gw)
        assert s[i] == pytest.approx((mom.mean_z[0] - q[i]) / tau_q, rel=1e-13)
    mom = channel.posterior_moments_z(q, tau_q, p.y, gw)
    assert tau_s == pytest.approx(np.mean((1 - mom.var_z / tau_q) / tau_q), rel=1e-13)


def test_input_linear_trivial():
    p = build_problem(np.eye(3), [1, 1, -1])
    x = np.array([0.5, -1.0, 2.0])
    r, _ = engine.input_linear_update(_state(3, 3, x_hat=x), p)
    np.testing.assert_array_equal(r, x)
    s = np.array([0.1, 0.2, -0.3])
    r, tau_r = engine.input_linear_update(_state(3, 3, x_hat=x, s=s, tau_s=1.0), p)
    assert tau_r == 1.0
    np.testing.assert_allclose(r, x + s, rtol=0, atol=1e-15)


def test_linear_updates_match_naive_products(rng):
    m, n = 30, 12
    A = rng.standard_normal((m, n))
    p = build_problem(A, np.ones(m))
    x, s = rng.standard_normal(n), rng.standard_normal(m)
    st_ = _state(m, n, x_hat=x, s=s, tau_s=0.8, tau_x=0.4)
    r, tau_r = engine.input_linear_update(st_, p)
    frob = sum(A[i, j] ** 2 for i in range(m) for j in range(n))
    assert tau_r == pytest.approx(n / (frob * 0.8), rel=1e-12)
    naive_r = [x[j] + tau_r * sum(A[i, j] * s[i] for i in range(m)) for j in range(n)]
    np.testing.assert_allclose(r, naive_r, rtol=1e-12)
    q, tau_q = engine.output_linear_update(st_, p)
    assert tau_q == pytest.approx(frob / m * 0.4, rel=1e-12)
    naive_q = [sum(A[i, j] * x[j] for j in range(n)) - tau_q * s[i] for i in range(m)]
    np.testing.assert_allclose(q, naive_q, rtol=1e-12)


def test_output_linear_trivial(rng):
    A = rng.standard_normal((5, 4))
    p = build_problem(A, np.ones(5))
    q, tau_q = engine.output_linear_update(_state(5, 4, tau_x=0.3), p)
    assert np.all(q == 0.0) and tau_q == pytest.approx(p.frob_sq / 5 * 0.3)
    x = rng.standard_normal(4)
    q, _ = engine.output_linear_update(_state(5, 4, x_hat=x), p)
    np.testing.assert_array_equal(q, A @ x)


def test_initial_state():
    p = build_problem(np.eye(2) * 2.0, [1, -1])
    st_ = engine.initial_state(p, SignalPriorParams.from_arrays(0.2, [1.0], [1.0], [3.0]))
    assert st_.tau_x == pytest.approx(0.8)
    assert np.all(st_.x_hat == 0) and np.all(st_.q == 0) and np.all(st_.s == 0)
    assert st_.tau_q == pytest.approx(8.0 / 2 * 0.8)


def test_phase_order(monkeypatch):
    calls = []

    def spy(mod, name, tag):
        orig = getattr(mod, name)

        def wrapped(*a, **k):
            calls.append(tag)
            return orig(*a, **k)
        monkeypatch.setattr(mod, name, wrapped)

    spy(engine, "output_nonlinear_update", "out-nl")
    spy(engine, "input_linear_update", "in-lin")
    spy(prior, "estimate_signal_params", "est-lambda")
    spy(prior, "posterior_moments_x", "in-nl")
    spy(engine, "output_linear_update", "out-lin")
    spy(channel, "estimate_noise_param", "est-theta")
    x, p, lam, theta = generate_problem(32, 4, 64, 0.01, 0)
    solve(p, SignalPriorParams.default(), NoisePriorParams(0.01), SolverConfig(max_iters=2))
    order = ["out-nl", "in-lin", "est-lambda", "in-nl", "out-lin", "est-theta"]
    assert calls == ["out-lin"] + order * 2


def test_oracle_mode_keeps_parameters_fixed():
    x, p, lam, theta = generate_problem(64, 6, 192, 0.02, 1)
    rep = solve(p, lam, theta, SolverConfig(max_iters=30).as_oracle())
    assert rep.lambda_hat is lam and rep.theta_hat is theta


def test_stops_at_convergence_or_budget():
    x, p, lam, theta = generate_problem(64, 6, 192, 0.1, 2)
    rep = solve(p, lam, theta, SolverConfig(max_iters=3, convergence_tol=1e-300).as_oracle())
    assert rep.iterations == 3 and not rep.converged
    rep = solve(p, lam, theta, SolverConfig(convergence_tol=1e-4).as_oracle())
    assert rep.converged and rep.residual_trace[-1] < 1e-4
    assert rep.iterations == len(rep.residual_trace)


def test_divergence_is_reported(monkeypatch):
    monkeypatch.setattr(prior, "posterior_moments_x", lambda r, tau_r, lam: (np.full(r.shape, np.nan), 1.0))
    x, p, lam, theta = generate_problem(16, 2, 32, 0.0, 0)
    with pytest.raises(DivergenceError) as err:
        solve(p, lam, theta, SolverConfig().as_oracle())
    assert err.value.iteration == 0 and err.value.what == "x_hat"


@pytest.mark.parametrize("seed", range(5))
def test_sign_equivariance(seed):
    x, p, lam, theta = generate_problem(64, 8, 160, 0.02, seed)
    neg = build_problem(p.A, -p.y)
    cfg = SolverConfig(max_iters=60)
    a = solve(p, SignalPriorParams.default(2), NoisePriorParams(0.01), cfg)
    b = solve(neg, SignalPriorParams.default(2), NoisePriorParams(0.01), cfg)
    assert np.array_equal(a.x_hat, -b.x_hat)
    assert a.theta_hat == b.theta_hat


def test_parameter_estimation_tracks_oracle():
    gaps = []
    for t in range(4):
        x, p, lam, theta = generate_problem(256, 26, 768, 0.02, np.random.SeedSequence(100 + t))
        pe = solve(p, SignalPriorParams.default(), NoisePriorParams(1e-2), SolverConfig())
        orc = solve(p, lam, theta, SolverConfig().as_oracle())
        gaps.append(snr_db(x, orc.x_hat)[1] - snr_db(x, pe.x_hat)[1])
    assert abs(np.mean(gaps)) <= 0.5


@pytest.mark.xfail(strict=True, reason="the zero-noise likelihood is scale invariant and the "
                   "oracle iterate's norm keeps drifting; the relative change sits near 1e-5 at 200 iterations")
def test_noiseless_oracle_converges_quickly():
    ok = 0
    for t in range(20):
        x, p, lam, theta = generate_problem(256, 26, 2560, 0.0, np.random.SeedSequence(t))
        ok += solve(p, lam, theta, SolverConfig(max_iters=200).as_oracle()).converged
    assert ok >= 19
