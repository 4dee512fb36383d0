import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ris_equalizer import baselines, isi, pso
from ris_equalizer.channel import (PathLossParams, ScenarioConfig, SvFadingParams,
                                   assemble_channels, build_geometry, random_channel_set)
from ris_equalizer.experiment import ExperimentConfig, grid_search_two, oracle_instance
from ris_equalizer.isi import IsiDecomposition
from ris_equalizer.pso import OptimizerState, PsoConfig


def random_dec(rng, K=3, N=6, L=20, T=1e-3):
    ch = random_channel_set(K, N, L, rng, ris_scale=0.5)
    dec = isi.decompose_channels(isi.normalize_peak_power(ch))
    return IsiDecomposition(dec.y0, dec.C, dec.B, T)


def random_state(rng, dec):
    return OptimizerState(rng.uniform(0, 2 * np.pi, dec.num_elements), rng.uniform(0, 1),
                          rng.uniform(0, 1, dec.num_users))


def penalty(dec, mu, theta):
    """The theta-dependent part of the Lagrangian, evaluated directly."""
    return float(np.sum(mu * np.abs(isi.isi_frequency(dec, theta)) ** 2))


class TestLagrangian:
    def test_zero_multipliers(self):
        dec = random_dec(np.random.default_rng(0))
        s = OptimizerState(np.zeros(6), 0.37, np.zeros(3))
        assert pso.lagrangian(dec, s) == 0.37

    def test_unit_multiplier_mass_cancels_eta(self):
        rng = np.random.default_rng(1)
        dec = random_dec(rng)
        mu = np.array([0.2, 0.5, 0.3])
        s = OptimizerState(rng.uniform(0, 6, 6), 123.0, mu)
        assert pso.lagrangian(dec, s) == pytest.approx(penalty(dec, mu, s.theta), rel=1e-12)

    def test_matches_direct_evaluation(self):
        rng = np.random.default_rng(2)
        dec = random_dec(rng)
        s = random_state(rng, dec)
        I = isi.isi_frequency(dec, s.theta)
        direct = s.eta + sum(m * (abs(i) ** 2 - s.eta) for m, i in zip(s.mu, I))
        assert pso.lagrangian(dec, s) == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("mu, expected", [
    ([0.0], 1.0),
    ([0.25] * 4, 0.0),
    ([0.5] * 4, -1.0),
])
def test_grad_eta(mu, expected):
    assert pso.grad_eta(OptimizerState(np.zeros(1), 0.0, np.array(mu))) == expected


class TestGradTheta:
    def test_absent_element(self):
        rng = np.random.default_rng(3)
        dec = random_dec(rng)
        B = dec.B.copy()
        B[:, 2] = 0
        dec = IsiDecomposition(dec.y0, dec.C, B, dec.T)
        assert pso.grad_theta(dec, random_state(rng, dec), 2) == 0

    def test_modulus_invariance(self):
        dec = IsiDecomposition(np.zeros(1, complex), np.zeros(1, complex),
                               np.array([[0.3 - 0.4j]]), 1e-3)
        s = OptimizerState(np.array([1.1]), 0.0, np.ones(1))
        assert pso.grad_theta(dec, s, 0) == pytest.approx(0.0, abs=1e-15)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-6
        for _ in range(100):
            K, N = int(rng.integers(1, 5)), int(rng.integers(1, 17))
            dec = random_dec(rng, K, N, T=float(rng.choice([1e-3, 1.0])))
            s = random_state(rng, dec)
            g = pso.grad_theta_all(dec, s)
            fd = np.empty(N)
            for n in range(N):
                e = np.zeros(N)
                e[n] = h
                fd[n] = (penalty(dec, s.mu, s.theta + e) - penalty(dec, s.mu, s.theta - e)) / (2 * h)
            scale = max(np.abs(fd).max(), 1e-12)
            assert np.abs(g - fd).max() / scale < 1e-5

    def test_scalar_matches_vector(self):
        rng = np.random.default_rng(5)
        dec = random_dec(rng)
        s = random_state(rng, dec)
        g = pso.grad_theta_all(dec, s)
        assert [pso.grad_theta(dec, s, n) for n in range(6)] == list(g)


class TestSteps:
    def test_zero_gradient_is_fixed_point(self):
        dec = IsiDecomposition(np.ones(2, complex), np.ones(2, complex), np.zeros((2, 3)))
        theta = np.array([0.5, 7.0, -1.0])
        s = OptimizerState(theta, 0.2, np.array([0.5, 0.5]))
        out = pso.primal_step(dec, s, PsoConfig(step_theta=1.0))
        np.testing.assert_allclose(out.theta, np.mod(theta, 2 * np.pi))
        assert out.eta == 0.2

    def test_eta_projection(self):
        dec = random_dec(np.random.default_rng(6))
        s = OptimizerState(np.zeros(6), 0.1, np.zeros(3))
        assert pso.primal_step(dec, s, PsoConfig(step_eta=1.0)).eta == 0.0

    def test_quadratic_descent_direction(self):
        # single element, K=1: |I|^2 = |c + b e^{-j theta}|^2 is minimised at theta = arg(b/c) - pi
        c, b = 0.6 + 0.2j, 0.3 - 0.1j
        dec = IsiDecomposition(np.zeros(1, complex), np.array([c]), np.array([[b]]), 1e-3)
        target = np.mod(np.angle(b / c) + np.pi, 2 * np.pi)
        rng = np.random.default_rng(7)
        for _ in range(50):
            theta = np.mod(target + rng.uniform(-2.5, 2.5), 2 * np.pi)
            s = OptimizerState(np.array([theta]), 0.0, np.ones(1))
            before = penalty(dec, s.mu, s.theta)
            after = penalty(dec, s.mu, pso.primal_step(dec, s, PsoConfig()).theta)
            assert after < before

    def test_phases_wrapped(self):
        rng = np.random.default_rng(8)
        dec = random_dec(rng)
        out = pso.primal_step(dec, random_state(rng, dec), PsoConfig(step_theta=50.0))
        assert np.all((out.theta >= 0) & (out.theta < 2 * np.pi))

    def test_dual_slack_keeps_mu_zero(self):
        dec = random_dec(np.random.default_rng(9))
        s = OptimizerState(np.zeros(6), 1e6, np.zeros(3))
        np.testing.assert_array_equal(pso.dual_step(dec, s, PsoConfig()).mu, 0)

    def test_dual_zero_violation(self):
        dec = IsiDecomposition(np.zeros(1, complex), np.array([0.5 + 0j]), np.zeros((1, 1)))
        s = OptimizerState(np.zeros(1), 0.25, np.array([0.3]))
        assert pso.dual_step(dec, s, PsoConfig()).mu[0] == 0.3

    def test_dual_violation_raises_mu(self):
        dec = IsiDecomposition(np.zeros(1, complex), np.array([0.5 + 0j]), np.zeros((1, 1)))
        s = OptimizerState(np.zeros(1), 0.0, np.array([0.3]))
        assert pso.dual_step(dec, s, PsoConfig()).mu[0] > 0.3

    def test_non_finite_gradient_aborts(self):
        dec = IsiDecomposition(np.ones(1, complex), np.ones(1, complex), np.array([[np.inf + 0j]]))
        s = OptimizerState(np.zeros(1), 0.0, np.ones(1))
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            pso.primal_step(dec, s, PsoConfig(step_theta=1.0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10), st.floats(1e-4, 10),
           st.floats(1e-4, 10))
    def test_projection_safety(self, seed, d_eta, d_mu, d_theta):
        rng = np.random.default_rng(seed)
        dec = random_dec(rng)
        cfg = PsoConfig(step_eta=d_eta, step_mu=d_mu, step_theta=d_theta)
        s = random_state(rng, dec)
        for _ in range(30):
            s = pso.dual_step(dec, pso.primal_step(dec, s, cfg), cfg)
            assert s.eta >= 0 and np.all(s.mu >= 0)


def test_config_validation():
    with pytest.raises(ValueError):
        PsoConfig(step_eta=0)
    with pytest.raises(ValueError):
        PsoConfig(sigma=-1)
    with pytest.raises(ValueError):
        PsoConfig(init_mode="nope")


def test_default_step_theta_scale_free():
    dec = random_dec(np.random.default_rng(10))
    big = IsiDecomposition(dec.y0, dec.C, 10 * dec.B, dec.T)
    assert pso.default_step_theta(big) == pytest.approx(pso.default_step_theta(dec) / 100)


def physical(N, seed, Gamma=1.0, fading=True):
    geom = build_geometry(ScenarioConfig(num_elements=N), np.random.default_rng(seed))
    ch = assemble_channels(geom, PathLossParams(), SvFadingParams(num_paths=30, cluster_decay=16,
                                                                  ray_decay=8),
                           Gamma, np.random.default_rng(seed + 1), fading=fading)
    return isi.normalize_peak_power(ch)


class TestOptimize:
    def test_zero_reflection_equals_non_ris(self):
        ch = physical(16, 0, Gamma=0.0)
        sol = pso.optimize(ch, PsoConfig(max_outer_iters=50), np.random.default_rng(0))
        assert sol.eta == baselines.non_ris_isi(ch)

    def test_reported_eta_is_recomputed(self):
        ch = physical(16, 1)
        sol = pso.optimize(ch, PsoConfig(max_outer_iters=300), np.random.default_rng(1))
        eta, per_user = isi.max_isi_power(isi.decompose_channels(ch), sol.theta)
        assert sol.eta == eta
        np.testing.assert_array_equal(sol.user_isi_power, per_user)

    @pytest.mark.parametrize("N", [4, 16])
    def test_remark1_floor(self, N):
        for seed in range(5):
            ch = physical(N, seed, fading=False)
            sol = pso.optimize(ch, PsoConfig(max_outer_iters=200, init_mode="remark1-pairs"),
                               np.random.default_rng(seed))
            assert sol.eta <= baselines.non_ris_isi(ch) + 1e-10

    def test_deterministic(self):
        ch = physical(16, 2)
        a = pso.optimize(ch, PsoConfig(max_outer_iters=200), np.random.default_rng(5))
        b = pso.optimize(ch, PsoConfig(max_outer_iters=200), np.random.default_rng(5))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_restarts_never_worse(self):
        dec = isi.decompose_channels(physical(16, 3))
        cfg = PsoConfig(max_outer_iters=200)
        one = pso.optimize_decomposition(dec, cfg, np.random.default_rng(4))
        many = pso.optimize_decomposition(dec, PsoConfig(max_outer_iters=200, num_restarts=3),
                                          np.random.default_rng(4))
        # the first start is drawn identically, so the extra starts can only help
        assert many.eta <= one.eta

    def test_shift_invariance(self):
        rng = np.random.default_rng(11)
        dec = random_dec(rng, K=2, N=4)
        theta0 = np.array([0.25, 0.5, 1.0, 2.0])  # exact under +2pi then mod
        cfg = PsoConfig(max_outer_iters=100)
        a = pso.run_from(dec, theta0, cfg)
        b = pso.run_from(dec, theta0 + np.array([2 * np.pi, 0, 2 * np.pi, 0]), cfg)
        np.testing.assert_allclose(b.theta, a.theta, rtol=0, atol=1e-12)
        assert b.eta == pytest.approx(a.eta, rel=1e-10)

    def test_non_convergence_is_flagged(self):
        dec = random_dec(np.random.default_rng(12))
        sol = pso.run_from(dec, np.zeros(6), PsoConfig(max_outer_iters=5, check_every=200))
        assert not sol.converged and sol.iterations == 5


def brute_grid(dec, step):
    grid = np.arange(0.0, 2 * np.pi, step)
    best = math.inf
    for t1 in grid:
        for t2 in grid:
            best = min(best, isi.max_isi_power(dec, [t1, t2])[0])
    return best


def test_grid_search_matches_double_loop():
    cfg = ExperimentConfig(L=20)
    dec = oracle_instance(cfg, 0)
    assert grid_search_two(dec, 0.1) == pytest.approx(brute_grid(dec, 0.1), rel=1e-12)


def test_two_element_grid_oracle():
    cfg = ExperimentConfig(L=20)
    for draw in range(3):
        dec = oracle_instance(cfg, draw)
        sol = pso.optimize_decomposition(dec, PsoConfig(num_restarts=8),
                                         np.random.default_rng(draw))
        assert sol.eta <= grid_search_two(dec, 0.01) + 1e-2
