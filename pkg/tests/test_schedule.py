import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from bridgelab.errors import DomainError
from bridgelab.schedule import (
    VpSchedule,
    alpha_sigma,
    bridge_coeffs,
    karras_cdf,
    karras_times,
    loss_weight,
    sample_train_time,
    snr,
    time_grid,
)

SCHED = VpSchedule()
schedules = st.builds(
    VpSchedule,
    beta_d=st.floats(0.0, 20.0),
    beta_min=st.floats(0.01, 5.0),
)


class TestVpSchedule:
    def test_rejects_bad_parameters(self):
        with pytest.raises(DomainError):
            VpSchedule(beta_d=-1.0)
        with pytest.raises(DomainError):
            VpSchedule(beta_min=0.0)
        with pytest.raises(DomainError):
            VpSchedule(t_min=2.0)

    def test_origin_is_exact(self):
        assert alpha_sigma(SCHED, 0.0) == (1.0, 0.0)

    def test_alpha_at_one_against_quadrature(self):
        integral, _ = integrate.quad(SCHED.beta, 0.0, 1.0)
        alpha, sigma = alpha_sigma(SCHED, 1.0)
        assert alpha == pytest.approx(math.exp(-0.5 * integral), rel=1e-13)
        assert alpha == pytest.approx(math.exp(-0.55), rel=1e-14)
        assert sigma == pytest.approx(math.sqrt(1 - math.exp(-1.1)), rel=1e-14)

    def test_constant_beta(self):
        s = VpSchedule(beta_d=0.0, beta_min=0.7)
        t = np.linspace(0, 1, 11)
        np.testing.assert_allclose(alpha_sigma(s, t)[0], np.exp(-0.35 * t), rtol=1e-14)

    def test_out_of_range_time(self):
        with pytest.raises(DomainError):
            alpha_sigma(SCHED, 1.5)
        with pytest.raises(DomainError):
            alpha_sigma(SCHED, -1e-9)

    @given(schedules)
    def test_variance_preserving(self, s):
        a, sg = alpha_sigma(s, np.linspace(0, s.t_max, 100))
        np.testing.assert_allclose(a**2 + sg**2, 1.0, atol=1e-12)

    @given(schedules)
    def test_alpha_decreasing_sigma_increasing(self, s):
        a, sg = alpha_sigma(s, np.linspace(0, s.t_max, 200))
        assert np.all(np.diff(a) < 0)
        assert np.all(np.diff(sg) > 0)


class TestSnr:
    def test_value_at_horizon(self):
        assert snr(SCHED, 1.0) == pytest.approx(math.exp(-1.1) / (1 - math.exp(-1.1)), rel=1e-12)

    def test_monotone(self):
        assert snr(SCHED, 0.3) > snr(SCHED, 0.7)
        assert snr(SCHED, SCHED.t_min) > snr(SCHED, 2 * SCHED.t_min)

    def test_domain(self):
        with pytest.raises(DomainError):
            snr(SCHED, 0.0)

    @given(schedules)
    def test_strictly_decreasing_and_finite(self, s):
        v = snr(s, np.linspace(s.t_min, s.t_max, 100))
        assert np.all(np.isfinite(v))
        assert np.all(np.diff(v) < 0)


class TestBridgeCoeffs:
    def test_endpoints(self):
        end = bridge_coeffs(SCHED, 1.0)
        assert (end.a, end.b, end.c) == (1.0, 0.0, 0.0)
        start = bridge_coeffs(SCHED, 0.0)
        assert (start.a, start.b, start.c) == (0.0, 1.0, 0.0)
        near = bridge_coeffs(SCHED, SCHED.t_min)
        np.testing.assert_allclose([near.a, near.b, near.c], [0, 1, 0], atol=2e-2)

    def test_small_time_limit(self):
        co = bridge_coeffs(SCHED, 1e-12)
        np.testing.assert_allclose([co.a, co.b, co.c], [0, 1, 0], atol=1e-5)

    def test_matches_formula(self):
        t = 0.37
        a_t, s_t = alpha_sigma(SCHED, t)
        a_T, s_T = alpha_sigma(SCHED, 1.0)
        ratio = (a_T**2 / s_T**2) / (a_t**2 / s_t**2)
        co = bridge_coeffs(SCHED, t)
        assert co.a == pytest.approx(a_t * ratio / a_T, rel=1e-12)
        assert co.b == pytest.approx(a_t * (1 - ratio), rel=1e-12)
        assert co.c == pytest.approx(s_t * math.sqrt(1 - ratio), rel=1e-12)

    def test_against_pinned_process(self):
        """Euler-simulate the base SDE from y, condition on z_T = x by Gaussian algebra."""
        rng = np.random.default_rng(0)
        n, steps, t = 200_000, 1000, 0.5
        x_val, y_val = 0.7, -0.4
        dt = 1.0 / steps
        z = np.full(n, y_val)
        z_half = None
        for k in range(steps):
            s = k * dt
            z = z - 0.5 * SCHED.beta(s) * z * dt + math.sqrt(SCHED.beta(s) * dt) * rng.standard_normal(n)
            if k + 1 == int(t * steps):
                z_half = z.copy()
        # The pair (z_t, z_T) is jointly Gaussian given y: condition z_t on z_T = x by regression.
        cov = np.cov(z_half, z)
        slope = cov[0, 1] / cov[1, 1]
        mean = z_half.mean() + slope * (x_val - z.mean())
        var = cov[0, 0] - slope * cov[0, 1]
        co = bridge_coeffs(SCHED, t)
        se_mean = math.sqrt(var / n)
        assert abs(mean - (co.a * x_val + co.b * y_val)) < 3 * se_mean + 2e-3
        assert var == pytest.approx(co.c**2, rel=3e-2)

    @given(schedules, st.floats(0.0, 1.0))
    def test_c_nonnegative(self, s, u):
        co = bridge_coeffs(s, u * s.t_max)
        assert co.c >= 0.0
        if 0.0 < u < 1.0 and s.integrated_beta(u * s.t_max) > 1e-6:
            assert co.c > 0.0


class TestTimeGrid:
    def test_single_step(self):
        np.testing.assert_array_equal(time_grid(SCHED, 1).times, [0.0, 1.0])

    def test_linear_when_rho_one(self):
        g = time_grid(SCHED, 4, karras_rho=1).times
        np.testing.assert_allclose(np.diff(g[1:]), (1.0 - SCHED.t_min) / 4, rtol=1e-12)

    def test_two_steps_interior_point(self):
        g = time_grid(SCHED, 2, karras_rho=7).times
        expected = ((1e-4 ** (1 / 7) + 1.0) / 2) ** 7
        assert g[1] == pytest.approx(expected, rel=1e-13)

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            time_grid(SCHED, 0)

    @settings(max_examples=60)
    @given(st.integers(1, 1000), st.sampled_from([1.0, 3.0, 7.0]))
    def test_strictly_increasing_with_exact_endpoints(self, n, rho):
        g = time_grid(SCHED, n, rho)
        assert len(g.times) == n + 1
        assert g.times[0] == 0.0 and g.times[-1] == SCHED.t_max
        assert np.all(np.diff(g.times) > 0)


class TestWeightsAndTraining:
    def test_reciprocal(self):
        t = 0.5
        c2 = bridge_coeffs(SCHED, t).c ** 2
        assert loss_weight(SCHED, t) == pytest.approx(1 / c2)

    def test_floor_at_horizon(self):
        assert loss_weight(SCHED, 1.0) == pytest.approx(1e4)

    def test_decreasing_where_c_grows(self):
        t = np.linspace(SCHED.t_min, 0.3, 50)
        c = bridge_coeffs(SCHED, t).c
        assert np.all(np.diff(c) > 0)
        assert np.all(np.diff(loss_weight(SCHED, t)) < 0)

    def test_inverse_endpoints(self):
        assert karras_times(SCHED, 0.0) == SCHED.t_min
        assert karras_times(SCHED, 1.0) == SCHED.t_max

    def test_train_times_ks(self):
        t = sample_train_time(SCHED, np.random.default_rng(3), size=100_000)
        assert t.min() >= SCHED.t_min and t.max() <= SCHED.t_max
        ks = stats.kstest(t, lambda v: karras_cdf(SCHED, v)).statistic
        assert ks < 0.01
