"""Distributional tests for the exact samplers against their closed-form laws.

Frozen constants were computed beforehand with a 40-digit erf/quadrature
oracle (mpmath); every sampler is additionally checked against an
independent brute-force construction where one exists.
"""

import math

import numpy as np
import pytest
from scipy.special import ndtr
from scipy.stats import kstest, ks_2samp

from catbbm.randkit import (
    RejectionCapError,
    RngStream,
    normal_tail_ratio,
    particle_stream,
    sample_bridge_max,
    sample_hitting_time,
    sample_inverse_local_time,
    sample_joint_position_localtime,
    sample_position_avoiding_zero,
    std_normal_cdf,
    std_normal_logcdf,
)

from conftest import folded_normal_cdf, hitting_cdf, ks_critical, ks_two_sample_critical, mean_se

PHI_1 = 0.8413447460685429  # 40-digit erf oracle
NO_BRANCH_P = 0.5231565837302467  # 2 e^{1/2} Phi(-1), confirmed by quadrature
E_EXP_L = 2.7742859576700096  # 2 e^{1/2} Phi(1), confirmed by quadrature
LEMMA_RIGHT_AT_HALF = 0.6914624612740131  # Phi(0.5), confirmed by double quadrature


class TestNormalCdf:
    def test_center_and_frozen_value(self):
        assert std_normal_cdf(0.0) == 0.5
        assert abs(std_normal_cdf(1.0) - PHI_1) < 1e-14

    def test_symmetry_and_monotonicity(self):
        rng = np.random.default_rng(0)
        zs = rng.uniform(-10, 10, 10_000)
        for z in zs[:2000]:
            assert abs(std_normal_cdf(z) + std_normal_cdf(-z) - 1.0) < 1e-12
        vals = sorted(zs)
        cdfs = [std_normal_cdf(z) for z in vals]
        assert all(a <= b for a, b in zip(cdfs, cdfs[1:]))

    def test_logcdf_matches_direct_evaluation(self):
        for z in (-8.0, -5.0, -1.0, 0.0, 2.0):
            assert abs(std_normal_logcdf(z) - math.log(std_normal_cdf(z))) < 1e-12

    def test_logcdf_deep_tail_frozen_values(self):
        # 60-digit erfc oracle; all three exercise the tail-series branch
        assert abs(std_normal_logcdf(-30.0) - -454.3212439563432) < 1e-9 * 454
        assert abs(std_normal_logcdf(-40.0) - -804.6084420137538) < 1e-9 * 804
        assert abs(std_normal_logcdf(-60.0) - -1805.0135606805671) < 1e-9 * 1805


class TestNormalTailRatio:
    def test_frozen_values(self):
        assert abs(normal_tail_ratio(1.0) - 0.6556795424187985) < 1e-12
        assert abs(normal_tail_ratio(4.0) - 0.9466095316542427) < 1e-12

    def test_bracket_at_four(self):
        assert 0.9 < normal_tail_ratio(4.0) < 1.0

    def test_asymptote(self):
        assert abs(normal_tail_ratio(20.0) - 1.0) < 1e-2

    def test_identity_at_one(self):
        phi = math.exp(-0.5) / math.sqrt(2 * math.pi)
        assert abs(normal_tail_ratio(1.0) - (1 - std_normal_cdf(1.0)) / phi) < 1e-12

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            normal_tail_ratio(0.0)
        with pytest.raises(ValueError):
            normal_tail_ratio(-1.0)


class TestRngStream:
    def test_identical_keys_reproduce_sequences(self):
        a = RngStream(123, 45)
        b = RngStream(123, 45)
        assert [a.gen.standard_normal() for _ in range(10)] == [
            b.gen.standard_normal() for _ in range(10)
        ]

    def test_distinct_stream_ids_differ(self):
        a = RngStream(123, 1)
        b = RngStream(123, 2)
        assert a.gen.standard_normal() != b.gen.standard_normal()

    def test_pooled_reuse_is_bit_exact(self):
        a = RngStream(9, 9)
        first = [a.gen.standard_normal() for _ in range(5)]
        a.release()
        for sid in range(20):  # churn the pool with other keys
            s = RngStream(1, sid)
            s.gen.standard_normal()
            s.release()
        b = RngStream(9, 9)
        assert [b.gen.standard_normal() for _ in range(5)] == first

    def test_release_poisons_stream(self):
        s = RngStream(1, 1)
        s.release()
        with pytest.raises(AttributeError):
            s.gen.standard_normal()

    def test_particle_stream_packing(self):
        s = particle_stream(7, replicate=3, birth_index=11)
        assert s.stream_id == (3 << 32) | 11


class TestHittingTime:
    def test_rejects_zero_start(self):
        with pytest.raises(ValueError):
            sample_hitting_time(RngStream(0), 0.0)

    def test_positive(self):
        s = RngStream(1)
        assert all(sample_hitting_time(s, -0.3) > 0 for _ in range(1000))

    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
    def test_cdf_kolmogorov(self, x):
        n = 100_000
        s = RngStream(11, int(10 * x))
        taus = np.array([sample_hitting_time(s, x) for _ in range(n)])
        stat = kstest(taus, lambda u: hitting_cdf(u, x)).statistic
        assert stat < ks_critical(n)

    def test_probability_of_hit_within_one(self):
        n = 100_000
        s = RngStream(12, 0)
        hits = np.mean([sample_hitting_time(s, 1.0) <= 1.0 for _ in range(n)])
        p = 2 * std_normal_cdf(-1.0)
        assert abs(hits - p) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_brownian_scaling(self):
        n = 20_000
        s = RngStream(13, 0)
        t1 = np.array([sample_hitting_time(s, 0.7) for _ in range(n)])
        t2 = np.array([sample_hitting_time(s, 1.4) for _ in range(n)])
        res = ks_2samp(4.0 * t1, t2)
        assert res.statistic < ks_two_sample_critical(n, n)


class TestInverseLocalTime:
    def test_rejects_nonpositive_level(self):
        with pytest.raises(ValueError):
            sample_inverse_local_time(RngStream(0), 0.0)

    def test_positive(self):
        s = RngStream(2)
        assert all(sample_inverse_local_time(s, 0.4) > 0 for _ in range(1000))

    def test_subordinator_additivity(self):
        n = 20_000
        s = RngStream(21, 0)
        whole = np.array([sample_inverse_local_time(s, 1.1) for _ in range(n)])
        split = np.array(
            [
                sample_inverse_local_time(s, 0.4) + sample_inverse_local_time(s, 0.7)
                for _ in range(n)
            ]
        )
        assert ks_2samp(whole, split).statistic < ks_two_sample_critical(n, n)

    def test_no_branch_probability_with_exponential_budget(self):
        # particle at the origin with Exp(1) budget: P(no branch by t=1)
        n = 100_000
        s = RngStream(22, 0)
        survived = 0
        for _ in range(n):
            ell = s.gen.exponential()
            if sample_inverse_local_time(s, ell) > 1.0:
                survived += 1
        p = survived / n
        se = math.sqrt(NO_BRANCH_P * (1 - NO_BRANCH_P) / n)
        assert abs(p - NO_BRANCH_P) <= 4 * se


class TestBridgeMax:
    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            sample_bridge_max(RngStream(0), 0.0, 0.0)

    def test_pathwise_lower_bound(self):
        s = RngStream(31, 0)
        for endpoint in (-1.5, -0.2, 0.0, 0.4, 2.0):
            for _ in range(500):
                assert sample_bridge_max(s, endpoint, 0.7) >= max(0.0, endpoint)

    def test_tail_formula(self):
        n = 100_000
        s = RngStream(32, 0)
        endpoint, duration = 0.3, 1.5
        draws = np.array([sample_bridge_max(s, endpoint, duration) for _ in range(n)])
        for m in (0.8, 1.2, 2.0):
            p = math.exp(-2 * m * (m - endpoint) / duration)
            emp = float(np.mean(draws >= m))
            assert abs(emp - p) <= 4 * math.sqrt(p * (1 - p) / n)

    def test_median_at_zero_endpoint(self):
        n = 100_000
        s = RngStream(33, 0)
        draws = np.array([sample_bridge_max(s, 0.0, 1.0) for _ in range(n)])
        med = float(np.median(draws))
        target = 0.5887050112577373  # sqrt(ln 2 / 2)
        density = 4 * target * 0.5  # tail exp(-2m^2) differentiated at the median
        se = math.sqrt(0.25 / n) / density
        assert abs(med - target) <= 4 * se

    def test_against_dense_random_walk_bridge(self):
        # brute-force oracle: pin a fine random walk into a bridge and take its max
        rng = np.random.default_rng(5)
        n_paths, steps = 20_000, 800
        endpoint, duration = 0.5, 1.0
        dt = duration / steps
        walks = np.cumsum(rng.standard_normal((n_paths, steps)) * math.sqrt(dt), axis=1)
        t_grid = np.arange(1, steps + 1) * dt
        bridges = walks - np.outer(np.ones(n_paths), t_grid / duration) * walks[:, -1:]
        bridges += np.outer(np.ones(n_paths), t_grid / duration) * endpoint
        grid_max = np.maximum(bridges.max(axis=1), 0.0)
        for m in (0.7, 1.0, 1.4):
            formula = math.exp(-2 * m * (m - endpoint) / duration)
            emp = float(np.mean(grid_max >= m))
            # the grid max undershoots the continuous max by O(sqrt(dt))
            assert abs(emp - formula) < 0.03


class TestJointPositionLocalTime:
    def test_rejects_nonpositive_duration(self):
        with pytest.raises(ValueError):
            sample_joint_position_localtime(RngStream(0), -1.0)

    def _draws(self, seed, n, duration=1.0):
        s = RngStream(seed, 0)
        d = [sample_joint_position_localtime(s, duration) for _ in range(n)]
        return np.array([q.position for q in d]), np.array([q.local_time for q in d])

    def test_local_time_marginal_is_folded_normal(self):
        n = 100_000
        _, local = self._draws(41, n)
        stat = kstest(local, lambda v: folded_normal_cdf(v, 1.0)).statistic
        assert stat < ks_critical(n)

    def test_exponential_moment_matches_population_formula(self):
        n = 100_000
        _, local = self._draws(42, n)
        mean, se = mean_se(np.exp(local))
        assert abs(mean - E_EXP_L) <= 4 * se

    def test_sign_symmetry(self):
        n = 100_000
        pos, _ = self._draws(43, n)
        mean, se = mean_se(pos)
        assert abs(mean) <= 3 * se

    def test_weighted_indicator_matches_count_formula(self):
        # right-hand side of the sum-to-path identity, tested in isolation
        n = 100_000
        pos, local = self._draws(44, n)
        mean, se = mean_se(np.exp(local) * (pos >= 0.5))
        assert abs(mean - LEMMA_RIGHT_AT_HALF) <= 4 * se

    def test_against_discretized_path_accumulation(self):
        # brute force: occupation time of a thin band on a fine Euler walk
        rng = np.random.default_rng(6)
        eps = 0.02
        dt = eps * eps / 10
        steps = int(round(1.0 / dt))
        n_paths = 4_000
        occ = np.zeros(n_paths)
        for i in range(n_paths):
            path = np.cumsum(rng.standard_normal(steps) * math.sqrt(dt))
            occ[i] = np.count_nonzero(np.abs(path[:-1]) <= eps) * dt / (2 * eps)
        _, local = self._draws(45, n_paths)
        # band occupation carries an O(eps) downward model bias
        assert abs(occ.mean() - local.mean()) < 0.03


class TestPositionAvoidingZero:
    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            sample_position_avoiding_zero(RngStream(0), 0.0, 1.0)
        with pytest.raises(ValueError):
            sample_position_avoiding_zero(RngStream(0), 1.0, 0.0)

    def test_sign_preserved(self):
        s = RngStream(51, 0)
        assert all(sample_position_avoiding_zero(s, 0.6, 2.0) > 0 for _ in range(2000))
        assert all(sample_position_avoiding_zero(s, -0.6, 2.0) < 0 for _ in range(2000))

    def test_distribution_via_reflection_cdf(self):
        n = 50_000
        x, duration = 1.0, 1.0
        s = RngStream(52, 0)
        draws = np.array([sample_position_avoiding_zero(s, x, duration) for _ in range(n)])
        sd = math.sqrt(duration)
        mass = 1 - 2 * std_normal_cdf(-x / sd)  # P(no hit)

        def cdf(y):
            y = np.asarray(y, dtype=float)
            return (ndtr((y - x) / sd) - ndtr(-x / sd) - ndtr((y + x) / sd) + ndtr(x / sd)) / mass

        assert kstest(draws, cdf).statistic < ks_critical(n)

    def test_conditioning_vacuous_far_from_origin(self):
        n = 100_000
        x, duration = 8.0, 1.0
        s = RngStream(53, 0)
        draws = np.array([sample_position_avoiding_zero(s, x, duration) for _ in range(n)])
        stat = kstest(draws, lambda y: ndtr(np.asarray(y) - x)).statistic
        assert stat < 0.01

    def test_rejection_cap_trips_on_vanishing_acceptance(self):
        s = RngStream(54, 0)
        with pytest.raises(RejectionCapError):
            sample_position_avoiding_zero(s, 1e-12, 1.0)
