import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpate.accounting import calibrate_pbm, calibrate_suite
from dpate.errors import ConfigurationError, InputError
from dpate.estimation import (
    ConfidenceInterval,
    GroupEstimates,
    NoiseProfile,
    asymptotic_ci,
    diff_in_means,
    dp_calibration,
    empirical_bernstein_halfwidth,
    nonasymptotic_ci,
    nonasymptotic_gamma,
    pate_variance,
    sampling_variance,
    sate_variance,
    z_quantile,
)
from dpate.mechanisms import MechanismSuite, PbmParams


def bisect_quantile(p):
    # Bisect on whichever tail is small so erfc stays accurate.
    upper = p > 0.5
    tail = 1.0 - p if upper else p
    lo, hi = 0.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2)) > tail:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    return x if upper else -x


def randomization_variance(y_c, y_t, n_c):
    """Exact variance of the difference in means over all complete randomizations."""
    n = len(y_c)
    vals = []
    for control in itertools.combinations(range(n), n_c):
        mask = np.zeros(n, bool)
        mask[list(control)] = True
        vals.append(y_t[~mask].mean() - y_c[mask].mean())
    return float(np.var(vals))


class TestQuantile:
    @pytest.mark.parametrize("p", [1e-12, 1e-6, 0.025, 0.3, 0.5, 0.95, 1 - 1e-9])
    def test_matches_bisection(self, p):
        assert z_quantile(p) == pytest.approx(bisect_quantile(p), abs=1e-9)

    def test_common_value(self):
        assert z_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-12)

    def test_domain(self):
        with pytest.raises(InputError):
            z_quantile(1.0)


class TestVariances:
    def test_pate_variance_example(self):
        est = GroupEstimates(0.0, 0.2, 0.04, 0.09, 100, 300)
        assert pate_variance(est) == pytest.approx(0.04 / 100 + 0.09 / 300)

    def test_sate_formula_example(self):
        est = GroupEstimates(0.0, 0.0, 1.0, 1.0, 2, 2)
        assert sate_variance(est) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_sate_bounds_randomization_variance(self, seed):
        rng = np.random.default_rng(seed)
        n, n_c = 9, 4
        y_c = rng.normal(size=n)
        y_t = 0.5 * y_c + rng.normal(size=n)
        S_c, S_t = np.var(y_c, ddof=1), np.var(y_t, ddof=1)
        S_tc = np.cov(y_t, y_c)[0, 1]
        exact = randomization_variance(y_c, y_t, n_c)
        n_t = n - n_c
        neyman = (n_c / n_t * S_t + n_t / n_c * S_c + 2 * S_tc) / n
        assert exact == pytest.approx(neyman, rel=1e-10)
        bound = sate_variance(GroupEstimates(0, 0, S_c, S_t, n_c, n_t))
        assert bound >= exact * (1 - 1e-12)

    def test_sate_bound_tight_for_constant_effects(self):
        y_c = np.array([0.1, -0.4, 0.3, 0.9, -0.2, 0.0, 0.5])
        y_t = y_c + 0.2
        exact = randomization_variance(y_c, y_t, 3)
        est = GroupEstimates(0, 0, np.var(y_c, ddof=1), np.var(y_t, ddof=1), 3, 4)
        assert sate_variance(est) == pytest.approx(exact, rel=1e-10)

    def test_sate_bound_never_exceeds_pate_for_balanced_groups(self):
        est = GroupEstimates(0, 0, 0.3, 0.7, 50, 50)
        assert sate_variance(est) < pate_variance(est)
        equal = GroupEstimates(0, 0, 0.5, 0.5, 50, 50)
        assert sate_variance(equal) == pytest.approx(pate_variance(equal))

    def test_pate_variance_monte_carlo(self):
        rng = np.random.default_rng(11)
        n_c, n_t = 40, 60
        draws = [rng.normal(0, 2, n_t).mean() - rng.normal(0, 1, n_c).mean() for _ in range(20000)]
        target = pate_variance(GroupEstimates(0, 0, 1.0, 4.0, n_c, n_t))
        assert np.var(draws) == pytest.approx(target, rel=0.05)

    def test_unknown_estimand(self):
        with pytest.raises(ConfigurationError):
            sampling_variance(GroupEstimates(0, 0, 1, 1, 2, 2), "ATT")

    def test_group_validation(self):
        with pytest.raises(InputError):
            GroupEstimates(0, 0, 1, 1, 1, 5)
        with pytest.raises(InputError):
            GroupEstimates(0, 0, -1, 1, 3, 5)

    def test_swap_negates_estimate(self):
        est = GroupEstimates(0.1, 0.4, 0.2, 0.3, 10, 20)
        assert diff_in_means(est.swapped()) == pytest.approx(-diff_in_means(est))
        assert pate_variance(est.swapped()) == pytest.approx(pate_variance(est))
        assert sate_variance(est.swapped()) == pytest.approx(sate_variance(est))


class TestAsymptotic:
    def test_nonprivate_interval(self):
        ci = asymptotic_ci(0.2, 0.01, 0.0, confidence=0.9)
        assert ci.half_width == pytest.approx(1.6448536269514722 * 0.1)
        assert ci.width == pytest.approx(2 * ci.half_width)
        assert ci.covers(0.3) and not ci.covers(0.4)

    def test_quadrature_versus_additive(self):
        quad = asymptotic_ci(0.0, 0.03, 0.04)
        add = asymptotic_ci(0.0, 0.03, 0.04, additive=True)
        z = z_quantile(0.95)
        assert quad.half_width == pytest.approx(z * math.sqrt(0.07))
        assert add.half_width == pytest.approx(z * (math.sqrt(0.03) + 0.2))
        assert add.half_width > quad.half_width

    def test_dp_calibration(self):
        profile = dp_calibration(PbmParams(256, 0.25), 1000, 1000)
        assert profile.var_c == pytest.approx(1.5625e-5)
        assert profile.total == pytest.approx(3.125e-5)
        assert profile.calibration == pytest.approx(2000 * 3.125e-5)
        assert isinstance(profile, NoiseProfile)

    def test_coverage_in_gaussian_model(self):
        rng = np.random.default_rng(3)
        hits = 0
        for _ in range(4000):
            c, t = rng.normal(0, 1, 200), rng.normal(0.3, 1, 200)
            est = GroupEstimates(c.mean(), t.mean(), c.var(ddof=1), t.var(ddof=1), 200, 200)
            hits += asymptotic_ci(diff_in_means(est), pate_variance(est), 0.0).covers(0.3)
        assert abs(hits / 4000 - 0.9) < 0.02

    def test_interval_validation(self):
        with pytest.raises(InputError):
            ConfidenceInterval(0.0, -1.0, 0.9, "asymptotic", "PATE")
        with pytest.raises(InputError):
            asymptotic_ci(0.0, -1.0, 0.0)


class TestNonAsymptotic:
    def test_bernstein_formula(self):
        got = empirical_bernstein_halfwidth(0.25, 101, 1.0, 0.01, 0.02)
        expected = math.sqrt(2 * 0.25 * math.log(200) / 101) + 14 * math.log(100) / 300
        assert got == pytest.approx(expected)

    def test_bernstein_coverage(self):
        rng = np.random.default_rng(8)
        n, d1, d2 = 200, 0.05, 0.05
        misses = 0
        for _ in range(3000):
            x = rng.uniform(-1, 1, n) ** 3
            h = empirical_bernstein_halfwidth(x.var(ddof=1), n, 1.0, d1, d2)
            misses += abs(x.mean()) > h
        assert misses / 3000 <= d1 + d2

    def test_bernstein_rejects_single_sample(self):
        with pytest.raises(InputError):
            empirical_bernstein_halfwidth(0.1, 1, 1.0, 0.1, 0.1)

    def test_gamma_positive_and_finite(self):
        suite = MechanismSuite(PbmParams(64, 0.2), PbmParams(64, 0.05))
        g = nonasymptotic_gamma(0.01, 0.01, 2000, suite, 0.1)
        assert 0 < g < math.inf
        assert nonasymptotic_gamma(0.0, 0.0, 2000, suite, 0.1) < math.inf

    def test_gamma_shrinks_as_one_over_n(self):
        # theta fixed and m proportional to n keeps the per-order RDP constant.
        scaled = []
        for n in (10**3, 10**4, 10**5, 10**6):
            m = n // 10
            suite = MechanismSuite(PbmParams(m, 0.2), PbmParams(m, 0.02))
            scaled.append(n * nonasymptotic_gamma(0.02, 0.02, n, suite, 0.1))
        assert max(scaled) / min(scaled) < 1.5
        assert scaled == sorted(scaled, reverse=True)

    def test_interval_wider_than_asymptotic(self):
        suite = MechanismSuite(PbmParams(64, 0.2), PbmParams(64, 0.05))
        est = GroupEstimates(0.0, 0.2, 0.0025, 0.0025, 1000, 1000)
        na = nonasymptotic_ci(0.2, est, suite, 0.1)
        asy = asymptotic_ci(0.2, pate_variance(est), dp_calibration(suite.params1, 1000, 1000).total)
        assert na.half_width > asy.half_width
        assert na.level == pytest.approx(0.9)

    def test_requires_balance(self):
        suite = MechanismSuite(PbmParams(4, 0.2), PbmParams(4, 0.2))
        with pytest.raises(ConfigurationError):
            nonasymptotic_ci(0.0, GroupEstimates(0, 0, 1, 1, 3, 5), suite, 0.1)

    @settings(max_examples=50, deadline=None)
    @given(delta=st.floats(1e-6, 0.5), v=st.floats(0, 1))
    def test_smaller_delta_is_wider(self, delta, v):
        suite = MechanismSuite(PbmParams(32, 0.2), PbmParams(32, 0.05))
        est = GroupEstimates(0, 0, v, v, 500, 500)
        wide = nonasymptotic_ci(0.0, est, suite, delta / 2).half_width
        assert wide >= nonasymptotic_ci(0.0, est, suite, delta).half_width


class TestWidthOrderings:
    S2 = 0.0025

    def _asymptotic_half(self, n_group, eps):
        suite = calibrate_suite(eps, 1e-5, n_group, 64, 64)
        est = GroupEstimates(0, 0.2, self.S2, self.S2, n_group, n_group)
        noise = dp_calibration(suite.params1, n_group, n_group).total
        return asymptotic_ci(0.2, pate_variance(est), noise).half_width

    def test_monotone_in_epsilon(self):
        halves = [self._asymptotic_half(1000, e) for e in (0.2, 0.5, 1.0, 1.9)]
        assert halves == sorted(halves, reverse=True)

    def test_monotone_in_n(self):
        halves = [self._asymptotic_half(n, 1.0) for n in (500, 1000, 4000)]
        assert halves == sorted(halves, reverse=True)

    @pytest.mark.slow
    def test_second_moment_share_matters_less(self):
        n_group, m, eps, delta = 50_000, 64, 1.0, 1e-5

        def theta(share):
            return calibrate_pbm(eps, delta, n_group, m, scale=1.0 / share).theta

        def width(t1, t2):
            suite = MechanismSuite(PbmParams(m, t1), PbmParams(m, t2))
            est = GroupEstimates(0, 0.2, self.S2, self.S2, n_group, n_group)
            return nonasymptotic_ci(0.2, est, suite, 0.1).half_width

        small, large = theta(0.01), theta(0.5)
        base_first = theta(0.99)
        base = width(base_first, small)
        gain_second = base - width(base_first, large)
        gain_first = width(small, small) - base
        # The leading variance term does not involve the second-moment mechanism.
        assert gain_second >= 0 and gain_first > gain_second
