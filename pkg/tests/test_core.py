import numpy as np
import pytest

import oracles
from tailshift import (DomainError, RngStream, sample_std_normal,
                       std_normal_cdf, std_normal_quantile)


class TestNormalCdf:
    def test_zero_is_half(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_toy_tail_value(self):
        # P(X > 1.5) is about 0.067
        assert 1.0 - std_normal_cdf(1.5) == pytest.approx(0.0668072, abs=5e-8)

    def test_one_in_ten_thousand_tail(self):
        x = oracles.tail_quantile("1e-4")
        assert x == pytest.approx(3.719016, abs=1e-6)
        assert std_normal_cdf(x) == pytest.approx(0.9999, abs=1e-12)

    def test_matches_oracle_on_grid(self):
        xs = np.linspace(-8.0, 8.0, 201)
        for x in xs:
            assert std_normal_cdf(float(x)) == pytest.approx(
                oracles.normal_cdf(float(x)), rel=1e-13, abs=1e-300)

    def test_symmetry(self):
        xs = np.linspace(-10.0, 10.0, 401)
        err = np.abs(std_normal_cdf(-xs) - (1.0 - std_normal_cdf(xs)))
        assert err.max() <= 1e-15

    def test_monotone(self):
        xs = np.linspace(-12.0, 12.0, 2001)
        assert np.all(np.diff(std_normal_cdf(xs)) >= 0.0)


class TestNormalQuantile:
    def test_median(self):
        assert std_normal_quantile(0.5) == 0.0

    def test_known_values(self):
        assert std_normal_quantile(0.9999) == pytest.approx(
            oracles.normal_quantile("0.9999"), abs=1e-9)
        assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)

    def test_domain_errors(self):
        for bad in (0.0, 1.0, -0.3, 1.7):
            with pytest.raises(DomainError):
                std_normal_quantile(bad)

    def test_round_trip_relative(self):
        # Phi(Phi^-1(p)) = p to 1e-12 relative across both tails
        ps = np.concatenate([
            np.logspace(-12, -1, 100),
            np.linspace(0.1, 0.9, 50),
            1.0 - np.logspace(-12, -1, 100),
        ])
        back = std_normal_cdf(std_normal_quantile(ps))
        assert np.max(np.abs(back - ps) / ps) <= 1e-12

    def test_inverse_on_x_grid(self):
        # above |x| ~ 5 the float rounding of p near 1 already moves x by
        # ~1e-8, so the well-conditioned range is what the identity can hold
        xs = np.linspace(-5.0, 5.0, 121)
        assert np.max(np.abs(std_normal_quantile(std_normal_cdf(xs)) - xs)) <= 1e-9


class TestRngStream:
    def test_same_key_same_sequence(self):
        a = sample_std_normal(RngStream(42, 3), 2)
        b = sample_std_normal(RngStream(42, 3), 2)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = sample_std_normal(RngStream(42, 3), 100)
        b = sample_std_normal(RngStream(42, 4), 100)
        assert not np.array_equal(a, b)

    def test_draws_advance_within_stream(self):
        rng = RngStream(42, 3)
        a = sample_std_normal(rng, 5)
        b = sample_std_normal(rng, 5)
        assert not np.array_equal(a, b)

    def test_with_stream(self):
        rng = RngStream(9)
        np.testing.assert_array_equal(
            sample_std_normal(rng.with_stream(7), 4),
            sample_std_normal(RngStream(9, 7), 4))

    def test_bad_arguments(self):
        with pytest.raises(DomainError):
            RngStream(-1)
        with pytest.raises(DomainError):
            sample_std_normal(RngStream(0), 0)

    def test_sample_moments(self):
        # CLT bounds: |mean| <= 4/sqrt(n), variance within 5% of 1
        draws = RngStream(123, 1).generator.standard_normal(100_000)
        assert abs(draws.mean()) <= 4.0 / np.sqrt(100_000)
        assert abs(draws.var() - 1.0) <= 0.05
