"""Geodesic and angular primitive tests.

Reference distances were computed independently with a high-order ODE
integrator of the ellipsoid geodesic equations (DOP853, rtol 1e-13) and
are frozen here; the implementation must agree far inside 0.5%.
"""
import math
import warnings

import numpy as np
import pytest

from kharita.geo import (
    angle_diff_deg,
    circular_mean_deg,
    combined_distance_m,
    heading_variability_deg,
    initial_bearing_deg,
    initial_bearing_deg_many,
    normalize_heading,
    valid_latlon,
    vincenty_m,
    vincenty_m_many,
)

# (lat1, lon1, lat2, lon2, meters)
REFERENCE_DISTANCES = [
    (25.0, 51.0, 25.0, 51.000991180, 100.059710),        # ~100 m east
    (25.0, 51.0, 25.000903500, 51.0, 100.083309),        # ~100 m north
    (25.2798, 51.5205, 25.3548, 51.4244, 12753.737951),  # ~13 km city scale
    (0.0, 0.0, 0.0, 1.0, 111319.490793),                 # equatorial arc
    (10.0, 20.0, 11.0, 20.0, 110611.186562),             # meridian arc
    (40.7128, -74.0060, 34.0522, -118.2437, 3944422.231490),
    (-33.8688, 151.2093, 51.5074, -0.1278, 16989295.770541),
    (25.0, 51.0, 25.00001, 51.00001, 1.498718),          # ~1.5 m
    (25.0, 51.0, 25.000903500, 51.000991180, 141.522228),
]


class TestVincenty:
    @pytest.mark.parametrize("lat1,lon1,lat2,lon2,ref", REFERENCE_DISTANCES)
    def test_matches_reference(self, lat1, lon1, lat2, lon2, ref):
        d = vincenty_m(lat1, lon1, lat2, lon2)
        assert d == pytest.approx(ref, rel=0.005)   # required envelope
        assert d == pytest.approx(ref, rel=1e-6)    # actual agreement

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(42)
        lat1 = rng.uniform(-60, 60, 300)
        lon1 = rng.uniform(-179, 179, 300)
        lat2 = lat1 + rng.uniform(-0.5, 0.5, 300)
        lon2 = lon1 + rng.uniform(-0.5, 0.5, 300)
        vec = vincenty_m_many(lat1, lon1, lat2, lon2)
        for i in range(300):
            assert vec[i] == pytest.approx(
                vincenty_m(lat1[i], lon1[i], lat2[i], lon2[i]), abs=1e-9)

    def test_coincident_is_zero(self):
        assert vincenty_m(25.3, 51.2, 25.3, 51.2) == 0.0
        assert vincenty_m_many([25.3], [51.2], [25.3], [51.2])[0] == 0.0

    def test_symmetry(self):
        d1 = vincenty_m(25.0, 51.0, 25.1, 51.1)
        d2 = vincenty_m(25.1, 51.1, 25.0, 51.0)
        assert d1 == pytest.approx(d2, abs=1e-9)

    def test_equatorial_pair_converges(self):
        # both points on the equator: cos^2(alpha) == 0 path
        d = vincenty_m(0.0, 10.0, 0.0, 10.5)
        assert d == pytest.approx(0.5 * 111319.490793, rel=1e-9)

    def test_near_antipodal_falls_back(self):
        d = vincenty_m(0.0, 0.0, 0.5, 179.5)
        assert 1.95e7 < d < 2.05e7

    def test_vectorized_mixed_batch(self):
        # coincident, short, antipodal in one call
        d = vincenty_m_many([25.0, 25.0, 0.0], [51.0, 51.0, 0.0],
                            [25.0, 25.001, 0.5], [51.0, 51.0, 179.5])
        assert d[0] == 0.0
        assert d[1] == pytest.approx(vincenty_m(25.0, 51.0, 25.001, 51.0), abs=1e-9)
        assert 1.95e7 < d[2] < 2.05e7


class TestAngles:
    def test_wraparound(self):
        assert angle_diff_deg(350.0, 10.0) == pytest.approx(20.0)
        assert angle_diff_deg(10.0, 350.0) == pytest.approx(20.0)

    def test_identity_and_bounds(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            a, b = rng.uniform(0, 360, 2)
            d = angle_diff_deg(a, b)
            assert 0.0 <= d <= 180.0
            assert d == pytest.approx(angle_diff_deg(b, a))
        assert angle_diff_deg(123.4, 123.4) == 0.0
        assert angle_diff_deg(0.0, 180.0) == 180.0

    def test_normalize_heading(self):
        assert normalize_heading(360.0) == 0.0
        assert normalize_heading(-90.0) == 270.0
        assert normalize_heading(725.0) == pytest.approx(5.0)
        assert 0.0 <= normalize_heading(-1e-9) < 360.0


class TestCombinedDistance:
    def test_worked_values(self):
        # same location, opposite headings, theta 40 -> exactly theta
        d = combined_distance_m(25.0, 51.0, 0.0, 25.0, 51.0, 180.0, 40.0)
        assert d == pytest.approx(40.0, abs=1e-9)
        # 30 m apart, 90 deg apart, theta 40 -> sqrt(30^2 + 20^2)
        lat2 = 25.0 + 30.0 / 111319.49 * (30.0 / vincenty_m(25.0, 51.0, 25.0 + 30.0 / 111319.49, 51.0))
        d = combined_distance_m(25.0, 51.0, 0.0, lat2, 51.0, 90.0, 40.0)
        assert d == pytest.approx(math.sqrt(30.0 ** 2 + 20.0 ** 2), rel=1e-4)

    def test_theta_zero_reduces_to_geodesic(self):
        d = combined_distance_m(25.0, 51.0, 10.0, 25.001, 51.0, 200.0, 0.0)
        assert d == pytest.approx(vincenty_m(25.0, 51.0, 25.001, 51.0), abs=1e-9)

    def test_metric_axioms_random(self):
        """Identity, symmetry, triangle inequality on random triples."""
        rng = np.random.default_rng(123)
        for _ in range(300):
            lats = rng.uniform(25.0, 25.09, 3)
            lons = rng.uniform(51.0, 51.09, 3)
            hs = rng.uniform(0, 360, 3)
            theta = rng.choice([10.0, 40.0, 100.0])
            p = list(zip(lats, lons, hs))

            def d(i, j):
                return combined_distance_m(*p[i], *p[j], theta)

            assert d(0, 0) == 0.0
            assert d(0, 1) == pytest.approx(d(1, 0), abs=1e-9)
            assert d(0, 1) >= 0.0
            assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-6


class TestCircularMean:
    def test_wraparound_pair(self):
        assert circular_mean_deg([350.0, 10.0]) == pytest.approx(0.0, abs=1e-9)

    def test_plain_average_when_no_wrap(self):
        assert circular_mean_deg([80.0, 100.0]) == pytest.approx(90.0, abs=1e-9)

    def test_result_in_range(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            h = rng.uniform(0, 360, rng.integers(1, 12))
            m = circular_mean_deg(h)
            assert 0.0 <= m < 360.0

    def test_degenerate_warns_and_returns_first(self):
        with pytest.warns(RuntimeWarning):
            m = circular_mean_deg([0.0, 180.0])
        assert m == 0.0
        with pytest.warns(RuntimeWarning):
            m = circular_mean_deg([45.0, 135.0, 225.0, 315.0])
        assert m == 45.0

    def test_single_value(self):
        assert circular_mean_deg([123.0]) == pytest.approx(123.0)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            circular_mean_deg([])

    def test_minimizes_cosine_cost(self):
        """The mean direction must minimize sum(1 - cos(h - m)) over a
        0.1-degree grid (brute-force check)."""
        rng = np.random.default_rng(99)
        grid = np.arange(0.0, 360.0, 0.1)
        for _ in range(50):
            h = rng.uniform(0, 360, rng.integers(2, 15))
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                try:
                    m = circular_mean_deg(h)
                except RuntimeWarning:
                    continue
            cost = np.sum(1.0 - np.cos(np.radians(h[None, :] - grid[:, None])), axis=1)
            best = grid[int(np.argmin(cost))]
            d = abs(m - best) % 360.0
            assert min(d, 360.0 - d) <= 0.1 + 1e-9


class TestHeadingVariability:
    def test_symmetric_pair(self):
        # mean of {80, 100} is 90; each deviates 10
        assert heading_variability_deg([80.0, 100.0]) == pytest.approx(10.0, abs=1e-9)

    def test_identical_headings(self):
        assert heading_variability_deg([33.0, 33.0, 33.0]) == 0.0

    def test_wraparound(self):
        assert heading_variability_deg([350.0, 10.0]) == pytest.approx(10.0, abs=1e-9)


class TestBearing:
    def test_cardinal_directions(self):
        assert initial_bearing_deg(25.0, 51.0, 25.01, 51.0) == pytest.approx(0.0, abs=1e-6)
        assert initial_bearing_deg(25.0, 51.0, 25.0, 51.01) == pytest.approx(90.0, abs=0.01)
        assert initial_bearing_deg(25.0, 51.0, 24.99, 51.0) == pytest.approx(180.0, abs=1e-6)
        assert initial_bearing_deg(25.0, 51.0, 25.0, 50.99) == pytest.approx(270.0, abs=0.01)

    def test_coincident_raises(self):
        with pytest.raises(ValueError):
            initial_bearing_deg(25.0, 51.0, 25.0, 51.0)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        lat1 = rng.uniform(-60, 60, 100)
        lon1 = rng.uniform(-170, 170, 100)
        lat2 = lat1 + rng.uniform(-0.01, 0.01, 100)
        lon2 = lon1 + rng.uniform(-0.01, 0.01, 100)
        vec = initial_bearing_deg_many(lat1, lon1, lat2, lon2)
        for i in range(100):
            if lat1[i] == lat2[i] and lon1[i] == lon2[i]:
                continue
            assert vec[i] == pytest.approx(
                initial_bearing_deg(lat1[i], lon1[i], lat2[i], lon2[i]), abs=1e-9)


def test_valid_latlon():
    assert valid_latlon(25.0, 51.0)
    assert valid_latlon(-90.0, 180.0)
    assert not valid_latlon(90.5, 0.0)
    assert not valid_latlon(0.0, -180.5)
    assert not valid_latlon(float("nan"), 0.0)
    assert not valid_latlon(0.0, float("inf"))
