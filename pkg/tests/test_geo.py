import math

import numpy as np
import pytest

from carssm.geo import (
    DEFAULT_TIE_EPSILON_KM,
    EARTH_RADIUS_KM,
    OrderedSeries,
    haversine_km,
    ordered_series,
    strictify,
)

# fixed by an independent high-precision evaluation of the haversine formula
# (mpmath, 40 digits; cross-checked against the spherical law of cosines)
TAMPA_MIAMI_KM = 302.8137609114792


def equator_sites(distances_km):
    """Sites on the equator east of (0, 0) at exact great-circle distances."""
    lons = [math.degrees(d / EARTH_RADIUS_KM) for d in distances_km]
    return [0.0] * len(lons), lons


class TestHaversine:
    def test_identity(self):
        assert haversine_km(27.3, -81.2, 27.3, -81.2) == 0.0

    def test_antipodal_half_circumference(self):
        assert haversine_km(0.0, 0.0, 0.0, 180.0) == pytest.approx(
            math.pi * EARTH_RADIUS_KM, rel=1e-12
        )

    def test_fixed_reference_value(self):
        assert haversine_km(28.0, -82.0, 25.8, -80.2) == pytest.approx(
            TAMPA_MIAMI_KM, abs=1e-9
        )

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.uniform(-90, 90), rng.uniform(-180, 180)
            b = rng.uniform(-90, 90), rng.uniform(-180, 180)
            d_ab = haversine_km(a[0], a[1], b[0], b[1])
            d_ba = haversine_km(b[0], b[1], a[0], a[1])
            assert d_ab >= 0
            assert d_ab == pytest.approx(d_ba, rel=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(1)
        lats = rng.uniform(-80, 80, size=10)
        lons = rng.uniform(-170, 170, size=10)
        vec = haversine_km(lats, lons, 10.0, 20.0)
        for i in range(10):
            assert vec[i] == pytest.approx(haversine_km(lats[i], lons[i], 10.0, 20.0), rel=1e-12)


class TestStrictify:
    def test_single_duplicate(self):
        out = strictify([10.0, 10.0, 12.0])
        assert out.tolist() == [10.0, 10.000001, 12.0]

    def test_already_strict_unchanged(self):
        d = np.array([1.0, 2.5, 7.0])
        assert strictify(d).tolist() == d.tolist()

    def test_triple_tie(self):
        out = strictify([5.0, 5.0, 5.0])
        assert out.tolist() == [5.0, 5.000001, 5.000002]

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            strictify([2.0, 1.0])

    def test_perturbation_bound_and_order(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            base = np.sort(rng.uniform(0, 100, size=rng.integers(1, 30)))
            # inject tie groups
            reps = rng.integers(1, 4, size=base.size)
            d = np.sort(np.repeat(base, reps))
            out = strictify(d)
            assert np.all(np.diff(out) > 0)
            assert np.max(np.abs(out - d)) <= (reps.max() - 1) * DEFAULT_TIE_EPSILON_KM + 1e-12
            # order-preserving: strictified values sort to themselves
            assert np.array_equal(out, np.sort(out))


class TestOrderedSeries:
    def test_sorting_and_gaps(self):
        lats, lons = equator_sites([50.0, 20.0, 90.0])
        series = ordered_series(["a", "b", "c"], lats, lons, [1.0, 2.0, 3.0],
                                centroid=(0.0, 0.0))
        assert series.site_ids == ["b", "a", "c"]
        np.testing.assert_allclose(series.distances, [20.0, 50.0, 90.0], rtol=1e-12)
        np.testing.assert_allclose(series.gaps, [20.0, 30.0, 40.0], rtol=1e-12)
        assert series.values.tolist() == [2.0, 1.0, 3.0]

    def test_all_equidistant_keeps_input_order(self):
        series = ordered_series(["a", "b", "c"], [10.0] * 3, [20.0] * 3,
                                [1.0, 2.0, 3.0], centroid=(0.0, 0.0))
        assert series.site_ids == ["a", "b", "c"]
        assert np.all(np.diff(series.distances) > 0)

    def test_paper_scale(self):
        rng = np.random.default_rng(3)
        m = 449
        series = ordered_series(
            [f"f{i}" for i in range(m)],
            rng.uniform(24.5, 31.0, size=m),
            rng.uniform(-87.6, -80.0, size=m),
            rng.normal(size=m),
        )
        assert series.n_sites == m
        assert np.all(np.diff(series.distances) > 0)

    def test_site_at_centroid_gets_epsilon(self):
        series = ordered_series(["a", "b"], [28.6305, 29.0], [-82.4497, -82.0],
                                [1.0, 2.0])
        assert series.distances[0] == DEFAULT_TIE_EPSILON_KM

    def test_invariants_random_inputs_with_ties(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n_unique = int(rng.integers(2, 15))
            lats = rng.uniform(-60, 60, size=n_unique)
            lons = rng.uniform(-170, 170, size=n_unique)
            reps = rng.integers(1, 4, size=n_unique)
            lat_all = np.repeat(lats, reps)
            lon_all = np.repeat(lons, reps)
            m = lat_all.size
            values = np.where(rng.uniform(size=m) < 0.3, np.nan, rng.normal(size=m))
            series = ordered_series([f"s{i}" for i in range(m)], lat_all, lon_all,
                                    values, centroid=(0.0, 0.0))
            assert len(series.site_ids) == series.distances.size == m
            assert series.gaps.size == series.values.size == m
            assert series.distances[0] > 0
            assert np.all(np.diff(series.distances) > 0)
            np.testing.assert_allclose(
                series.gaps, np.diff(series.distances, prepend=0.0), atol=1e-12
            )
            assert series.n_observed == np.isfinite(series.values).sum()

    def test_gap_consistency_enforced(self):
        with pytest.raises(ValueError, match="gaps"):
            OrderedSeries(["a", "b"], [1.0, 2.0], [1.0, 2.0], [0.0, 0.0])
