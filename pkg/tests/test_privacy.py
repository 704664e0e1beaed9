"""k-anonymity quantification tests: buffer quantiles, counting against
a brute-force recount oracle, report summaries, and calibration."""

import math
from datetime import datetime, timezone
from fractions import Fraction

import numpy as np
import pytest

from geopriv.errors import InvalidCoverageError, NoResidentialDataError
from geopriv.geo import GeoPoint, build_point_index, haversine_distance
from geopriv.ingest import TraceRecord, sample_residential_points
from geopriv.mask import MaskConfig, MaskedRecord, mask_dataset
from geopriv.privacy import (
    EvalReport,
    KAnonResult,
    buffer_radius,
    calibrate_c,
    evaluate_dataset,
    k_anonymity,
    laplace_buffer_radius,
)
from geopriv.sampling import laplace_radial_cdf

from conftest import sample_city_records

T = datetime(2021, 3, 1, tzinfo=timezone.utc)
DEG_M = 111_194.9266  # meters per degree of latitude


def masked_at(lat, lon, orig_lat=None, orig_lon=None, sigma=100.0, mech="gaussian-skew"):
    masked_point = GeoPoint(lat, lon)
    original = None
    displacement = 0.0
    if orig_lat is not None:
        original = TraceRecord("u1", T, GeoPoint(orig_lat, orig_lon))
        displacement = haversine_distance(masked_point, original.point)
    return MaskedRecord(
        user_id="u1",
        timestamp=T,
        masked_point=masked_point,
        mechanism=mech,
        displacement_m=displacement,
        sigma_eff=sigma,
        original=original,
    )


class TestBufferRadius:
    def test_small_coverage_small_radius(self):
        assert buffer_radius(100.0, 1e-12) == pytest.approx(0.0, abs=1e-3)

    def test_hand_value(self):
        r = buffer_radius(100.0, 0.95)
        assert r == pytest.approx(100.0 * math.sqrt(-2.0 * math.log(0.05)), rel=1e-12)
        assert round(r, 1) == 244.8

    def test_quantile_identity(self):
        assert buffer_radius(100.0, 1.0 - math.exp(-0.5)) == pytest.approx(100.0, rel=1e-12)

    def test_invalid_coverage(self):
        with pytest.raises(InvalidCoverageError):
            buffer_radius(100.0, 1.0)
        with pytest.raises(InvalidCoverageError):
            buffer_radius(100.0, 0.0)

    def test_laplace_buffer_radius_inverts_cdf(self):
        r = laplace_buffer_radius(0.02, 0.95)
        assert laplace_radial_cdf(r, 0.02) == pytest.approx(0.95, abs=1e-10)


class TestKAnonymity:
    def test_empty_index_original_outside(self):
        idx = build_point_index([])
        m = masked_at(0.0, 0.0, orig_lat=0.05, orig_lon=0.0)
        res = k_anonymity(m, idx, 100.0)
        assert res.k == 1
        assert res.risk == Fraction(1, 1)
        assert not res.includes_original

    def test_four_homes_plus_original(self):
        homes = [
            ("h1", GeoPoint(0.0, 0.0002)),
            ("h2", GeoPoint(0.0002, 0.0)),
            ("h3", GeoPoint(0.0, -0.0002)),
            ("h4", GeoPoint(-0.0002, 0.0)),
            ("far", GeoPoint(0.05, 0.05)),
        ]
        idx = build_point_index(homes)
        m = masked_at(0.0, 0.0, orig_lat=0.0001, orig_lon=0.0001)
        res = k_anonymity(m, idx, 100.0)
        assert res.k == 5
        assert res.risk == Fraction(1, 5)
        assert res.includes_original

    def test_original_coincident_with_home_not_double_counted(self):
        homes = [("h1", GeoPoint(0.0001, 0.0001))]
        idx = build_point_index(homes)
        m = masked_at(0.0, 0.0, orig_lat=0.0001, orig_lon=0.0001)
        res = k_anonymity(m, idx, 100.0)
        assert res.k == 1
        assert not res.includes_original

    def test_csv_records_use_stored_displacement(self):
        idx = build_point_index([("h1", GeoPoint(0.0, 0.0002))])
        m = MaskedRecord(
            user_id="u1",
            timestamp=T,
            masked_point=GeoPoint(0.0, 0.0),
            mechanism="gaussian-skew",
            displacement_m=30.0,
            sigma_eff=100.0,
        )
        assert k_anonymity(m, idx, 100.0).k == 2  # home + assumed original
        assert k_anonymity(m, idx, 20.0).k == 1  # displacement beyond buffer

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(31)
        homes = [
            (f"h{i}", GeoPoint(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)))
            for i in range(2000)
        ]
        idx = build_point_index(homes)
        for _ in range(1000):
            masked_point = GeoPoint(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02))
            orig = GeoPoint(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02))
            radius = rng.uniform(1.0, 2000.0)
            m = masked_at(
                masked_point.lat_deg, masked_point.lon_deg, orig.lat_deg, orig.lon_deg
            )
            got = k_anonymity(m, idx, radius)
            expected = sum(
                1 for _, h in homes if haversine_distance(masked_point, h) <= radius
            )
            if haversine_distance(masked_point, orig) <= radius and not any(
                h == orig for _, h in homes
            ):
                expected += 1
            assert got.k == max(expected, 1)

    def test_risk_times_k_is_one_exactly(self):
        for k in (1, 3, 7, 997):
            res = KAnonResult(k, Fraction(1, k), 10.0, False)
            assert res.risk * res.k == 1


class TestEvaluateDataset:
    def test_single_record_summary(self):
        idx = [("h1", GeoPoint(0.0, 0.0002)), ("h2", GeoPoint(0.0002, 0.0))]
        m = masked_at(0.0, 0.0, orig_lat=0.0001, orig_lon=0.0001, sigma=100.0)
        report = evaluate_dataset([m], idx, coverage=0.95, k_target=2)
        assert report.min_k == report.median_k == report.results[0].k
        assert report.summary()["n"] == 1

    def test_requires_homes(self):
        m = masked_at(0.0, 0.0, orig_lat=0.0001, orig_lon=0.0001)
        with pytest.raises(NoResidentialDataError):
            evaluate_dataset([m], [], coverage=0.95, k_target=5)

    def test_fraction_by_recount(self):
        rng = np.random.default_rng(37)
        homes = [
            (f"h{i}", GeoPoint(rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)))
            for i in range(3000)
        ]
        records = [
            masked_at(
                float(rng.uniform(-0.015, 0.015)),
                float(rng.uniform(-0.015, 0.015)),
                orig_lat=float(rng.uniform(-0.015, 0.015)),
                orig_lon=float(rng.uniform(-0.015, 0.015)),
                sigma=float(rng.uniform(50, 400)),
            )
            for _ in range(200)
        ]
        k_target = 5
        report = evaluate_dataset(records, homes, coverage=0.9, k_target=k_target)
        recount = sum(1 for r in report.results if r.k >= k_target) / len(report.results)
        assert report.frac_k_ge_target == recount

    def test_fraction_monotone_in_target(self):
        rng = np.random.default_rng(41)
        homes = [
            (f"h{i}", GeoPoint(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)))
            for i in range(1000)
        ]
        records = [
            masked_at(
                float(rng.uniform(-0.01, 0.01)),
                float(rng.uniform(-0.01, 0.01)),
                orig_lat=float(rng.uniform(-0.01, 0.01)),
                orig_lon=float(rng.uniform(-0.01, 0.01)),
                sigma=200.0,
            )
            for _ in range(100)
        ]
        fracs = [
            evaluate_dataset(records, homes, 0.95, kt).frac_k_ge_target for kt in (2, 5, 10, 20)
        ]
        assert all(a >= b for a, b in zip(fracs, fracs[1:]))

    def test_summary_recomputable_from_per_point(self):
        rng = np.random.default_rng(43)
        homes = [
            (f"h{i}", GeoPoint(rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)))
            for i in range(500)
        ]
        records = [
            masked_at(
                float(rng.uniform(-0.008, 0.008)),
                float(rng.uniform(-0.008, 0.008)),
                orig_lat=float(rng.uniform(-0.008, 0.008)),
                orig_lon=float(rng.uniform(-0.008, 0.008)),
            )
            for _ in range(50)
        ]
        report = evaluate_dataset(records, homes, 0.95, 5)
        ks = [r.k for r in report.results]
        s = report.summary()
        assert s["min_k"] == min(ks)
        assert s["mean_k"] == sum(ks) / len(ks)
        assert s["frac_k_ge_target"] == sum(1 for k in ks if k >= 5) / len(ks)
        assert s["worst_case_user_k"]["u1"] == min(ks)

    def test_laplace_records_use_laplace_quantile(self):
        idx = [("h1", GeoPoint(0.0, 0.0002))]
        m = MaskedRecord(
            user_id="u1",
            timestamp=T,
            masked_point=GeoPoint(0.0, 0.0),
            mechanism="planar-laplace",
            displacement_m=10.0,
            epsilon=0.02,
        )
        report = evaluate_dataset([m], idx, coverage=0.95, k_target=2)
        assert report.results[0].buffer_radius_m == pytest.approx(
            laplace_buffer_radius(0.02, 0.95), rel=1e-12
        )


class TestCalibration:
    def test_k_target_one_returns_grid_start(self, city_pop):
        homes = sample_residential_points(city_pop, 200, seed=3)
        sample = sample_city_records(city_pop, 50, seed=5)
        c = calibrate_c(city_pop, homes, sample, k_target=1, coverage=0.95, seed=0)
        assert c == 1.0

    def test_denser_homes_weakly_decrease_c(self, city_pop):
        sample = sample_city_records(city_pop, 80, seed=6)
        sparse = sample_residential_points(city_pop, 60, seed=3)
        dense = sample_residential_points(city_pop, 30, seed=3)
        c_sparse = calibrate_c(city_pop, sparse, sample, k_target=5, seed=0)
        c_dense = calibrate_c(city_pop, dense, sample, k_target=5, seed=0)
        assert c_dense <= c_sparse

    def test_returned_c_passes_independent_evaluation(self, city_pop):
        homes = sample_residential_points(city_pop, 30, seed=3)
        sample = sample_city_records(city_pop, 100, seed=7)
        c = calibrate_c(city_pop, homes, sample, k_target=5, coverage=0.95, seed=11)
        masked, _ = mask_dataset(
            sample, city_pop, MaskConfig(scale_m=c), "gaussian-skew", seed=11
        )
        report = evaluate_dataset(masked, homes, 0.95, 5)
        assert report.frac_k_ge_target >= 0.95

    def test_grid_steps_are_geometric(self, city_pop):
        homes = sample_residential_points(city_pop, 30, seed=3)
        sample = sample_city_records(city_pop, 60, seed=9)
        c = calibrate_c(city_pop, homes, sample, k_target=5, seed=1)
        # every grid value is 1.25^i
        i = round(math.log(c) / math.log(1.25))
        assert c == pytest.approx(1.25 ** i, rel=1e-9)
