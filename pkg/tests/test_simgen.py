import json

import numpy as np
import pytest

from aggorient import geometry
from aggorient.geometry import GridSpec, round_half_up
from aggorient.shapecat import aspect_ratio
from aggorient.simgen import (
    EstimateErrors,
    SimParams,
    SimTruth,
    evaluate_estimates,
    noisy_ellipse_raster,
    read_dataset,
    simulate_batch,
    simulate_case,
    write_dataset,
)
from aggorient.orientation import AggregationRecord


class TestSimParams:
    def test_aspect_parameterization(self):
        p = SimParams.from_aspect_ratios(2.2, 1.4)
        assert np.exp(p.nu_a_x) == pytest.approx(2.2 * np.exp(p.nu_b_x))
        assert p.r_x == pytest.approx(2.2)
        assert p.r_y == pytest.approx(1.4)

    def test_validation(self):
        with pytest.raises(ValueError):
            SimParams.from_aspect_ratios(0.9, 1.4)
        with pytest.raises(ValueError):
            SimParams.from_aspect_ratios(2.2, 1.4, sigma2=0.0)
        with pytest.raises(ValueError):
            SimParams.from_aspect_ratios(2.2, 1.4, n_cases=0)

    def test_json_round_trip(self):
        p = SimParams.from_aspect_ratios(1.4, 1.1, seed=9, n_cases=3)
        back = SimParams.from_json(p.to_json())
        assert back == p


class TestEllipseRaster:
    def test_boundary_noise_band(self):
        # sigma_e = 0.1 puts 1 + eps approximately in [0.97, 1.03] at one sigma
        rng = np.random.default_rng(1)
        draws = rng.normal(0, 0.1, 64 * 200)
        frac = np.mean((draws > -0.03) & (draws < 0.03))
        assert frac == pytest.approx(0.236, abs=0.03)  # one-sigma band sanity
        raster = noisy_ellipse_raster(110, 50, np.random.default_rng(2), 0.1**2)
        q = (raster.points[:, 0] / 110) ** 2 + (raster.points[:, 1] / 50) ** 2
        assert q.max() <= 1.5  # boundary stays near the unit level set

    def test_log_axis_range(self):
        # nu_b = log 5, sigma = 0.03 keeps draws approximately in [4.5, 5.5]
        rng = np.random.default_rng(3)
        draws = np.exp(rng.normal(np.log(5.0), 0.03, 4000))
        assert np.mean((draws > 4.5) & (draws < 5.5)) > 0.99

    def test_four_fold_symmetric_raster(self):
        raster = noisy_ellipse_raster(40, 20, np.random.default_rng(4), 0.01)
        pts = {tuple(p) for p in raster.points}
        for x, y in list(pts)[:200]:
            assert (-x, y) in pts and (x, -y) in pts and (-x, -y) in pts


class TestSimulateCase:
    def test_deterministic(self):
        p = SimParams.from_aspect_ratios(2.2, 1.4, n_cases=1, seed=5)
        a = simulate_case(p, np.random.default_rng(7))
        b = simulate_case(p, np.random.default_rng(7))
        np.testing.assert_array_equal(a.x.points, b.x.points)
        np.testing.assert_array_equal(a.z.points, b.z.points)
        assert a.truth.t_x.angle == b.truth.t_x.angle

    def test_union_recount_oracle(self, sim_cases_22):
        _, cases = sim_cases_22
        case = cases[0]
        zx = round_half_up(case.truth.phi_x.transform(case.x.points))
        zy = round_half_up(case.truth.phi_y.transform(case.y.points))
        oracle = {tuple(p) for p in zx} | {tuple(p) for p in zy}
        assert {tuple(p) for p in case.z.points} == oracle

    def test_overlap_nonempty(self, sim_cases_22):
        _, cases = sim_cases_22
        for case in cases:
            zx = {tuple(p) for p in round_half_up(case.truth.phi_x.transform(case.x.points))}
            zy = {tuple(p) for p in round_half_up(case.truth.phi_y.transform(case.y.points))}
            assert zx & zy

    def test_angle_construction_formulas(self, sim_cases_22):
        _, cases = sim_cases_22
        for case in cases:
            t = case.truth
            sx = t.phi_x.translation + t.t_x.translation
            expect_x = np.mod(np.pi - np.arctan2(sx[1], sx[0]), 2 * np.pi)
            assert t.phi_x.angle == pytest.approx(expect_x, abs=1e-12)
            sy = t.phi_y.translation + t.t_y.translation
            expect_y = np.mod(-np.arctan2(sy[1], sy[0]), 2 * np.pi)
            assert t.phi_y.angle == pytest.approx(expect_y, abs=1e-12)

    def test_theta_t_uniform_quadrant(self):
        p = SimParams.from_aspect_ratios(1.4, 1.4, n_cases=1, seed=11)
        rng = np.random.default_rng(12)
        angles = [simulate_case(p, rng).truth.t_x.angle for _ in range(40)]
        assert all(0 <= a <= np.pi / 2 for a in angles)
        assert 0.3 < np.mean(angles) < 1.2


class TestSimulateBatch:
    def test_shape_and_determinism(self):
        p = SimParams.from_aspect_ratios(2.2, 2.2, n_cases=2, n_replicates=2, seed=21)
        a = simulate_batch(p)
        b = simulate_batch(p)
        assert len(a) == 2 and all(len(r) == 2 for r in a)
        np.testing.assert_array_equal(a[1][0].z.points, b[1][0].z.points)

    def test_disjoint_streams(self):
        p1 = SimParams.from_aspect_ratios(2.2, 2.2, n_cases=1, seed=1)
        p2 = SimParams.from_aspect_ratios(2.2, 2.2, n_cases=1, seed=2)
        a = simulate_batch(p1)[0][0]
        b = simulate_batch(p2)[0][0]
        assert a.x.points.shape != b.x.points.shape or not np.array_equal(a.x.points, b.x.points)

    def test_aspect_ratio_concentration(self):
        p = SimParams.from_aspect_ratios(2.2, 2.2, n_cases=1, seed=31)
        rng = np.random.default_rng(32)
        ratios = [aspect_ratio(simulate_case(p, rng).x) for _ in range(200)]
        assert np.mean(ratios) == pytest.approx(2.2, rel=0.05)


class TestEvaluateEstimates:
    def test_zero_at_truth(self, sim_cases_22):
        params, cases = sim_cases_22
        case = cases[0]
        rec = AggregationRecord(
            x_id="x", y_id="y", category_x="0", category_y="0",
            phi_x=case.truth.phi_x, phi_y=case.truth.phi_y,
            t_x=case.truth.t_x, t_y=case.truth.t_y,
            center=case.truth.center,
            theta_x=case.truth.theta_x, theta_y=case.truth.theta_y,
            theta_x_norm=None, theta_y_norm=None,
            aspect_x=2.2, aspect_y=2.2,
        )
        errs = evaluate_estimates(case.truth, rec, pixel_scale=params.pixel_scale)
        assert all(v == 0.0 for v in errs.as_dict().values())

    def test_pi_shift_is_equivalent(self, sim_cases_22):
        params, cases = sim_cases_22
        case = cases[0]
        shifted = geometry.RigidTransform(case.truth.t_x.translation,
                                          case.truth.t_x.angle + np.pi)
        rec = AggregationRecord(
            x_id="x", y_id="y", category_x="0", category_y="0",
            phi_x=case.truth.phi_x, phi_y=case.truth.phi_y,
            t_x=shifted, t_y=case.truth.t_y,
            center=case.truth.center,
            theta_x=case.truth.theta_x, theta_y=case.truth.theta_y,
            theta_x_norm=None, theta_y_norm=None,
            aspect_x=2.2, aspect_y=2.2,
        )
        errs = evaluate_estimates(case.truth, rec, pixel_scale=params.pixel_scale)
        assert errs.theta_t_x == pytest.approx(0.0, abs=1e-12)

    def test_translation_units(self, sim_cases_22):
        params, cases = sim_cases_22
        case = cases[0]
        offset = geometry.RigidTransform(case.truth.phi_x.translation + [10.0, 0.0],
                                         case.truth.phi_x.angle)
        rec = AggregationRecord(
            x_id="x", y_id="y", category_x="0", category_y="0",
            phi_x=offset, phi_y=case.truth.phi_y,
            t_x=case.truth.t_x, t_y=case.truth.t_y,
            center=case.truth.center,
            theta_x=case.truth.theta_x, theta_y=case.truth.theta_y,
            theta_x_norm=None, theta_y_norm=None,
            aspect_x=2.2, aspect_y=2.2,
        )
        errs = evaluate_estimates(case.truth, rec, pixel_scale=params.pixel_scale)
        assert errs.c_phi_x == pytest.approx((10.0 / params.pixel_scale) ** 2)


class TestDatasetIo:
    def test_round_trip(self, tmp_path):
        p = SimParams.from_aspect_ratios(2.2, 1.4, n_cases=2, n_replicates=1, seed=41,
                                         grid=GridSpec(300, 300))
        reps = simulate_batch(p)
        manifest = write_dataset(reps, p, tmp_path / "ds")
        params, cases = read_dataset(tmp_path / "ds")
        assert params == p
        assert len(cases) == 2
        np.testing.assert_array_equal(cases[0].x.points, reps[0][0].x.points)
        assert cases[0].truth.t_x.angle == reps[0][0].truth.t_x.angle
        blob = json.loads(manifest.read_text())
        assert len(blob["cases"]) == 2
