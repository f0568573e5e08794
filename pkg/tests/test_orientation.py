import numpy as np
import pytest

from aggorient import geometry, simgen
from aggorient.errors import NoOverlapError, StageError, UndefinedOrientationError
from aggorient.geometry import PointSet, RigidTransform, apply_rigid, mds_embed, distance_matrix, subsample
from aggorient.correspondence import Correspondence, PairCorrespondence
from aggorient.orientation import (
    AggregationRecord,
    aggregation_center,
    analyze_aggregation,
    normalize_angle,
    normalize_angles,
    orientation_angle,
)


class TestNormalizeAngle:
    def test_spec_values(self):
        assert normalize_angle(2 * np.pi / 3) == pytest.approx(np.pi / 3, abs=1e-15)
        assert normalize_angle(-np.pi / 4) == pytest.approx(np.pi / 4, abs=1e-15)
        assert normalize_angle(np.pi / 2) == np.pi / 2

    def test_four_fold_collapse_on_grid(self):
        thetas = np.linspace(0.0, np.pi / 2, 1000)
        base = normalize_angles(thetas)
        np.testing.assert_allclose(base, thetas, atol=1e-15)
        for variant in (-thetas, np.pi - thetas, -np.pi + thetas):
            np.testing.assert_allclose(normalize_angles(variant), base, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for theta in rng.uniform(-np.pi, np.pi, 200):
            once = normalize_angle(theta)
            assert normalize_angle(once) == once
            assert 0.0 <= once <= np.pi / 2

    def test_out_of_range_inputs_wrapped(self):
        assert normalize_angle(2 * np.pi + 0.3) == pytest.approx(0.3, abs=1e-12)
        assert normalize_angle(-3 * np.pi / 2) == pytest.approx(np.pi / 2, abs=1e-12)


class TestAggregationCenter:
    def test_symmetric_overlap(self):
        # two unit squares sharing the raster [0,1]x[0,1]
        grid = [(i, j) for i in range(2) for j in range(2)]
        z = PointSet(np.asarray(grid, dtype=float))
        mu = Correspondence(np.column_stack([np.zeros(4, int), np.arange(4)]))
        pc = PairCorrespondence(mu, mu)
        np.testing.assert_allclose(aggregation_center(z, pc), [0.5, 0.5])

    def test_full_coverage_gives_centroid(self):
        rng = np.random.default_rng(2)
        z = PointSet(rng.uniform(0, 10, (30, 2)))
        mu_x = Correspondence(np.column_stack([np.zeros(30, int), np.arange(30)]))
        mu_y = Correspondence(np.column_stack([np.zeros(30, int), np.arange(30)]))
        out = aggregation_center(z, PairCorrespondence(mu_x, mu_y))
        np.testing.assert_allclose(out, z.centroid)

    def test_matches_recount_oracle(self):
        rng = np.random.default_rng(3)
        z = PointSet(rng.uniform(0, 10, (40, 2)))
        mu_x = Correspondence(np.column_stack([rng.integers(0, 5, 25), rng.choice(40, 25, replace=False)]))
        mu_y = Correspondence(np.column_stack([rng.integers(0, 5, 25), rng.choice(40, 25, replace=False)]))
        covered_x = set(mu_x.target_indices.tolist())
        covered_y = set(mu_y.target_indices.tolist())
        both = sorted(covered_x & covered_y)
        oracle = z.points[both].mean(axis=0)
        np.testing.assert_allclose(aggregation_center(z, PairCorrespondence(mu_x, mu_y)), oracle)

    def test_no_overlap_rejected(self):
        z = PointSet([(0, 0), (1, 0), (2, 0), (3, 0)])
        mu_x = Correspondence([(0, 0), (0, 1)])
        mu_y = Correspondence([(0, 2), (0, 3)])
        with pytest.raises(NoOverlapError):
            aggregation_center(z, PairCorrespondence(mu_x, mu_y))


class TestOrientationAngle:
    def test_unit_directions(self):
        ident = RigidTransform.identity()
        assert orientation_angle(ident, ident, (1.0, 0.0)) == pytest.approx(0.0)
        assert orientation_angle(ident, ident, (0.0, -1.0)) == pytest.approx(-np.pi / 2)

    def test_composition(self):
        phi = RigidTransform(np.array([1.0, 2.0]), 0.7)
        t = RigidTransform(np.array([-0.5, 0.3]), 2.1)
        center = np.array([3.0, 1.0])
        pulled = t.transform(geometry.invert_rigid(phi).transform(center))
        expected = np.arctan2(pulled[1], pulled[0])
        assert orientation_angle(t, phi, center) == pytest.approx(expected)

    def test_undefined_at_origin(self):
        ident = RigidTransform.identity()
        with pytest.raises(UndefinedOrientationError):
            orientation_angle(ident, ident, (1e-9, 0.0))


@pytest.fixture(scope="module")
def analyzed(sim_cases_22):
    params, cases = sim_cases_22
    ref_x = mds_embed(distance_matrix(subsample(cases[0].x, 200)))
    ref_y = mds_embed(distance_matrix(subsample(cases[0].y, 200)))
    records = [
        analyze_aggregation(c.x, c.y, c.z, ref_x, ref_y, x_id=f"{c.case_id}_x",
                            y_id=f"{c.case_id}_y")
        for c in cases[:3]
    ]
    return params, cases[:3], records


class TestAnalyzeAggregation:
    def test_record_fields_complete(self, analyzed):
        _, cases, records = analyzed
        for case, rec in zip(cases, records):
            assert rec.x_id == f"{case.case_id}_x"
            assert 0.0 <= rec.theta_x_norm <= np.pi / 2
            assert 0.0 <= rec.theta_y_norm <= np.pi / 2
            assert rec.aspect_x > 1.4  # r = 2.2 primaries
            lo = case.z.points.min(axis=0)
            hi = case.z.points.max(axis=0)
            assert np.all(rec.center >= lo) and np.all(rec.center <= hi)

    def test_transform_errors_within_bands(self, analyzed):
        params, cases, records = analyzed
        errs = [simgen.evaluate_estimates(c.truth, r, pixel_scale=params.pixel_scale)
                for c, r in zip(cases, records)]
        assert np.mean([e.theta_t_x for e in errs]) <= 0.005
        assert np.mean([e.theta_phi_x for e in errs]) <= 0.002

    def test_orientation_close_to_truth(self, analyzed):
        params, cases, records = analyzed
        errs = [simgen.evaluate_estimates(c.truth, r, pixel_scale=params.pixel_scale)
                for c, r in zip(cases, records)]
        # orientation angles inherit center noise; band is wider than the
        # transform-angle bands but still tight for r = 2.2 primaries
        assert np.mean([e.theta_x for e in errs]) <= 0.05

    def test_json_round_trip(self, analyzed):
        _, _, records = analyzed
        blob = records[0].to_json()
        back = AggregationRecord.from_json(blob)
        assert back.x_id == records[0].x_id
        assert back.theta_x == records[0].theta_x
        np.testing.assert_allclose(back.center, records[0].center)

    def test_repose_invariance(self, sim_cases_22):
        # a common rigid motion applied to a primary and the aggregate leaves
        # the measured orientation unchanged (continuous coordinates)
        params, cases = sim_cases_22
        case = cases[0]
        ref_x = mds_embed(distance_matrix(subsample(case.x, 200)))
        ref_y = mds_embed(distance_matrix(subsample(case.y, 200)))
        base = analyze_aggregation(case.x, case.y, case.z, ref_x, ref_y)
        g = RigidTransform(np.array([13.0, -20.0]), 0.9)
        moved = analyze_aggregation(
            apply_rigid(g, case.x), apply_rigid(g, case.y), apply_rigid(g, case.z),
            ref_x, ref_y,
        )
        assert abs(1 - np.cos(base.theta_x_norm - moved.theta_x_norm)) < 0.005

    def test_low_aspect_flagged(self):
        params = simgen.SimParams.from_aspect_ratios(1.1, 2.2, n_cases=1, seed=3)
        case = simgen.simulate_case(params, np.random.default_rng(4))
        ref_x = mds_embed(distance_matrix(subsample(case.x, 200)))
        ref_y = mds_embed(distance_matrix(subsample(case.y, 200)))
        rec = analyze_aggregation(case.x, case.y, case.z, ref_x, ref_y)
        assert "low_aspect_x" in rec.warnings
        assert "low_aspect_y" not in rec.warnings

    def test_stage_errors_labeled(self):
        tiny = PointSet([(0.0, 0.0), (1.0, 1.0)])
        with pytest.raises(StageError, match="align_x"):
            analyze_aggregation(tiny, tiny, tiny, tiny, tiny)

    def test_asymmetric_category_keeps_raw_angle(self, sim_cases_22):
        _, cases = sim_cases_22
        case = cases[1]
        ref_x = mds_embed(distance_matrix(subsample(case.x, 200)))
        ref_y = mds_embed(distance_matrix(subsample(case.y, 200)))
        rec = analyze_aggregation(case.x, case.y, case.z, ref_x, ref_y,
                                  symmetric_x=False)
        assert rec.theta_x_norm is None
        assert rec.theta_y_norm is not None
