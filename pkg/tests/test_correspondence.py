import itertools

import numpy as np
import pytest

from aggorient import geometry
from aggorient.errors import DegenerateShapeError, InvalidCorrespondenceError
from aggorient.geometry import PointSet, RigidTransform, apply_rigid
from aggorient.correspondence import (
    Correspondence,
    PairCorrespondence,
    distance_matrix_residual,
    estimate_pair_rigid,
    estimate_rigid,
    match_one_to_one,
    match_two_to_one,
    set_distance,
)
from aggorient.orientation import normalize_angle

from conftest import random_planar, random_rigid


def brute_force_min_residual(ps, ref):
    """Exhaustive minimum of ||D(X) - mu D(X0) mu^T||_F over coverage-feasible mu.

    Enumerates every nonzero row pattern per source point (vectorized in
    chunks) and enforces column coverage; independent of the solver path.
    """
    m, m0 = len(ps), len(ref)
    d_src = geometry.distance_matrix(ps).values
    d_dst = geometry.distance_matrix(ref).values
    patterns = np.array(list(itertools.product([0, 1], repeat=m0))[1:], dtype=float)
    gram = patterns @ d_dst @ patterns.T
    masks = (patterns @ (1 << np.arange(m0))).astype(int)
    full = (1 << m0) - 1
    n_pat = len(patterns)
    best = np.inf
    # chunk over the first row's pattern to bound memory
    rest = np.array(
        np.meshgrid(*[np.arange(n_pat)] * (m - 1), indexing="ij")
    ).reshape(m - 1, -1)
    rest_mask = np.zeros(rest.shape[1], dtype=int)
    for row in rest:
        rest_mask |= masks[row]
    for first in range(n_pat):
        ok = (masks[first] | rest_mask) == full
        if not np.any(ok):
            continue
        combo = np.vstack([np.full(ok.sum(), first), rest[:, ok]])
        obj = np.zeros(combo.shape[1])
        for i in range(m):
            obj += (d_src[i, i] - gram[combo[i], combo[i]]) ** 2
            for k in range(i + 1, m):
                obj += 2.0 * (d_src[i, k] - gram[combo[i], combo[k]]) ** 2
        best = min(best, float(np.min(obj)))
    return float(np.sqrt(best))


class TestSetDistance:
    def test_zero_at_identity(self):
        ps = PointSet([(0, 0), (1, 0), (0, 1)])
        mu = Correspondence.identity(3)
        assert set_distance(ps, ps, mu, RigidTransform.identity()) == 0.0

    def test_345(self):
        ps = PointSet([(0.0, 0.0)])
        target = PointSet([(3.0, 4.0)])
        mu = Correspondence([(0, 0)])
        assert set_distance(ps, target, mu, RigidTransform.identity()) == pytest.approx(5.0)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            ps = random_planar(rng, n=12)
            target = random_planar(rng, n=9)
            pairs = np.column_stack(
                [rng.integers(0, 12, 15), rng.integers(0, 9, 15)]
            )
            mu = Correspondence(pairs)
            t = random_rigid(rng)
            moved = t.transform(ps.points)
            total = 0.0
            for i, j in mu.pairs:
                total += np.hypot(*(moved[i] - target.points[j])) ** 2
            oracle = np.sqrt(total)
            assert set_distance(ps, target, mu, t) == pytest.approx(oracle, abs=1e-12)

    def test_empty_rejected(self):
        ps = PointSet([(0, 0), (1, 1)])
        with pytest.raises(InvalidCorrespondenceError):
            Correspondence([])


class TestEstimateRigid:
    def test_identity_pair(self):
        ps = PointSet([(0, 0), (2, 0), (0, 3)])
        t = estimate_rigid(ps, ps, Correspondence.identity(3))
        np.testing.assert_allclose(t.translation, [0, 0], atol=1e-12)
        assert t.angle == pytest.approx(0.0, abs=1e-12)

    def test_recovers_generating_transform(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            ps = random_planar(rng, n=20)
            t_true = random_rigid(rng)
            moved = apply_rigid(t_true, ps)
            t_est = estimate_rigid(ps, moved, Correspondence.identity(20))
            assert abs(np.mod(t_est.angle - t_true.angle + np.pi, 2 * np.pi) - np.pi) < 1e-9
            assert np.max(np.abs(t_est.translation - t_true.translation)) < 1e-9

    def test_pure_rotation_of_centered_set(self):
        rng = np.random.default_rng(32)
        pts = rng.uniform(-5, 5, (30, 2))
        pts -= pts.mean(axis=0)
        ps = PointSet(pts)
        t_true = RigidTransform(np.zeros(2), np.pi / 3)
        moved = apply_rigid(t_true, ps)
        t_est = estimate_rigid(ps, moved, Correspondence.identity(len(ps)))
        assert t_est.angle == pytest.approx(np.pi / 3, abs=1e-9)
        np.testing.assert_allclose(t_est.translation, [0, 0], atol=1e-9)

    def test_local_minimum_of_set_distance(self):
        # perturbing the estimate never improves the objective at fixed mu
        rng = np.random.default_rng(33)
        for _ in range(20):
            ps = random_planar(rng, n=15)
            target = random_planar(rng, n=15)
            pairs = np.column_stack([np.arange(15), rng.permutation(15)])
            mu = Correspondence(pairs)
            t = estimate_rigid(ps, target, mu)
            base = set_distance(ps, target, mu, t)
            for dc in ((0.01, 0), (-0.01, 0), (0, 0.01), (0, -0.01)):
                tt = RigidTransform(t.translation + np.array(dc), t.angle)
                assert set_distance(ps, target, mu, tt) >= base - 1e-12
            for dth in (0.01, -0.01):
                tt = RigidTransform(t.translation, t.angle + dth)
                assert set_distance(ps, target, mu, tt) >= base - 1e-12

    def test_degenerate_rejected(self):
        ps = PointSet([(1.0, 1.0), (2.0, 2.0)])
        target = PointSet([(0.0, 0.0), (1.0, 0.0)])
        mu = Correspondence([(0, 0), (0, 1)])  # single source point used twice
        with pytest.raises(DegenerateShapeError):
            estimate_rigid(ps, target, mu)
        with pytest.raises(InvalidCorrespondenceError):
            estimate_rigid(ps, target, Correspondence([(0, 0)]))


class TestMatchOneToOne:
    def test_self_match_is_exact(self):
        rng = np.random.default_rng(41)
        ps = random_planar(rng, n=30)
        res = match_one_to_one(ps, ps)
        assert res.residual <= 1e-12
        assert res.converged
        src = res.correspondence.source_indices
        dst = res.correspondence.target_indices
        assert np.array_equal(np.sort(src), np.arange(30))
        assert np.all(src == dst)

    def test_rigid_copy_recovery(self):
        rng = np.random.default_rng(42)
        for _ in range(5):
            ps = random_planar(rng, n=40)
            t_true = random_rigid(rng)
            moved = apply_rigid(t_true, ps)
            perm = rng.permutation(40)
            res = match_one_to_one(PointSet(moved.points[perm]), ps)
            # recovered transform maps the copy back onto the original points
            t = res.transform
            back = t.transform(moved.points[perm])
            assert np.max(np.abs(back - ps.points[perm])) < 1e-3
            assert res.residual < 1e-6
            inv = geometry.invert_rigid(t_true)
            dtheta = np.mod(t.angle - inv.angle + np.pi, 2 * np.pi) - np.pi
            assert abs(dtheta) < 1e-3

    def test_small_instance_exact_oracle(self):
        rng = np.random.default_rng(43)
        checked = 0
        for _ in range(8):
            m = int(rng.integers(3, 5))
            ps = random_planar(rng, n=m)
            t = random_rigid(rng)
            moved = apply_rigid(t, ps)
            src = PointSet(moved.points[rng.permutation(m)])
            res = match_one_to_one(src, ps)
            oracle = brute_force_min_residual(src, ps)
            assert res.residual == oracle
            checked += 1
        assert checked == 8

    def test_trace_nonincreasing(self, sim_cases_22):
        _, cases = sim_cases_22
        ref = geometry.mds_embed(geometry.distance_matrix(geometry.subsample(cases[0].x, 200)))
        res = match_one_to_one(cases[1].x, ref)
        trace = np.asarray(res.trace)
        assert np.all(np.diff(trace) <= 1e-12)
        assert res.residual == trace[-1]

    def test_coverage_invariant(self, sim_cases_22):
        _, cases = sim_cases_22
        ref = geometry.mds_embed(geometry.distance_matrix(geometry.subsample(cases[0].x, 200)))
        res = match_one_to_one(cases[1].x, ref)
        m, m0 = len(res.sets[0]), len(res.sets[1])
        assert res.correspondence.covers(m, m0)

    def test_table1_band_t_x(self, sim_cases_22):
        # ellipse protocol at r_X = 2.2: mean angular error for the standard
        # alignment within the published band (paper 0.0007, accept <= 0.005)
        params, cases = sim_cases_22
        ref = geometry.mds_embed(geometry.distance_matrix(geometry.subsample(cases[0].x, 200)))
        errs = []
        for case in cases:
            res = match_one_to_one(case.x, ref)
            errs.append(
                1 - np.cos(normalize_angle(case.truth.t_x.angle) - normalize_angle(res.transform.angle))
            )
        assert np.mean(errs) <= 0.005


class TestMatchTwoToOne:
    def test_degenerate_twin_coverage(self):
        rng = np.random.default_rng(51)
        theta = rng.uniform(0, 2 * np.pi, 300)
        r = np.sqrt(rng.uniform(0, 1, 300))
        pts = np.column_stack([20 + 8 * r * np.cos(theta), 20 + 4 * r * np.sin(theta)])
        blob = PointSet(geometry.round_half_up(pts))
        res = match_two_to_one(blob, blob, blob)
        pc = res.correspondence
        assert pc.covers(len(res.sets[0]), len(res.sets[1]), len(res.sets[2]))

    def test_synthetic_case_recovery(self, sim_cases_22):
        params, cases = sim_cases_22
        errs = []
        for case in cases:
            res = match_two_to_one(case.x, case.y, case.z)
            ex = 1 - np.cos(
                normalize_angle(case.truth.phi_x.angle) - normalize_angle(res.transforms[0].angle)
            )
            errs.append(ex)
            assert res.correspondence.covers(
                len(res.sets[0]), len(res.sets[1]), len(res.sets[2])
            )
            assert np.all(np.diff(np.asarray(res.trace)) <= 1e-12)
        assert np.mean(errs) <= 0.002

    def test_result_serializable(self, sim_cases_22):
        _, cases = sim_cases_22
        res = match_two_to_one(cases[0].x, cases[0].y, cases[0].z)
        blob = res.to_json()
        assert set(blob) == {"transforms", "pairs", "residual", "iterations", "converged"}
        assert len(blob["transforms"]) == 2


class TestEstimatePairRigid:
    def test_separates_into_single_estimates(self):
        rng = np.random.default_rng(61)
        x = random_planar(rng, n=12)
        y = random_planar(rng, n=10)
        z = random_planar(rng, n=25)
        pc = PairCorrespondence(
            Correspondence(np.column_stack([np.arange(12), rng.integers(0, 25, 12)])),
            Correspondence(np.column_stack([np.arange(10), rng.integers(0, 25, 10)])),
        )
        t_x, t_y = estimate_pair_rigid(x, y, z, pc)
        t_x_solo = estimate_rigid(x, z, pc.mu_x)
        t_y_solo = estimate_rigid(y, z, pc.mu_y)
        np.testing.assert_allclose(t_x.translation, t_x_solo.translation)
        assert t_x.angle == t_x_solo.angle
        np.testing.assert_allclose(t_y.translation, t_y_solo.translation)
        assert t_y.angle == t_y_solo.angle

    def test_known_transforms_recovered(self):
        rng = np.random.default_rng(62)
        x = random_planar(rng, n=30)
        y = random_planar(rng, n=25)
        tx, ty = random_rigid(rng), random_rigid(rng)
        z = PointSet(np.vstack([tx.transform(x.points), ty.transform(y.points)]))
        pc = PairCorrespondence(
            Correspondence(np.column_stack([np.arange(30), np.arange(30)])),
            Correspondence(np.column_stack([np.arange(25), 30 + np.arange(25)])),
        )
        ex, ey = estimate_pair_rigid(x, y, z, pc)
        assert abs(np.mod(ex.angle - tx.angle + np.pi, 2 * np.pi) - np.pi) < 1e-9
        assert abs(np.mod(ey.angle - ty.angle + np.pi, 2 * np.pi) - np.pi) < 1e-9
        assert np.max(np.abs(ex.translation - tx.translation)) < 1e-9

    def test_role_swap_symmetry(self):
        rng = np.random.default_rng(63)
        x = random_planar(rng, n=8)
        y = random_planar(rng, n=9)
        z = random_planar(rng, n=20)
        mu_x = Correspondence(np.column_stack([np.arange(8), rng.integers(0, 20, 8)]))
        mu_y = Correspondence(np.column_stack([np.arange(9), rng.integers(0, 20, 9)]))
        t_x, t_y = estimate_pair_rigid(x, y, z, PairCorrespondence(mu_x, mu_y))
        s_y, s_x = estimate_pair_rigid(y, x, z, PairCorrespondence(mu_y, mu_x))
        assert t_x.angle == s_x.angle and t_y.angle == s_y.angle
        np.testing.assert_allclose(t_x.translation, s_x.translation)
        np.testing.assert_allclose(t_y.translation, s_y.translation)


def test_distance_matrix_residual_identity():
    rng = np.random.default_rng(71)
    ps = random_planar(rng, n=10)
    assert distance_matrix_residual(ps, ps, Correspondence.identity(10)) == 0.0
