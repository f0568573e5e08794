"""Point correspondences and the rigid transforms they induce.

Two solvers are provided: aligning one shape to a reference, and aligning
two primaries into their aggregate.  Both alternate a nearest-neighbor
correspondence update (with coverage repair) against the closed-form rigid
estimate, scoring iterates by the Frobenius discrepancy between the
correspondence-permuted Euclidean distance matrices; the best iterate seen
is returned and the logged objective trace is nonincreasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateShapeError, InvalidCorrespondenceError
from .geometry import (
    PointSet,
    RigidTransform,
    _pairwise_distances,
    mds_embed,
    distance_matrix,
    subsample,
)

DEFAULT_MAX_POINTS = 200
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-8


def _as_pairs(pairs) -> np.ndarray:
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=int)
    if arr.size == 0:
        raise InvalidCorrespondenceError("correspondence has no pairs")
    arr = arr.reshape(-1, 2)
    if np.any(arr < 0):
        raise InvalidCorrespondenceError("negative index in correspondence")
    arr = np.unique(arr, axis=0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Binary relation between source indices and target indices."""

    pairs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pairs", _as_pairs(self.pairs))

    @classmethod
    def identity(cls, m: int) -> "Correspondence":
        idx = np.arange(m)
        return cls(np.column_stack([idx, idx]))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def source_indices(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_indices(self) -> np.ndarray:
        return self.pairs[:, 1]

    def covers(self, m: int, m_target: int) -> bool:
        """Row/column coverage: every source and every target index appears."""
        return (
            len(np.unique(self.source_indices)) == m
            and len(np.unique(self.target_indices)) == m_target
        )

    def as_matrix(self, m: int, m_target: int) -> np.ndarray:
        mu = np.zeros((m, m_target))
        mu[self.source_indices, self.target_indices] = 1.0
        return mu


@dataclass(frozen=True, eq=False)
class PairCorrespondence:
    """Correspondences from each primary into the aggregate."""

    mu_x: Correspondence
    mu_y: Correspondence

    def covers(self, m_x: int, m_y: int, m_z: int) -> bool:
        """Each primary index covered; each aggregate index hit by either side."""
        if len(np.unique(self.mu_x.source_indices)) != m_x:
            return False
        if len(np.unique(self.mu_y.source_indices)) != m_y:
            return False
        hit = np.zeros(m_z, dtype=bool)
        hit[self.mu_x.target_indices] = True
        hit[self.mu_y.target_indices] = True
        return bool(np.all(hit))


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Solver output: correspondence(s), transform(s), residual and trace.

    ``sets`` holds the point sets actually matched (after any point-budget
    subsampling), so pair indices stay interpretable.
    """

    correspondence: Correspondence | PairCorrespondence
    transforms: tuple[RigidTransform, ...]
    residual: float
    iterations: int
    converged: bool
    trace: tuple[float, ...] = field(default_factory=tuple)
    sets: tuple[PointSet, ...] = field(default_factory=tuple)

    @property
    def transform(self) -> RigidTransform:
        return self.transforms[0]

    def to_json(self) -> dict:
        if isinstance(self.correspondence, PairCorrespondence):
            pairs = {
                "mu_x": self.correspondence.mu_x.pairs.tolist(),
                "mu_y": self.correspondence.mu_y.pairs.tolist(),
            }
        else:
            pairs = {"mu": self.correspondence.pairs.tolist()}
        return {
            "transforms": [t.to_json() for t in self.transforms],
            "pairs": pairs,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def set_distance(
    ps: PointSet,
    target: PointSet,
    mu: Correspondence,
    t: RigidTransform,
    p: float = 2.0,
) -> float:
    """(sum over pairs of |t(x_i) - x0_j|^p)^(1/p) for the given correspondence."""
    if len(mu) == 0:
        raise InvalidCorrespondenceError("empty correspondence")
    moved = t.transform(ps.points[mu.source_indices])
    diff = moved - target.points[mu.target_indices]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return float(np.sum(dist**p) ** (1.0 / p))


def estimate_rigid(ps: PointSet, target: PointSet, mu: Correspondence) -> RigidTransform:
    """Closed-form rigid transform minimizing the squared set distance at fixed mu.

    The rotation comes from the two-argument arctangent of the cross and dot
    products of correspondence-centered coordinates; the translation then
    follows from the weighted means.  Centering decouples the translation
    from the rotation, which the raw first-order expressions leave coupled.
    """
    if len(mu) < 2:
        raise InvalidCorrespondenceError("need at least 2 correspondence pairs")
    src = ps.points[mu.source_indices]
    dst = target.points[mu.target_indices]
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    u = src - src_mean
    v = dst - dst_mean
    scale = max(float(np.max(np.abs(u))), float(np.max(np.abs(v))), 1e-30)
    if float(np.max(np.abs(u))) < 1e-12 * scale or float(np.max(np.abs(v))) < 1e-12 * scale:
        raise DegenerateShapeError("correspondences are coincident")
    dot = float(np.einsum("ij,ij->", u, v))
    cross = float(np.einsum("i,i->", u[:, 0], v[:, 1]) - np.einsum("i,i->", u[:, 1], v[:, 0]))
    theta = 0.0 if np.hypot(dot, cross) < 1e-15 * scale * scale else float(np.arctan2(cross, dot))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    c = src_mean - rot.T @ dst_mean
    return RigidTransform(c, theta)


def estimate_pair_rigid(
    x: PointSet, y: PointSet, z: PointSet, pc: PairCorrespondence
) -> tuple[RigidTransform, RigidTransform]:
    """Closed-form transforms mapping each primary into the aggregate.

    The two-body objective separates, so each transform is the single-shape
    estimate under its own correspondence.
    """
    return estimate_rigid(x, z, pc.mu_x), estimate_rigid(y, z, pc.mu_y)


def distance_matrix_residual(ps: PointSet, target: PointSet, mu: Correspondence) -> float:
    """|| D(X) - mu D(X0) mu^T ||_F, the rigid-invariant matching objective."""
    d_src = _pairwise_distances(ps.points)
    d_dst = _pairwise_distances(target.points)
    return _dd_residual(d_src, d_dst, mu.as_matrix(len(ps), len(target)))


def _dd_residual(d_src: np.ndarray, d_dst: np.ndarray, mu: np.ndarray) -> float:
    mapped = mu @ d_dst @ mu.T
    return float(np.linalg.norm(d_src - mapped))


def _nn_with_repair(src_xy: np.ndarray, dst_xy: np.ndarray) -> np.ndarray:
    """Each source to its nearest target; uncovered targets get their nearest source.

    Ties resolve to the lowest index, so the update is deterministic.
    """
    d2 = _sq_dists(src_xy, dst_xy)
    j = np.argmin(d2, axis=1)
    pairs = [np.column_stack([np.arange(len(src_xy)), j])]
    covered = np.zeros(len(dst_xy), dtype=bool)
    covered[j] = True
    missing = np.nonzero(~covered)[0]
    if len(missing):
        i = np.argmin(d2[:, missing], axis=0)
        pairs.append(np.column_stack([i, missing]))
    return np.vstack(pairs)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(d2, 0.0)


_START_ROTATIONS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)


def _candidate_poses(emb: np.ndarray):
    for reflect in (False, True):
        base = emb.copy()
        if reflect:
            base[:, 1] = -base[:, 1]
        for rot in _START_ROTATIONS:
            c, s = np.cos(rot), np.sin(rot)
            yield base @ np.array([[c, s], [-s, c]])  # right-multiply by R^T


def match_one_to_one(
    ps: PointSet,
    reference: PointSet,
    *,
    max_points: int = DEFAULT_MAX_POINTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> MatchResult:
    """Estimate the correspondence and rigid transform aligning ps to reference.

    Both sets are capped at ``max_points`` by farthest-point subsampling
    before any distance-matrix work.  Starts are generated by posing the MDS
    embeddings at the four quarter-turn rotations with and without a
    reflection; the start with the lowest matching objective seeds the
    alternating solver.
    """
    ps_u = subsample(ps, max_points)
    ref_u = subsample(reference, max_points)
    ps_u.require_planar_rank()
    ref_u.require_planar_rank()
    d_src = _pairwise_distances(ps_u.points)
    d_dst = _pairwise_distances(ref_u.points)

    emb_src = mds_embed(distance_matrix(ps_u)).points
    emb_dst = mds_embed(distance_matrix(ref_u)).points
    best_pairs, best_obj = None, np.inf
    for pose in _candidate_poses(emb_src):
        cand = _nn_with_repair(pose, emb_dst)
        obj = _dd_residual(d_src, d_dst, _pairs_matrix(cand, len(ps_u), len(ref_u)))
        if obj < best_obj:
            best_pairs, best_obj = cand, obj

    pairs, trace, iterations, converged = _alternate(
        d_src,
        d_dst,
        best_pairs,
        best_obj,
        lambda pr: _one_to_one_update(ps_u, ref_u, pr),
        max_iter,
        tol,
    )
    mu = Correspondence(pairs)
    transform = estimate_rigid(ps_u, ref_u, mu)
    if not mu.covers(len(ps_u), len(ref_u)):
        raise InvalidCorrespondenceError("coverage constraint violated at output")
    return MatchResult(
        correspondence=mu,
        transforms=(transform,),
        residual=trace[-1],
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
        sets=(ps_u, ref_u),
    )


def _pairs_matrix(pairs: np.ndarray, m: int, m_target: int) -> np.ndarray:
    mu = np.zeros((m, m_target))
    mu[pairs[:, 0], pairs[:, 1]] = 1.0
    return mu


def _one_to_one_update(ps_u: PointSet, ref_u: PointSet, pairs: np.ndarray) -> np.ndarray:
    t = estimate_rigid(ps_u, ref_u, Correspondence(pairs))
    return _nn_with_repair(t.transform(ps_u.points), ref_u.points)


_STALL_LIMIT = 3


def _alternate(d_src, d_dst, pairs, obj0, update, max_iter, tol):
    """Alternate correspondence/transform updates, tracking the best objective.

    The trace records the running minimum, which is nonincreasing by
    construction.  The loop stops at a correspondence fixed point or after
    a few consecutive non-improving sweeps; only the iteration cap exits
    with converged=False.
    """
    best_pairs, best_obj = pairs, obj0
    trace = [obj0]
    converged = False
    iterations = 0
    current = pairs
    stalled = 0
    for iterations in range(1, max_iter + 1):
        new_pairs = update(current)
        obj = _dd_residual(d_src, d_dst, _pairs_matrix(new_pairs, len(d_src), len(d_dst)))
        stalled = 0 if obj < best_obj - tol else stalled + 1
        if obj < best_obj:
            best_pairs, best_obj = new_pairs, obj
        trace.append(best_obj)
        if new_pairs.shape == current.shape and np.array_equal(new_pairs, current):
            converged = True
            break
        if stalled >= _STALL_LIMIT:
            converged = True
            break
        current = new_pairs
    return best_pairs, trace, iterations, converged


def _principal_angle(xy: np.ndarray) -> float:
    centered = xy - xy.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, -1]
    return float(np.arctan2(major[1], major[0]))


def _half_split(z_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the aggregate by its minor axis (sign of the major-axis projection)."""
    centered = z_xy - z_xy.mean(axis=0)
    cov = centered.T @ centered
    _, evecs = np.linalg.eigh(cov)
    proj = centered @ evecs[:, -1]
    low = z_xy[proj <= 0.0]
    high = z_xy[proj > 0.0]
    if len(low) < 3 or len(high) < 3:
        mid = len(z_xy) // 2
        order = np.argsort(proj, kind="stable")
        low, high = z_xy[order[:mid]], z_xy[order[mid:]]
    return low, high


_GMM_RESTARTS = (0, 1, 2)
_GMM_MAX_ITER = 60
_GMM_SAMPLE = 3000
_REGION_OVERLAP_POSTERIOR = 0.35
_REGION_BAND = 2.0
_REMATCH_ROUNDS = 2
_SCORE_CAP = 6.0
_TWO_BODY_ITERS = 40
_TWO_BODY_BAND = 1.0
_BOWTIE_HALF_WIDTH = 0.25 * np.pi


def _gmm2_responsibilities(xy: np.ndarray) -> np.ndarray:
    """Two-component full-covariance Gaussian mixture posteriors via EM.

    A filled convex lobe is close enough to Gaussian for decomposition
    purposes, and for crossed elongated primaries the two components lock
    onto the two bars.  Restarts are seeded deterministically with random
    straight-line splits; the best-likelihood run wins.
    """
    n = len(xy)
    best_ll, best_resp = -np.inf, None
    for seed in _GMM_RESTARTS:
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0.0, np.pi)
        proj = xy @ np.array([np.cos(theta), np.sin(theta)])
        resp = np.empty((n, 2))
        resp[:, 0] = (proj <= np.median(proj)).astype(float)
        resp[:, 1] = 1.0 - resp[:, 0]
        ll_old = -np.inf
        ll = -np.inf
        for _ in range(_GMM_MAX_ITER):
            weights = resp.sum(axis=0) + 1e-9
            logdens = np.empty((n, 2))
            degenerate = False
            for k in range(2):
                mean = (resp[:, k] @ xy) / weights[k]
                dxy = xy - mean
                cov = (resp[:, k][:, None] * dxy).T @ dxy / weights[k] + 1e-6 * np.eye(2)
                det = float(np.linalg.det(cov))
                if det <= 0:
                    degenerate = True
                    break
                inv = np.linalg.inv(cov)
                q = np.einsum("ij,jk,ik->i", dxy, inv, dxy)
                logdens[:, k] = -0.5 * q - 0.5 * np.log(det) + np.log(weights[k] / n)
            if degenerate:
                break
            peak = logdens.max(axis=1)
            lse = peak + np.log(np.exp(logdens - peak[:, None]).sum(axis=1))
            resp = np.exp(logdens - lse[:, None])
            ll = float(lse.sum())
            if ll - ll_old < 1e-6 * n:
                break
            ll_old = ll
        if ll > best_ll:
            best_ll, best_resp = ll, resp
    return best_resp


def _bipartitions(z_xy: np.ndarray):
    """Candidate decompositions of the aggregate into two (overlapping) regions."""
    if len(z_xy) > _GMM_SAMPLE:
        rng = np.random.default_rng(1234)
        z_xy = z_xy[rng.choice(len(z_xy), size=_GMM_SAMPLE, replace=False)]
    out = []
    resp = _gmm2_responsibilities(z_xy)
    if resp is not None:
        a = z_xy[resp[:, 0] >= _REGION_OVERLAP_POSTERIOR]
        b = z_xy[resp[:, 1] >= _REGION_OVERLAP_POSTERIOR]
        if len(a) >= 10 and len(b) >= 10:
            out.append((a, b))
    if not out:
        out.append(_half_split(z_xy))
    return out


def _bar_orientations(z_xy: np.ndarray, bins: int = 24) -> tuple[float, float]:
    """Two dominant axial directions of the aggregate about its centroid.

    A radius-weighted angular histogram (mod pi) picks up the bars of a
    crossed-primaries aggregate; for single-axis aggregates the second peak
    degenerates to the perpendicular.
    """
    centered = z_xy - z_xy.mean(axis=0)
    radius = np.hypot(centered[:, 0], centered[:, 1])
    ang = np.mod(np.arctan2(centered[:, 1], centered[:, 0]), np.pi)
    idx = np.minimum((ang / np.pi * bins).astype(int), bins - 1)
    hist = np.bincount(idx, weights=radius**2, minlength=bins)
    kernel = np.array([0.25, 0.5, 1.0, 0.5, 0.25])
    smooth = np.convolve(np.concatenate([hist[-2:], hist, hist[:2]]), kernel, "same")[2:-2]
    first = int(np.argmax(smooth))
    gap = bins // 4
    masked = smooth.copy()
    for off in range(-gap + 1, gap):
        masked[(first + off) % bins] = -np.inf
    second = int(np.argmax(masked))
    to_angle = lambda b: (b + 0.5) * np.pi / bins  # noqa: E731
    return to_angle(first), to_angle(second)


def _bowtie_region(z_xy: np.ndarray, alpha: float) -> np.ndarray:
    """Aggregate points within an axial sector around direction alpha."""
    centered = z_xy - z_xy.mean(axis=0)
    ang = np.arctan2(centered[:, 1], centered[:, 0])
    dist = np.abs(np.mod(ang - alpha + 0.5 * np.pi, np.pi) - 0.5 * np.pi)
    return z_xy[dist <= _BOWTIE_HALF_WIDTH]


def _two_body_icp(x_u: PointSet, y_u: PointSet, z_u: PointSet, tree, t_x, t_y):
    """Joint bidirectional ICP of both primaries against the aggregate.

    Each sweep matches every primary point forward into the full-resolution
    aggregate and every capped aggregate point backward into the nearer
    posed primary (points essentially equidistant to both contribute to
    both, which keeps the shared overlap from dragging either pose).  The
    best pose pair under the pixel-scale joint score is returned.
    """
    data = np.asarray(tree.data)
    best = (_pose_pair_score(t_x, t_y, x_u, y_u, z_u, tree), t_x, t_y)
    stall = 0
    for _ in range(_TWO_BODY_ITERS):
        moved_x = t_x.transform(x_u.points)
        moved_y = t_y.transform(y_u.points)
        d2zx = _sq_dists(z_u.points, moved_x)
        d2zy = _sq_dists(z_u.points, moved_y)
        min_zx = np.sqrt(d2zx.min(axis=1))
        min_zy = np.sqrt(d2zy.min(axis=1))
        side_x = min_zx <= min_zy + _TWO_BODY_BAND
        side_y = min_zy <= min_zx + _TWO_BODY_BAND
        _, jx = tree.query(moved_x)
        _, jy = tree.query(moved_y)
        back_x = np.argmin(d2zx[side_x], axis=1)
        back_y = np.argmin(d2zy[side_y], axis=1)
        t_x = _estimate_rigid_xy(
            np.vstack([x_u.points, x_u.points[back_x]]),
            np.vstack([data[jx], z_u.points[side_x]]),
        )
        t_y = _estimate_rigid_xy(
            np.vstack([y_u.points, y_u.points[back_y]]),
            np.vstack([data[jy], z_u.points[side_y]]),
        )
        score = _pose_pair_score(t_x, t_y, x_u, y_u, z_u, tree)
        if score < best[0] - 1e-9:
            best = (score, t_x, t_y)
            stall = 0
        else:
            stall += 1
            if stall >= 5:
                break
    return best


def _estimate_rigid_xy(src_xy: np.ndarray, dst_xy: np.ndarray) -> RigidTransform:
    src_mean = src_xy.mean(axis=0)
    dst_mean = dst_xy.mean(axis=0)
    u = src_xy - src_mean
    v = dst_xy - dst_mean
    dot = float(np.einsum("ij,ij->", u, v))
    cross = float(np.einsum("i,i->", u[:, 0], v[:, 1]) - np.einsum("i,i->", u[:, 1], v[:, 0]))
    theta = 0.0 if dot == 0.0 and cross == 0.0 else float(np.arctan2(cross, dot))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return RigidTransform(src_mean - rot.T @ dst_mean, theta)


_FULLRES_BACK_SAMPLE = 3000
_FULLRES_PROBE = 2500
_FULLRES_ITERS = 12
_SETTLE_TOP = 3
_REMATCH_TOP = 2
_CONTAINMENT_TAU = 0.75
_CONTAINMENT_ITERS = 20
_CONTAINMENT_ANCHOR_WEIGHT = 0.05


def _stride_sample(xy: np.ndarray, budget: int) -> np.ndarray:
    if len(xy) <= budget:
        return xy
    return xy[:: int(np.ceil(len(xy) / budget))]


def _estimate_rigid_weighted(src_xy, dst_xy, w) -> RigidTransform:
    wsum = float(np.sum(w))
    src_mean = (w @ src_xy) / wsum
    dst_mean = (w @ dst_xy) / wsum
    u = src_xy - src_mean
    v = dst_xy - dst_mean
    dot = float(np.einsum("i,ij,ij->", w, u, v))
    cross = float(np.einsum("i,i,i->", w, u[:, 0], v[:, 1]) - np.einsum("i,i,i->", w, u[:, 1], v[:, 0]))
    theta = 0.0 if dot == 0.0 and cross == 0.0 else float(np.arctan2(cross, dot))
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return RigidTransform(src_mean - rot.T @ dst_mean, theta)


def _hinge(dist: np.ndarray) -> float:
    return float(np.sum(np.maximum(dist - _CONTAINMENT_TAU, 0.0) ** 2))


def _containment_polish(x_xy, y_xy, tree, t_x, t_y):
    """Drive both poses toward strict containment in the aggregate raster.

    Digitization never displaces a point by more than ~0.71 px, so the true
    decomposition has no point farther than 0.75 px from an aggregate pixel;
    wrong decompositions keep irreducible violation strips.  Violating
    points get full weight in the rigid update, contained points act as a
    light anchor.  Returns the polished poses and the final hinge value
    (zero exactly at a containment-feasible pose).
    """
    data = np.asarray(tree.data)
    dx, jx = tree.query(t_x.transform(x_xy))
    dy, jy = tree.query(t_y.transform(y_xy))
    best = (_hinge(dx) + _hinge(dy), t_x, t_y)
    stall = 0
    for _ in range(_CONTAINMENT_ITERS):
        if np.all(dx <= _CONTAINMENT_TAU) and np.all(dy <= _CONTAINMENT_TAU):
            break
        w_x = np.where(dx > _CONTAINMENT_TAU, 1.0, _CONTAINMENT_ANCHOR_WEIGHT)
        w_y = np.where(dy > _CONTAINMENT_TAU, 1.0, _CONTAINMENT_ANCHOR_WEIGHT)
        t_x = _estimate_rigid_weighted(x_xy, data[jx], w_x)
        t_y = _estimate_rigid_weighted(y_xy, data[jy], w_y)
        dx, jx = tree.query(t_x.transform(x_xy))
        dy, jy = tree.query(t_y.transform(y_xy))
        hinge = _hinge(dx) + _hinge(dy)
        if hinge < best[0] - 1e-12:
            best = (hinge, t_x, t_y)
            stall = 0
        else:
            stall += 1
            if stall >= 4:
                break
        if hinge == 0.0:
            break
    return best


def _score_fullres(t_x, t_y, x_xy: np.ndarray, y_xy: np.ndarray, z_ref: np.ndarray, tree) -> float:
    """Joint fit at full raster resolution; separates near-tied decompositions.

    Subsampled scores are dominated by sample spacing; against the full
    rasters the true decomposition sits at digitization level while swapped
    or subtly rotated ones pay on boundary pixels.
    """
    from scipy.spatial import cKDTree

    moved_x = t_x.transform(x_xy)
    moved_y = t_y.transform(y_xy)
    dx, _ = tree.query(moved_x)
    dy, _ = tree.query(moved_y)
    fwd = float(np.mean(np.minimum(dx, _SCORE_CAP) ** 2)) + float(
        np.mean(np.minimum(dy, _SCORE_CAP) ** 2)
    )
    db, _ = cKDTree(np.vstack([moved_x, moved_y])).query(z_ref)
    return fwd + float(np.mean(np.minimum(db, _SCORE_CAP) ** 2))


def _two_body_icp_fullres(x_xy, y_xy, z_ref, tree, t_x, t_y):
    """A few joint ICP sweeps at raster resolution to squeeze out the
    correspondence noise of the capped point sets.

    Iterations are tracked by the cheap forward fit; the returned score is
    the full joint score of the best iterate.
    """
    from scipy.spatial import cKDTree

    data = np.asarray(tree.data)

    def forward(t_a, t_b):
        da, _ = tree.query(t_a.transform(x_xy))
        db, _ = tree.query(t_b.transform(y_xy))
        return float(np.mean(np.minimum(da, _SCORE_CAP) ** 2)) + float(
            np.mean(np.minimum(db, _SCORE_CAP) ** 2)
        )

    best = (forward(t_x, t_y), t_x, t_y)
    for _ in range(_FULLRES_ITERS):
        moved_x = t_x.transform(x_xy)
        moved_y = t_y.transform(y_xy)
        dzx, jzx = cKDTree(moved_x).query(z_ref)
        dzy, jzy = cKDTree(moved_y).query(z_ref)
        side_x = dzx <= dzy + _TWO_BODY_BAND
        side_y = dzy <= dzx + _TWO_BODY_BAND
        _, jx = tree.query(moved_x)
        _, jy = tree.query(moved_y)
        t_x = _estimate_rigid_xy(
            np.vstack([x_xy, x_xy[jzx[side_x]]]),
            np.vstack([data[jx], z_ref[side_x]]),
        )
        t_y = _estimate_rigid_xy(
            np.vstack([y_xy, y_xy[jzy[side_y]]]),
            np.vstack([data[jy], z_ref[side_y]]),
        )
        score = forward(t_x, t_y)
        if score < best[0] - 1e-9:
            best = (score, t_x, t_y)
        else:
            break
    return (_score_fullres(best[1], best[2], x_xy, y_xy, z_ref, tree), best[1], best[2])


def _region_points(xy: np.ndarray, budget: int) -> PointSet:
    # even coverage at low cost: farthest-point pass over a random thinning
    if len(xy) > 3 * budget:
        rng = np.random.default_rng(1729)
        xy = xy[rng.choice(len(xy), size=3 * budget, replace=False)]
    return subsample(PointSet(xy), budget)


def _embedding_pose(src_u: PointSet, region_xy: np.ndarray, max_points: int):
    """Pose a primary onto an aggregate region with the shape-level matcher."""
    if len(region_xy) < 5:
        return None
    try:
        region = _region_points(region_xy, max_points)
        result = match_one_to_one(src_u, region, max_points=max_points)
    except (DegenerateShapeError, InvalidCorrespondenceError):
        return None
    return result.transform


def _proximity_regions(z_xy: np.ndarray, moved_x: np.ndarray, moved_y: np.ndarray):
    """Split the aggregate by the nearer posed primary, sharing a border band."""
    from scipy.spatial import cKDTree

    dx, _ = cKDTree(moved_x).query(z_xy)
    dy, _ = cKDTree(moved_y).query(z_xy)
    reg_x = z_xy[dx <= dy + _REGION_BAND]
    reg_y = z_xy[dy <= dx + _REGION_BAND]
    return reg_x, reg_y


def _pose_pair_score(t_x, t_y, x_u: PointSet, y_u: PointSet, z_u: PointSet, tree) -> float:
    """Pixel-scale joint fit: capped forward residuals plus aggregate coverage.

    The capped forward terms separate the true decomposition from a swapped
    or piled-up one (only the true pose fits at digitization level), and the
    uncapped coverage term vetoes configurations that leave a lobe
    unexplained.
    """
    moved_x = t_x.transform(x_u.points)
    moved_y = t_y.transform(y_u.points)
    dx, _ = tree.query(moved_x)
    dy, _ = tree.query(moved_y)
    fwd = float(np.mean(np.minimum(dx, _SCORE_CAP) ** 2)) + float(
        np.mean(np.minimum(dy, _SCORE_CAP) ** 2)
    )
    back = float(np.mean(np.min(_sq_dists(z_u.points, np.vstack([moved_x, moved_y])), axis=1)))
    return fwd + back


def match_two_to_one(
    x: PointSet,
    y: PointSet,
    z: PointSet,
    *,
    max_points: int = DEFAULT_MAX_POINTS,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> MatchResult:
    """Decompose the aggregate: correspondences and transforms for both primaries.

    Seeding generates candidate pose pairs from two families: a
    two-component Gaussian mixture bipartition of the aggregate with poses
    from the shape-level matcher (separated or gently overlapping lobes),
    and axial "bowtie" sectors at the two dominant bar directions with
    moment-overlay poses (heavily crossed primaries, where the assignment
    of primaries to bars is ambiguous and both are offered).  Every
    candidate pair is polished by joint bidirectional ICP, the best pair is
    further refined by proximity-region rematching, and the winner under
    the pixel-scale joint fit initializes a single alternating run over the
    capped sets, whose correspondence and closed-form transforms are
    returned.
    """
    from scipy.spatial import cKDTree

    x_u = subsample(x, max_points)
    y_u = subsample(y, max_points)
    z_u = subsample(z, max_points)
    for s in (x_u, y_u, z_u):
        s.require_planar_rank()
    d_x = _pairwise_distances(x_u.points)
    d_y = _pairwise_distances(y_u.points)
    d_z = _pairwise_distances(z_u.points)

    tree = cKDTree(z.points)
    pool = []
    for reg_a, reg_b in _bipartitions(z.points):
        pose_ax = _embedding_pose(x_u, reg_a, max_points)
        pose_bx = _embedding_pose(x_u, reg_b, max_points)
        pose_ay = _embedding_pose(y_u, reg_a, max_points)
        pose_by = _embedding_pose(y_u, reg_b, max_points)
        if pose_ax is not None and pose_by is not None:
            pool.append((pose_ax, pose_by))
        if pose_bx is not None and pose_ay is not None:
            pool.append((pose_bx, pose_ay))
    alpha_1, alpha_2 = _bar_orientations(z.points)
    bow_1, bow_2 = _bowtie_region(z.points, alpha_1), _bowtie_region(z.points, alpha_2)
    if len(bow_1) >= 3 and len(bow_2) >= 3:
        pool.append((_centroid_overlay(x_u, bow_1), _centroid_overlay(y_u, bow_2)))
        pool.append((_centroid_overlay(x_u, bow_2), _centroid_overlay(y_u, bow_1)))
    if not pool:
        lo, hi = _half_split(z.points)
        pool.append((_centroid_overlay(x_u, lo), _centroid_overlay(y_u, hi)))

    x_probe = _stride_sample(x.points, _FULLRES_PROBE)
    y_probe = _stride_sample(y.points, _FULLRES_PROBE)
    z_ref = z.points
    if len(z_ref) > _FULLRES_BACK_SAMPLE:
        rng = np.random.default_rng(77)
        z_ref = z_ref[rng.choice(len(z_ref), size=_FULLRES_BACK_SAMPLE, replace=False)]

    # 1. cheap joint polish of every opener, 2. converge the best few at raster
    # resolution, 3. rematch each of those through its induced regions (the
    # shape-level matcher closes the last mile where point-to-pixel pulls
    # vanish inside the union), 4. pick the winner by settled raster score.
    coarse = sorted(
        (_two_body_icp(x_u, y_u, z_u, tree, t_x1, t_y1) for t_x1, t_y1 in pool),
        key=lambda item: item[0],
    )
    settled = sorted(
        (
            _two_body_icp_fullres(x_probe, y_probe, z_ref, tree, t_x1, t_y1)
            for _, t_x1, t_y1 in coarse[:_SETTLE_TOP]
        ),
        key=lambda item: item[0],
    )
    final_pool = list(settled)
    for _, t_x1, t_y1 in settled[:_REMATCH_TOP]:
        reg_x, reg_y = _proximity_regions(
            z.points, t_x1.transform(x_u.points), t_y1.transform(y_u.points)
        )
        t_x2 = _embedding_pose(x_u, reg_x, max_points) or t_x1
        t_y2 = _embedding_pose(y_u, reg_y, max_points) or t_y1
        final_pool.append(_two_body_icp_fullres(x_probe, y_probe, z_ref, tree, t_x2, t_y2))
    final_pool.sort(key=lambda item: item[0])
    # containment contest: the true decomposition can reach hinge zero, any
    # swapped or mis-posed one keeps irreducible violations
    contest = [
        _containment_polish(x_probe, y_probe, tree, t_x1, t_y1)
        for _, t_x1, t_y1 in final_pool[:2]
    ]
    contest = [
        (_hinge(tree.query(t_x1.transform(x.points))[0]) + _hinge(tree.query(t_y1.transform(y.points))[0]), t_x1, t_y1)
        for _, t_x1, t_y1 in contest
    ]
    contest.sort(key=lambda item: item[0])
    _, t_x0, t_y0 = contest[0]
    pairs_x = _forward_nn(t_x0.transform(x_u.points), z_u.points)
    pairs_y = _forward_nn(t_y0.transform(y_u.points), z_u.points)
    state0 = _merge_pair_state(pairs_x, pairs_y, x_u, y_u, z_u, repair=True)
    obj0 = _pair_objective(d_x, d_y, d_z, state0)
    state, trace, iterations, converged = _alternate_pair(
        d_x, d_y, d_z, x_u, y_u, z_u, state0, obj0, max_iter, tol
    )
    pc = PairCorrespondence(Correspondence(state[0]), Correspondence(state[1]))
    if not pc.covers(len(x_u), len(y_u), len(z_u)):
        raise InvalidCorrespondenceError("aggregate coverage violated at output")
    t_x, t_y = estimate_pair_rigid(x_u, y_u, z_u, pc)
    return MatchResult(
        correspondence=pc,
        transforms=(t_x, t_y),
        residual=trace[-1],
        iterations=iterations,
        converged=converged,
        trace=tuple(trace),
        sets=(x_u, y_u, z_u),
    )


def _centroid_overlay(src_u: PointSet, region_xy: np.ndarray) -> RigidTransform:
    """Last-resort pose: align centroid and principal axis onto a region."""
    theta = _principal_angle(region_xy) - _principal_angle(src_u.points)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return RigidTransform(src_u.points.mean(axis=0) - rot.T @ region_xy.mean(axis=0), theta)


def _merge_pair_state(pairs_x, pairs_y, x_u, y_u, z_u, repair: bool):
    """Repair aggregate coverage: uncovered z points take their nearest primary point."""
    if not repair:
        return pairs_x, pairs_y
    covered = np.zeros(len(z_u), dtype=bool)
    covered[pairs_x[:, 1]] = True
    covered[pairs_y[:, 1]] = True
    missing = np.nonzero(~covered)[0]
    if len(missing) == 0:
        return pairs_x, pairs_y
    t_x = estimate_rigid(x_u, z_u, Correspondence(pairs_x))
    t_y = estimate_rigid(y_u, z_u, Correspondence(pairs_y))
    moved_x = t_x.transform(x_u.points)
    moved_y = t_y.transform(y_u.points)
    d2x = _sq_dists(moved_x, z_u.points[missing])
    d2y = _sq_dists(moved_y, z_u.points[missing])
    ix = np.argmin(d2x, axis=0)
    iy = np.argmin(d2y, axis=0)
    from_x = d2x[ix, np.arange(len(missing))] <= d2y[iy, np.arange(len(missing))]
    add_x = np.column_stack([ix[from_x], missing[from_x]])
    add_y = np.column_stack([iy[~from_x], missing[~from_x]])
    if len(add_x):
        pairs_x = np.vstack([pairs_x, add_x])
    if len(add_y):
        pairs_y = np.vstack([pairs_y, add_y])
    return pairs_x, pairs_y


def _pair_objective(d_x, d_y, d_z, state) -> float:
    pairs_x, pairs_y = state
    return _dd_residual(d_x, d_z, _pairs_matrix(pairs_x, len(d_x), len(d_z))) + _dd_residual(
        d_y, d_z, _pairs_matrix(pairs_y, len(d_y), len(d_z))
    )


def _alternate_pair(d_x, d_y, d_z, x_u, y_u, z_u, state0, obj0, max_iter, tol):
    best_state, best_obj = state0, obj0
    trace = [obj0]
    converged = False
    iterations = 0
    current = state0
    stalled = 0
    for iterations in range(1, max_iter + 1):
        pc = PairCorrespondence(Correspondence(current[0]), Correspondence(current[1]))
        t_x, t_y = estimate_pair_rigid(x_u, y_u, z_u, pc)
        pairs_x = _forward_nn(t_x.transform(x_u.points), z_u.points)
        pairs_y = _forward_nn(t_y.transform(y_u.points), z_u.points)
        new_state = _merge_pair_state(pairs_x, pairs_y, x_u, y_u, z_u, repair=True)
        obj = _pair_objective(d_x, d_y, d_z, new_state)
        stalled = 0 if obj < best_obj - tol else stalled + 1
        if obj < best_obj:
            best_state, best_obj = new_state, obj
        trace.append(best_obj)
        if _same_state(new_state, current):
            converged = True
            break
        if stalled >= _STALL_LIMIT:
            converged = True
            break
        current = new_state
    return best_state, trace, iterations, converged


def _forward_nn(src_xy: np.ndarray, dst_xy: np.ndarray) -> np.ndarray:
    j = np.argmin(_sq_dists(src_xy, dst_xy), axis=1)
    return np.column_stack([np.arange(len(src_xy)), j])


def _same_state(a, b) -> bool:
    return (
        a[0].shape == b[0].shape
        and a[1].shape == b[1].shape
        and np.array_equal(a[0], b[0])
        and np.array_equal(a[1], b[1])
    )
