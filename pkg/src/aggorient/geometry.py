"""Planar point-set shapes, rigid motions, and distance-matrix embeddings.

Shapes are finite planar point sets; a rigid motion first shifts by the
translation vector and then rotates the result about the origin.  All
operations here are pure functions on immutable values, so they are safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShapeError, NonPlanarInputError, OutOfGridError

TWO_PI = 2.0 * np.pi


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=float, copy=True)
    if arr.size == 0:
        arr = arr.reshape(0, 2)
    elif arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (m, 2) coordinate array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class PointSet:
    """An ordered set of distinct 2-D coordinates.

    Exact duplicate coordinates are dropped on construction (first
    occurrence wins), and the stored array is frozen.
    """

    points: np.ndarray
    source_id: str | None = None

    def __post_init__(self):
        arr = _as_points(self.points)
        if len(arr):
            _, idx = np.unique(arr, axis=0, return_index=True)
            if len(idx) != len(arr):
                arr = arr[np.sort(idx)]
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def require_planar_rank(self) -> None:
        """Raise unless the set has >= 3 non-collinear points."""
        if len(self) < 3:
            raise DegenerateShapeError(f"need >= 3 points, got {len(self)}")
        centered = self.points - self.centroid
        svals = np.linalg.svd(centered, compute_uv=False)
        if svals[1] <= 1e-9 * max(svals[0], 1.0):
            raise DegenerateShapeError("points are (numerically) collinear")

    def with_source_id(self, source_id: str) -> "PointSet":
        return PointSet(self.points, source_id=source_id)


@dataclass(frozen=True)
class GridSpec:
    """Pixel grid covering x in [0, width] and y in [0, height]."""

    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("grid dimensions must be positive")

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return (
            (xy[:, 0] >= 0.0)
            & (xy[:, 0] <= self.width)
            & (xy[:, 1] >= 0.0)
            & (xy[:, 1] <= self.height)
        )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rigid motion x -> R(angle) @ (x - translation).

    The translation is applied first, then the rotation about the origin.
    Angles are stored normalized to [0, 2*pi).
    """

    translation: np.ndarray
    angle: float

    def __post_init__(self):
        c = np.array(self.translation, dtype=float, copy=True).reshape(2)
        if not np.all(np.isfinite(c)):
            raise ValueError("translation must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "translation", c)
        object.__setattr__(self, "angle", float(np.mod(self.angle, TWO_PI)))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.zeros(2), 0.0)

    def rotation_matrix(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def transform(self, xy: np.ndarray) -> np.ndarray:
        """Apply to an (m, 2) coordinate array (or a single point)."""
        xy = np.asarray(xy, dtype=float)
        single = xy.ndim == 1
        out = (np.atleast_2d(xy) - self.translation) @ self.rotation_matrix().T
        return out[0] if single else out

    def to_json(self) -> dict:
        return {"translation": self.translation.tolist(), "angle": self.angle}

    @classmethod
    def from_json(cls, obj: dict) -> "RigidTransform":
        return cls(np.asarray(obj["translation"], dtype=float), float(obj["angle"]))


def apply_rigid(t: RigidTransform, ps: PointSet) -> PointSet:
    """Image of a point set under a rigid motion; point order is preserved."""
    return PointSet(t.transform(ps.points), source_id=ps.source_id)


def invert_rigid(t: RigidTransform) -> RigidTransform:
    """Rigid motion undoing ``t``: y -> R(-angle) @ (y - (-R(angle) @ c))."""
    r = t.rotation_matrix()
    return RigidTransform(-(r @ t.translation), -t.angle)


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric Euclidean distance matrix with zero diagonal."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        if not np.allclose(v, v.T, atol=1e-9):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(v) != 0.0):
            raise ValueError("distance matrix must have zero diagonal")
        if np.any(v < 0.0):
            raise ValueError("distances must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)

    def max_triangle_violation(self) -> float:
        """Largest d(i,k) - d(i,j) - d(j,k) over all triples (<= 0 if metric)."""
        d = self.values
        # d[i, k] <= min_j (d[i, j] + d[j, k]) for a metric
        best = np.min(d[:, None, :] + d[None, :, :], axis=1)
        return float(np.max(d - best))


def distance_matrix(ps: PointSet) -> DistanceMatrix:
    """Pairwise Euclidean distances; invariant under rigid motion."""
    if len(ps) == 0:
        raise ValueError("point set is empty")
    d = _pairwise_distances(ps.points)
    return DistanceMatrix(d)


def _pairwise_distances(xy: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def mds_embed(d: DistanceMatrix, rank_tol: float = 1e-6) -> PointSet:
    """Classical MDS embedding of a planar Euclidean distance matrix.

    Double-centers the squared distances, eigendecomposes, and scales the two
    leading eigenvectors by the square roots of their eigenvalues.  The first
    output coordinate comes from the leading eigenvector, so the embedded
    shape has its major axis along the x-axis and is centered at the origin.

    Eigenvector signs are fixed deterministically: the x-axis by coordinate
    skewness (falling back to placing the most extreme point on the positive
    side), the y-axis so the point with the largest x-coordinate has
    nonnegative y (falling back to y-skewness).

    Raises NonPlanarInputError when the doubly-centered matrix has
    significant spectrum beyond rank two.
    """
    dv = d.values
    n = len(dv)
    if n == 1:
        return PointSet(np.zeros((1, 2)))
    b = dv**2
    b -= b.mean(axis=0)
    b -= b.mean(axis=1)[:, None]
    b *= -0.5
    evals, evecs = np.linalg.eigh(b)
    top = max(evals[-1], 0.0)
    if n > 2:
        residual = max(evals[-3], -evals[0], 0.0)
        if residual > rank_tol * max(top, 1e-12):
            raise NonPlanarInputError(
                f"doubly-centered spectrum has rank > 2 (residual {residual:.3e})"
            )
    lams = np.clip(evals[[-1, -2]], 0.0, None)
    coords = evecs[:, [-1, -2]] * np.sqrt(lams)
    return PointSet(_fix_embedding_signs(coords))


def _fix_embedding_signs(coords: np.ndarray) -> np.ndarray:
    coords = coords.copy()
    scale = max(float(np.max(np.abs(coords))), 1e-12)
    tol = 1e-9 * scale
    x, y = coords[:, 0], coords[:, 1]
    skew_x = float(np.sum(x**3))
    if abs(skew_x) > tol * scale**2:
        if skew_x < 0:
            coords[:, 0] = -coords[:, 0]
    elif abs(x.max()) < abs(x.min()) - tol:
        coords[:, 0] = -coords[:, 0]
    x, y = coords[:, 0], coords[:, 1]
    j = int(np.argmax(x))
    if abs(y[j]) > tol:
        if y[j] < 0:
            coords[:, 1] = -coords[:, 1]
    elif float(np.sum(y**3)) < -tol * scale**2:
        coords[:, 1] = -coords[:, 1]
    return coords


def subsample(ps: PointSet, n_max: int) -> PointSet:
    """Farthest-point subsample of at most ``n_max`` points.

    Seeded at the point nearest the centroid; deterministic given the input
    order (ties resolved by lowest index).  Returns the input unchanged when
    it is already small enough.
    """
    if n_max < 3:
        raise ValueError("n_max must be >= 3")
    pts = ps.points
    m = len(pts)
    if m <= n_max:
        return ps
    start = int(np.argmin(np.einsum("ij,ij->i", pts - ps.centroid, pts - ps.centroid)))
    chosen = np.empty(n_max, dtype=int)
    chosen[0] = start
    diff = pts - pts[start]
    mind2 = np.einsum("ij,ij->i", diff, diff)
    for k in range(1, n_max):
        nxt = int(np.argmax(mind2))
        chosen[k] = nxt
        diff = pts - pts[nxt]
        np.minimum(mind2, np.einsum("ij,ij->i", diff, diff), out=mind2)
    chosen.sort()
    return PointSet(pts[chosen], source_id=ps.source_id)


def round_half_up(xy: np.ndarray) -> np.ndarray:
    """Round both coordinates half-up (platform independent)."""
    return np.floor(np.asarray(xy, dtype=float) + 0.5)


def rasterize_union(a: PointSet, b: PointSet, grid: GridSpec | None) -> PointSet:
    """Union of the two sets rounded to the integer grid, duplicates removed.

    With a GridSpec, coordinates outside [0, width] x [0, height] raise
    OutOfGridError; pass ``grid=None`` to rasterize on the unbounded integer
    lattice (used by the synthetic-data generator whose aggregates straddle
    the origin).
    """
    merged = np.vstack([a.points, b.points])
    rounded = round_half_up(merged)
    if grid is not None:
        ok = grid.contains(rounded)
        if not np.all(ok):
            bad = merged[~ok][0]
            raise OutOfGridError(f"point {tuple(bad)} rounds outside the grid")
    return PointSet(rounded)
