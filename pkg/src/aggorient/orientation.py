"""Aggregation centers and the orientation angles of primaries in an aggregate.

The orientation of a primary is the polar angle of the aggregation center
pulled back into the primary's standard coordinate frame: first undo the
aggregate pose, then apply the alignment to the category reference.  For
shape categories symmetric about both principal axes, the angle is folded
into [0, pi/2].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoOverlapError, StageError, UndefinedOrientationError
from .geometry import PointSet, RigidTransform, invert_rigid
from .correspondence import (
    DEFAULT_MAX_POINTS,
    MatchResult,
    PairCorrespondence,
    match_one_to_one,
    match_two_to_one,
)
from .shapecat import aspect_ratio

LOW_ASPECT_THRESHOLD = 1.4


def aggregation_center(z: PointSet, pc: PairCorrespondence) -> np.ndarray:
    """Mass center of the aggregate points covered by both primaries."""
    both = np.zeros(len(z), dtype=bool)
    hit_x = np.zeros(len(z), dtype=bool)
    hit_x[pc.mu_x.target_indices] = True
    both[pc.mu_y.target_indices] = True
    both &= hit_x
    if not np.any(both):
        raise NoOverlapError("no aggregate point is covered by both primaries")
    return z.points[both].mean(axis=0)


def orientation_angle(t: RigidTransform, phi: RigidTransform, center) -> float:
    """Polar angle of the center mapped through phi^{-1} then t."""
    pulled = t.transform(invert_rigid(phi).transform(np.asarray(center, dtype=float)))
    norm = float(np.hypot(pulled[0], pulled[1]))
    if norm < 1e-6:
        raise UndefinedOrientationError("center maps onto the origin")
    return float(np.arctan2(pulled[1], pulled[0]))


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]; values already in range pass through exactly."""
    if -np.pi < theta <= np.pi:
        return float(theta)
    w = float(np.mod(theta + np.pi, 2.0 * np.pi) - np.pi)
    return np.pi if w == -np.pi else w


def normalize_angle(theta: float) -> float:
    """Fold a four-fold symmetric angle into [0, pi/2].

    Angles theta, -theta, pi - theta and -pi + theta all map to the same
    value; the input is wrapped to (-pi, pi] first.
    """
    a = abs(wrap_angle(theta))
    return a if a <= 0.5 * np.pi else np.pi - a


def normalize_angles(thetas) -> np.ndarray:
    arr = np.asarray(thetas, dtype=float)
    w = np.mod(arr + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    in_range = (arr > -np.pi) & (arr <= np.pi)
    a = np.abs(np.where(in_range, arr, w))
    return np.where(a <= 0.5 * np.pi, a, np.pi - a)


@dataclass(frozen=True, eq=False)
class AggregationRecord:
    """Everything estimated for one (X, Y, Z) aggregation observation."""

    x_id: str
    y_id: str
    category_x: str
    category_y: str
    phi_x: RigidTransform
    phi_y: RigidTransform
    t_x: RigidTransform
    t_y: RigidTransform
    center: np.ndarray
    theta_x: float
    theta_y: float
    theta_x_norm: float | None
    theta_y_norm: float | None
    aspect_x: float
    aspect_y: float
    warnings: tuple[str, ...] = field(default_factory=tuple)
    residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "x_id": self.x_id,
            "y_id": self.y_id,
            "category_x": self.category_x,
            "category_y": self.category_y,
            "phi_x": self.phi_x.to_json(),
            "phi_y": self.phi_y.to_json(),
            "t_x": self.t_x.to_json(),
            "t_y": self.t_y.to_json(),
            "center": np.asarray(self.center, dtype=float).tolist(),
            "theta_x": self.theta_x,
            "theta_y": self.theta_y,
            "theta_x_norm": self.theta_x_norm,
            "theta_y_norm": self.theta_y_norm,
            "aspect_x": self.aspect_x,
            "aspect_y": self.aspect_y,
            "warnings": list(self.warnings),
            "residuals": self.residuals,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AggregationRecord":
        return cls(
            x_id=obj["x_id"],
            y_id=obj["y_id"],
            category_x=obj["category_x"],
            category_y=obj["category_y"],
            phi_x=RigidTransform.from_json(obj["phi_x"]),
            phi_y=RigidTransform.from_json(obj["phi_y"]),
            t_x=RigidTransform.from_json(obj["t_x"]),
            t_y=RigidTransform.from_json(obj["t_y"]),
            center=np.asarray(obj["center"], dtype=float),
            theta_x=obj["theta_x"],
            theta_y=obj["theta_y"],
            theta_x_norm=obj["theta_x_norm"],
            theta_y_norm=obj["theta_y_norm"],
            aspect_x=obj["aspect_x"],
            aspect_y=obj["aspect_y"],
            warnings=tuple(obj.get("warnings", ())),
            residuals=obj.get("residuals", {}),
        )


def _stage(label: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - stage label is the contract
        raise StageError(label, exc) from exc


def analyze_aggregation(
    x: PointSet,
    y: PointSet,
    z: PointSet,
    ref_x: PointSet,
    ref_y: PointSet,
    *,
    category_x: str = "0",
    category_y: str = "0",
    symmetric_x: bool = True,
    symmetric_y: bool = True,
    x_id: str | None = None,
    y_id: str | None = None,
    max_points: int = DEFAULT_MAX_POINTS,
) -> AggregationRecord:
    """Full per-observation pipeline: alignments, decomposition, angles.

    The references must be MDS-normalized category references.  Angles are
    folded to [0, pi/2] only for categories flagged symmetric.  Primaries
    with aspect ratio below 1.4 get a warning flag: their orientation is
    unreliable and they are excluded from distribution fitting by default.
    """
    res_tx: MatchResult = _stage("align_x", match_one_to_one, x, ref_x, max_points=max_points)
    res_ty: MatchResult = _stage("align_y", match_one_to_one, y, ref_y, max_points=max_points)
    res_pair: MatchResult = _stage(
        "decompose_aggregate", match_two_to_one, x, y, z, max_points=max_points
    )
    z_used = res_pair.sets[2]
    center = _stage("aggregation_center", aggregation_center, z_used, res_pair.correspondence)
    phi_x, phi_y = res_pair.transforms
    theta_x = _stage("orientation_x", orientation_angle, res_tx.transform, phi_x, center)
    theta_y = _stage("orientation_y", orientation_angle, res_ty.transform, phi_y, center)

    asp_x = _stage("aspect_x", aspect_ratio, x)
    asp_y = _stage("aspect_y", aspect_ratio, y)
    warnings = []
    if asp_x < LOW_ASPECT_THRESHOLD:
        warnings.append("low_aspect_x")
    if asp_y < LOW_ASPECT_THRESHOLD:
        warnings.append("low_aspect_y")
    for name, res in (("align_x", res_tx), ("align_y", res_ty), ("decompose", res_pair)):
        if not res.converged:
            warnings.append(f"{name}_not_converged")

    return AggregationRecord(
        x_id=x_id or x.source_id or "x",
        y_id=y_id or y.source_id or "y",
        category_x=category_x,
        category_y=category_y,
        phi_x=phi_x,
        phi_y=phi_y,
        t_x=res_tx.transform,
        t_y=res_ty.transform,
        center=center,
        theta_x=theta_x,
        theta_y=theta_y,
        theta_x_norm=normalize_angle(theta_x) if symmetric_x else None,
        theta_y_norm=normalize_angle(theta_y) if symmetric_y else None,
        aspect_x=asp_x,
        aspect_y=asp_y,
        warnings=tuple(warnings),
        residuals={
            "t_x": res_tx.residual,
            "t_y": res_ty.residual,
            "aggregate": res_pair.residual,
        },
    )
