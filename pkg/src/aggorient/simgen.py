"""Synthetic ellipse-aggregation datasets with known ground truth.

The generator draws log axis lengths from normals, rasterizes a
noisy-boundary ellipse on the integer lattice, poses it with a random rigid
transform, and builds the aggregate as the rasterized union of the two
transformed primaries.  Every intermediate image is digitized, which is what
makes the estimation problem nontrivial.  Angular inputs follow the stated
construction verbatim: the first primary's aggregate pose uses
pi - angle(c_phi + c_T) while the second uses -angle(c_phi + c_T).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import NoOverlapError, UndefinedOrientationError
from .geometry import GridSpec, PointSet, RigidTransform, invert_rigid, round_half_up
from .orientation import AggregationRecord, normalize_angle, orientation_angle
from .pointio import read_points_csv, write_points_csv

DEFAULT_NU_B = float(np.log(5.0))


@dataclass(frozen=True)
class SimParams:
    """Inputs of the generative procedure (log-length means, variances, grid)."""

    nu_a_x: float
    nu_b_x: float
    nu_a_y: float
    nu_b_y: float
    sigma2: float = 0.03**2
    sigma_e2: float = 0.1**2
    grid: GridSpec = field(default_factory=lambda: GridSpec(400, 400))
    pixel_scale: float = 10.0
    noise_bins: int = 64
    n_cases: int = 50
    n_replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 <= 0 or self.sigma_e2 <= 0:
            raise ValueError("variances must be positive")
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")
        if self.n_cases < 1 or self.n_replicates < 1:
            raise ValueError("need at least one case and one replicate")

    @classmethod
    def from_aspect_ratios(cls, r_x: float, r_y: float, nu_b: float = DEFAULT_NU_B, **kwargs):
        """Parameterize by mean aspect ratios: exp(nu_a) = r * exp(nu_b)."""
        if r_x < 1.0 or r_y < 1.0:
            raise ValueError("aspect ratios must be >= 1")
        return cls(
            nu_a_x=float(np.log(r_x) + nu_b),
            nu_b_x=nu_b,
            nu_a_y=float(np.log(r_y) + nu_b),
            nu_b_y=nu_b,
            **kwargs,
        )

    @property
    def r_x(self) -> float:
        return float(np.exp(self.nu_a_x - self.nu_b_x))

    @property
    def r_y(self) -> float:
        return float(np.exp(self.nu_a_y - self.nu_b_y))

    def to_json(self) -> dict:
        return {
            "nu_a_x": self.nu_a_x,
            "nu_b_x": self.nu_b_x,
            "nu_a_y": self.nu_a_y,
            "nu_b_y": self.nu_b_y,
            "sigma2": self.sigma2,
            "sigma_e2": self.sigma_e2,
            "grid": {"height": self.grid.height, "width": self.grid.width},
            "pixel_scale": self.pixel_scale,
            "noise_bins": self.noise_bins,
            "n_cases": self.n_cases,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimParams":
        obj = dict(obj)
        grid = obj.pop("grid")
        return cls(grid=GridSpec(grid["height"], grid["width"]), **obj)


@dataclass(frozen=True)
class SimTruth:
    """Generating transforms and the true orientation angles of one case."""

    t_x: RigidTransform
    t_y: RigidTransform
    phi_x: RigidTransform
    phi_y: RigidTransform
    theta_x: float
    theta_y: float
    center: np.ndarray
    axes: dict

    def to_json(self) -> dict:
        return {
            "t_x": self.t_x.to_json(),
            "t_y": self.t_y.to_json(),
            "phi_x": self.phi_x.to_json(),
            "phi_y": self.phi_y.to_json(),
            "theta_x": self.theta_x,
            "theta_y": self.theta_y,
            "center": np.asarray(self.center, dtype=float).tolist(),
            "axes": self.axes,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SimTruth":
        return cls(
            t_x=RigidTransform.from_json(obj["t_x"]),
            t_y=RigidTransform.from_json(obj["t_y"]),
            phi_x=RigidTransform.from_json(obj["phi_x"]),
            phi_y=RigidTransform.from_json(obj["phi_y"]),
            theta_x=obj["theta_x"],
            theta_y=obj["theta_y"],
            center=np.asarray(obj["center"], dtype=float),
            axes=obj["axes"],
        )


@dataclass(frozen=True, eq=False)
class SimCase:
    case_id: str
    x: PointSet
    y: PointSet
    z: PointSet
    truth: SimTruth


def noisy_ellipse_raster(
    a: float, b: float, rng: np.random.Generator, sigma_e2: float, bins: int = 64
) -> PointSet:
    """Integer-lattice raster of x^2/a^2 + y^2/b^2 <= 1 + eps, centered at origin.

    The boundary noise eps is one normal draw per angular bin of |y/x|,
    piecewise constant over the bin.
    """
    eps = rng.normal(0.0, np.sqrt(sigma_e2), bins)
    bound = 1.0 + max(float(np.max(eps)), 0.0)
    rx = int(np.ceil(a * np.sqrt(bound))) + 1
    ry = int(np.ceil(b * np.sqrt(bound))) + 1
    gx, gy = np.meshgrid(np.arange(-rx, rx + 1), np.arange(-ry, ry + 1), indexing="ij")
    gx = gx.ravel()
    gy = gy.ravel()
    q = (gx / a) ** 2 + (gy / b) ** 2
    ang = np.arctan2(np.abs(gy), np.abs(gx))  # in [0, pi/2]
    idx = np.minimum((ang / (0.5 * np.pi) * bins).astype(int), bins - 1)
    keep = q <= 1.0 + eps[idx]
    return PointSet(np.column_stack([gx[keep], gy[keep]]).astype(float))


def _digitize(xy: np.ndarray) -> PointSet:
    return PointSet(round_half_up(xy))


def _angle(v: np.ndarray) -> float:
    return float(np.arctan2(v[1], v[0]))


def _intersection(a: PointSet, b: PointSet) -> np.ndarray:
    za = a.points[:, 0] + 1j * a.points[:, 1]
    zb = b.points[:, 0] + 1j * b.points[:, 1]
    common = np.intersect1d(za, zb)
    return np.column_stack([common.real, common.imag])


def _simulate_primary(params: SimParams, nu_a: float, nu_b: float, rng: np.random.Generator):
    sigma = float(np.sqrt(params.sigma2))
    a = params.pixel_scale * float(np.exp(rng.normal(nu_a, sigma)))
    b = params.pixel_scale * float(np.exp(rng.normal(nu_b, sigma)))
    raster = noisy_ellipse_raster(a, b, rng, params.sigma_e2, params.noise_bins)
    c = np.array(
        [rng.uniform(0.0, params.grid.width), rng.uniform(0.0, params.grid.height)]
    )
    theta = rng.uniform(0.0, 0.5 * np.pi)
    t = RigidTransform(c, theta)
    primary = _digitize(invert_rigid(t).transform(raster.points))
    return primary, t, (a, b)


def simulate_case(params: SimParams, rng: np.random.Generator, case_id: str = "case") -> SimCase:
    """Generate one aggregation observation together with its ground truth."""
    for _ in range(100):
        x, t_x, axes_x = _simulate_primary(params, params.nu_a_x, params.nu_b_x, rng)
        y, t_y, axes_y = _simulate_primary(params, params.nu_a_y, params.nu_b_y, rng)
        if len(x) < 3 or len(y) < 3:
            warnings.warn("degenerate primary raster; resampling", stacklevel=2)
            continue
        case = _attach_aggregate(params, x, t_x, axes_x, y, t_y, axes_y, rng, case_id)
        if case is not None:
            return case
    raise RuntimeError("could not generate a case with overlapping primaries")


def _attach_aggregate(params, x, t_x, axes_x, y, t_y, axes_y, rng, case_id):
    for _ in range(100):
        c_phi_x = x.points[rng.integers(len(x))]
        theta_phi_x = np.pi - _angle(c_phi_x + t_x.translation)
        phi_x = RigidTransform(c_phi_x, theta_phi_x)
        c_phi_y = y.points[rng.integers(len(y))]
        theta_phi_y = -_angle(c_phi_y + t_y.translation)
        phi_y = RigidTransform(c_phi_y, theta_phi_y)

        zx = _digitize(phi_x.transform(x.points))
        zy = _digitize(phi_y.transform(y.points))
        overlap = _intersection(zx, zy)
        if len(overlap) == 0:
            continue
        center = overlap.mean(axis=0)
        try:
            theta_x = orientation_angle(t_x, phi_x, center)
            theta_y = orientation_angle(t_y, phi_y, center)
        except UndefinedOrientationError:
            continue
        z = PointSet(np.vstack([zx.points, zy.points]))
        truth = SimTruth(
            t_x=t_x,
            t_y=t_y,
            phi_x=phi_x,
            phi_y=phi_y,
            theta_x=theta_x,
            theta_y=theta_y,
            center=center,
            axes={
                "a_x": axes_x[0],
                "b_x": axes_x[1],
                "a_y": axes_y[0],
                "b_y": axes_y[1],
            },
        )
        return SimCase(
            case_id=case_id,
            x=x.with_source_id(f"{case_id}_x"),
            y=y.with_source_id(f"{case_id}_y"),
            z=z.with_source_id(f"{case_id}_z"),
            truth=truth,
        )
    return None


def simulate_batch(params: SimParams) -> list[list[SimCase]]:
    """All replicates of the experiment; per-case RNG streams derive from the seed."""
    root = np.random.SeedSequence(params.seed)
    replicates = []
    for r, rep_seq in enumerate(root.spawn(params.n_replicates)):
        cases = []
        for c, case_seq in enumerate(rep_seq.spawn(params.n_cases)):
            rng = np.random.Generator(np.random.PCG64(case_seq))
            cases.append(simulate_case(params, rng, case_id=f"r{r:03d}_c{c:03d}"))
        replicates.append(cases)
    return replicates


@dataclass(frozen=True)
class EstimateErrors:
    """Per-parameter errors: squared differences for translations (in shape
    units, i.e. pixels divided by the pixel scale) and 1 - cos differences
    for angles after four-fold normalization of both operands."""

    c_t_x: float
    theta_t_x: float
    c_t_y: float
    theta_t_y: float
    c_phi_x: float
    theta_phi_x: float
    c_phi_y: float
    theta_phi_y: float
    theta_x: float
    theta_y: float

    def as_dict(self) -> dict:
        return {
            "c_t_x": self.c_t_x,
            "theta_t_x": self.theta_t_x,
            "c_t_y": self.c_t_y,
            "theta_t_y": self.theta_t_y,
            "c_phi_x": self.c_phi_x,
            "theta_phi_x": self.theta_phi_x,
            "c_phi_y": self.c_phi_y,
            "theta_phi_y": self.theta_phi_y,
            "theta_x": self.theta_x,
            "theta_y": self.theta_y,
        }


def _sq_diff(c_true: np.ndarray, c_est: np.ndarray, scale: float) -> float:
    d = (np.asarray(c_true, dtype=float) - np.asarray(c_est, dtype=float)) / scale
    return float(d @ d)


def _ang_diff(theta_true: float, theta_est: float) -> float:
    return float(1.0 - np.cos(normalize_angle(theta_true) - normalize_angle(theta_est)))


def evaluate_estimates(
    truth: SimTruth, est: AggregationRecord, *, pixel_scale: float = 1.0
) -> EstimateErrors:
    """Table-style error vector comparing an estimated record to the truth."""
    return EstimateErrors(
        c_t_x=_sq_diff(truth.t_x.translation, est.t_x.translation, pixel_scale),
        theta_t_x=_ang_diff(truth.t_x.angle, est.t_x.angle),
        c_t_y=_sq_diff(truth.t_y.translation, est.t_y.translation, pixel_scale),
        theta_t_y=_ang_diff(truth.t_y.angle, est.t_y.angle),
        c_phi_x=_sq_diff(truth.phi_x.translation, est.phi_x.translation, pixel_scale),
        theta_phi_x=_ang_diff(truth.phi_x.angle, est.phi_x.angle),
        c_phi_y=_sq_diff(truth.phi_y.translation, est.phi_y.translation, pixel_scale),
        theta_phi_y=_ang_diff(truth.phi_y.angle, est.phi_y.angle),
        theta_x=_ang_diff(truth.theta_x, est.theta_x),
        theta_y=_ang_diff(truth.theta_y, est.theta_y),
    )


def write_dataset(replicates: list[list[SimCase]], params: SimParams, outdir) -> Path:
    """Write per-case CSV point sets and truth.json plus a batch manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r, cases in enumerate(replicates):
        for case in cases:
            case_dir = outdir / case.case_id
            case_dir.mkdir(exist_ok=True)
            write_points_csv(case.x, case_dir / "x.csv")
            write_points_csv(case.y, case_dir / "y.csv")
            write_points_csv(case.z, case_dir / "z.csv")
            _write_json(case.truth.to_json(), case_dir / "truth.json")
            entries.append({"id": case.case_id, "replicate": r, "path": case.case_id})
    manifest = {"params": params.to_json(), "cases": entries}
    _write_json(manifest, outdir / "manifest.json")
    return outdir / "manifest.json"


def _write_json(obj, path: Path) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def read_dataset(dataset_dir) -> tuple[SimParams, list[SimCase]]:
    dataset_dir = Path(dataset_dir)
    manifest = json.loads((dataset_dir / "manifest.json").read_text())
    params = SimParams.from_json(manifest["params"])
    cases = []
    for entry in manifest["cases"]:
        case_dir = dataset_dir / entry["path"]
        truth = SimTruth.from_json(json.loads((case_dir / "truth.json").read_text()))
        cases.append(
            SimCase(
                case_id=entry["id"],
                x=read_points_csv(case_dir / "x.csv").with_source_id(f"{entry['id']}_x"),
                y=read_points_csv(case_dir / "y.csv").with_source_id(f"{entry['id']}_y"),
                z=read_points_csv(case_dir / "z.csv").with_source_id(f"{entry['id']}_z"),
                truth=truth,
            )
        )
    return params, cases
