"""Command-line interface: simulate, analyze, cluster, fit, test, pipeline.

Every stochastic command takes an explicit --seed (defaulted and echoed in
the output config), reports embed their resolved configuration, and primary
outputs are written atomically so reruns with identical flags are
byte-identical.

Exit codes: 0 success, 1 total failure, 2 partial (some cases failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dirstats, shapecat, simgen
from .errors import ShapeError, StageError
from .geometry import GridSpec
from .orientation import AggregationRecord, analyze_aggregation
from .pointio import write_points_csv

DEFAULT_NU_B = simgen.DEFAULT_NU_B


def _write_json(obj, path: Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def _write_lines(lines, path: Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines))
    tmp.replace(path)


def _config_dict(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _params_from_args(args) -> simgen.SimParams:
    return simgen.SimParams.from_aspect_ratios(
        args.rx,
        args.ry,
        nu_b=args.nu_b,
        sigma2=args.sigma**2,
        sigma_e2=args.sigma_e**2,
        grid=GridSpec(args.grid_size, args.grid_size),
        pixel_scale=args.pixel_scale,
        n_cases=args.cases,
        n_replicates=args.replicates,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    params = _params_from_args(args)
    replicates = simgen.simulate_batch(params)
    manifest = simgen.write_dataset(replicates, params, args.out)
    n = sum(len(r) for r in replicates)
    print(f"wrote {n} cases to {manifest.parent}")
    return 0


def _cluster_dataset_shapes(cases, args):
    """Cluster all primaries (on a sample for large datasets) and build references."""
    shapes, ids = [], []
    for case in cases:
        shapes.append(case.x)
        ids.append(f"{case.case_id}_x")
        shapes.append(case.y)
        ids.append(f"{case.case_id}_y")
    rng = np.random.default_rng(args.seed)
    if args.cluster_sample and len(shapes) > args.cluster_sample:
        chosen = sorted(rng.choice(len(shapes), size=args.cluster_sample, replace=False))
    else:
        chosen = list(range(len(shapes)))
    categories = shapecat.cluster_shapes(
        [shapes[i] for i in chosen],
        args.k_max,
        ids=[ids[i] for i in chosen],
        max_points=args.cluster_points,
        max_iter=args.cluster_iter,
    )
    # assign every shape to the nearest category reference
    assignment = {}
    for i, shape in enumerate(shapes):
        dists = [
            shapecat.pairwise_shape_distance(
                shape, cat.reference, max_points=args.cluster_points, max_iter=args.cluster_iter
            )
            for cat in categories
        ]
        assignment[ids[i]] = int(np.argmin(dists))
    return categories, assignment


def cmd_analyze(args) -> int:
    params, cases = simgen.read_dataset(args.dataset)
    if not cases:
        print("no cases in dataset", file=sys.stderr)
        return 1
    if args.group_by_role:
        categories, assignment = _role_categories(cases, args)
    else:
        categories, assignment = _cluster_dataset_shapes(cases, args)

    records, failures = [], []
    for case in cases:
        cx = assignment[f"{case.case_id}_x"]
        cy = assignment[f"{case.case_id}_y"]
        try:
            rec = analyze_aggregation(
                case.x,
                case.y,
                case.z,
                categories[cx].reference,
                categories[cy].reference,
                category_x=str(cx),
                category_y=str(cy),
                symmetric_x=categories[cx].symmetric,
                symmetric_y=categories[cy].symmetric,
                x_id=f"{case.case_id}_x",
                y_id=f"{case.case_id}_y",
                max_points=args.max_points,
            )
            records.append(rec)
        except (ShapeError, StageError) as exc:
            failures.append({"case": case.case_id, "error": str(exc)})
            print(f"case {case.case_id} failed: {exc}", file=sys.stderr)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_lines([json.dumps(r.to_json(), sort_keys=True) for r in records], out)
    summary = {
        "config": _config_dict(args),
        "n_records": len(records),
        "n_failures": len(failures),
        "failures": failures,
        "categories": [
            {
                "index": i,
                "representative_id": cat.representative_id,
                "n_members": len(cat.member_ids),
                "symmetric": cat.symmetric,
            }
            for i, cat in enumerate(categories)
        ],
        "low_aspect_warnings": sum(
            1 for r in records if any(w.startswith("low_aspect") for w in r.warnings)
        ),
    }
    _write_json(summary, out.with_suffix(".summary.json"))
    print(f"wrote {len(records)} records to {out} ({len(failures)} failures)")
    if records and failures:
        return 2
    return 0 if records else 1


def _role_categories(cases, args):
    """Group primaries by their dataset role (x vs y) instead of clustering."""
    x_shapes = [case.x for case in cases]
    y_shapes = [case.y for case in cases]
    cand = list(range(min(len(cases), args.reference_candidates)))
    categories = []
    for shapes in (x_shapes, y_shapes):
        _, ref = shapecat.select_reference(
            shapes, candidates=cand, max_points=args.cluster_points, max_iter=args.cluster_iter
        )
        categories.append(
            shapecat.ShapeCategory(
                member_ids=("unused",), representative_id="unused", reference=ref
            )
        )
    assignment = {}
    for case in cases:
        assignment[f"{case.case_id}_x"] = 0
        assignment[f"{case.case_id}_y"] = 1
    return categories, assignment


def cmd_cluster(args) -> int:
    _, cases = simgen.read_dataset(args.dataset)
    categories, assignment = _cluster_dataset_shapes(cases, args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    shape_lookup = {}
    for case in cases:
        shape_lookup[f"{case.case_id}_x"] = case.x
        shape_lookup[f"{case.case_id}_y"] = case.y
    report = {"config": _config_dict(args), "k": len(categories), "categories": []}
    for i, cat in enumerate(categories):
        members = [sid for sid, ci in assignment.items() if ci == i]
        aspects = [shapecat.aspect_ratio(shape_lookup[sid]) for sid in members]
        report["categories"].append(
            {
                "index": i,
                "representative_id": cat.representative_id,
                "member_ids": sorted(members),
                "mean_aspect_ratio": float(np.mean(aspects)) if aspects else None,
                "symmetric": cat.symmetric,
            }
        )
        write_points_csv(cat.reference, outdir / f"reference_{i}.csv")
    _write_json(report, outdir / "clusters.json")
    print(f"wrote cluster report ({len(categories)} categories) to {outdir}")
    return 0


def _read_records(path) -> list[AggregationRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(AggregationRecord.from_json(json.loads(line)))
    return records


def _grouped_angles(records, include_low_aspect=False):
    """Angles per (category, partner-category) group, pooling both primaries."""
    groups: dict[str, list[float]] = {}
    for rec in records:
        sides = (
            (rec.category_x, rec.category_y, rec.theta_x_norm, "low_aspect_x"),
            (rec.category_y, rec.category_x, rec.theta_y_norm, "low_aspect_y"),
        )
        for own, partner, angle, flag in sides:
            if angle is None:
                continue
            if not include_low_aspect and flag in rec.warnings:
                continue
            groups.setdefault(f"{own}|{partner}", []).append(angle)
    return {label: np.asarray(vals) for label, vals in sorted(groups.items())}


def cmd_fit(args) -> int:
    records = _read_records(args.records)
    groups = _grouped_angles(records, include_low_aspect=args.include_low_aspect)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    report = {"config": _config_dict(args), "groups": {}}
    for label, values in groups.items():
        if len(values) < args.min_n:
            report["groups"][label] = {"n": int(len(values)), "skipped": "too few angles"}
            print(f"group {label}: skipped (n={len(values)} < {args.min_n})")
            continue
        sample = dirstats.AngleSample(values, label=label)
        params, diag = dirstats.mle_fit(sample)
        report["groups"][label] = {
            "n": int(len(values)),
            "gamma": params.gamma,
            "kappa": params.kappa,
            "diagnostics": diag.to_json(),
        }
        _write_density_curve(params, outdir / f"curve_{_slug(label)}.csv", args.curve_points)
        _write_histogram(values, outdir / f"hist_{_slug(label)}.csv", args.hist_bins)
    _write_json(report, outdir / "fit.json")
    print(f"wrote fit report for {len(report['groups'])} groups to {outdir}")
    return 0


def _slug(label: str) -> str:
    return label.replace("|", "_")


def _write_density_curve(params, path, n_points):
    thetas = np.linspace(0.0, 0.5 * np.pi, n_points)
    dens = dirstats.density(thetas, params)
    lines = ["theta,density"] + [f"{t!r},{d!r}" for t, d in zip(thetas, dens)]
    _write_lines(lines, path)


def _write_histogram(values, path, bins):
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 0.5 * np.pi))
    lines = ["bin_left,bin_right,count"] + [
        f"{edges[i]!r},{edges[i+1]!r},{int(c)}" for i, c in enumerate(counts)
    ]
    _write_lines(lines, path)


def cmd_test(args) -> int:
    records = _read_records(args.records)
    groups = _grouped_angles(records, include_low_aspect=args.include_low_aspect)
    which = [w.strip() for w in args.which.split(",") if w.strip()]
    reports = []
    for gi, (label, values) in enumerate(groups.items()):
        if len(values) < args.min_n:
            print(f"group {label}: skipped (n={len(values)} < {args.min_n})")
            continue
        sample = dirstats.AngleSample(values, label=label)
        group_seed = args.seed + 1000 * gi
        if "ks" in which or "all" in which:
            params, _ = dirstats.mle_fit(sample)
            rep = dirstats.ks_test(
                sample, params, alpha=args.alpha, mc_reps=args.mc_reps, seed=group_seed
            )
            reports.append({"group": label, **rep.to_json()})
        if "uniformity" in which or "all" in which:
            rep = dirstats.test_uniformity(
                sample, alpha=args.alpha, mc_reps=args.mc_reps, seed=group_seed + 1
            )
            reports.append({"group": label, **rep.to_json()})
        if "mean" in which or "all" in which:
            rep = dirstats.test_mean(
                sample,
                args.gamma0,
                alpha=args.alpha,
                mc_reps=args.mc_reps,
                seed=group_seed + 2,
            )
            reports.append({"group": label, **rep.to_json()})
    out = {"config": _config_dict(args), "reports": reports}
    _write_json(out, args.out)
    print(f"wrote {len(reports)} test reports to {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    """Simulate, analyze, fit and test in one reproducible run."""
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    args.out = outdir / "dataset"
    rc = cmd_simulate(args)
    if rc:
        return rc
    args.dataset = outdir / "dataset"
    args.out = outdir / "records.jsonl"
    rc = cmd_analyze(args)
    if rc == 1:
        return rc
    analyze_rc = rc
    args.records = outdir / "records.jsonl"
    args.out = outdir / "fit"
    rc = cmd_fit(args)
    if rc:
        return rc
    args.out = outdir / "tests.json"
    rc = cmd_test(args)
    if rc:
        return rc
    summary = {
        "config": _config_dict(args),
        "dataset": str(outdir / "dataset"),
        "records": str(outdir / "records.jsonl"),
        "fit": str(outdir / "fit" / "fit.json"),
        "tests": str(outdir / "tests.json"),
    }
    _write_json(summary, outdir / "pipeline.json")
    print(f"pipeline complete in {outdir}")
    return analyze_rc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggorient",
        description="Reconstruct and analyze orientations of two shapes in their aggregate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sim_args(p):
        p.add_argument("--rx", type=float, default=2.2, help="mean aspect ratio of the first primary")
        p.add_argument("--ry", type=float, default=2.2, help="mean aspect ratio of the second primary")
        p.add_argument("--cases", type=int, default=50)
        p.add_argument("--replicates", type=int, default=1)
        p.add_argument("--sigma", type=float, default=0.03, help="log axis-length std dev")
        p.add_argument("--sigma-e", type=float, default=0.1, help="boundary noise std dev")
        p.add_argument("--nu-b", type=float, default=DEFAULT_NU_B, help="log mean minor axis")
        p.add_argument("--grid-size", type=int, default=400)
        p.add_argument("--pixel-scale", type=float, default=10.0)

    def add_analyze_args(p):
        p.add_argument("--k-max", type=int, default=3)
        p.add_argument("--cluster-sample", type=int, default=40,
                       help="cluster on at most this many primaries (0 = all)")
        p.add_argument("--cluster-points", type=int, default=64,
                       help="point budget for clustering distances")
        p.add_argument("--cluster-iter", type=int, default=60)
        p.add_argument("--max-points", type=int, default=200)
        p.add_argument("--group-by-role", action="store_true",
                       help="skip clustering; group primaries by dataset role (x vs y)")
        p.add_argument("--reference-candidates", type=int, default=6)

    def add_group_args(p):
        p.add_argument("--min-n", type=int, default=5)
        p.add_argument("--include-low-aspect", action="store_true")

    p = sub.add_parser("simulate", help="generate a synthetic aggregation dataset")
    add_sim_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="estimate transforms and orientation angles")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    add_analyze_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cluster", help="cluster primaries into shape categories")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    add_analyze_args(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fit", help="fit the symmetric angular density per group")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--curve-points", type=int, default=256)
    p.add_argument("--hist-bins", type=int, default=18)
    add_group_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="run hypothesis tests per group")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--which", default="all", help="comma list: ks,uniformity,mean,all")
    p.add_argument("--gamma0", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc-reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    add_group_args(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("pipeline", help="simulate, analyze, fit and test in one run")
    add_sim_args(p)
    add_analyze_args(p)
    add_group_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--which", default="all")
    p.add_argument("--gamma0", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc-reps", type=int, default=1000)
    p.add_argument("--curve-points", type=int, default=256)
    p.add_argument("--hist-bins", type=int, default=18)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
