"""Command-line interface.

Subcommands cover the full pipeline (`run`) and each stage on its own
(`traj-gen`, `distmat`, `lifetime-sum`, `pmag`, `stability`, `bound`,
`report`), operating on the artifact files described in `artifacts`.
Exit codes: 0 success, 2 invalid config or input, 3 numerical failure.

The default output root can be set with the TRAJTOPO_OUT environment
variable; explicit --out flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, bounds, geometry, lifetime, magnitude, pipeline, stability, trainer
from .artifacts import load_loss_matrix, save_loss_matrix, save_trajectory
from .errors import InvalidInputError, NumericalFailureError, TrajtopoError
from .geometry import load_distance_matrix, save_distance_matrix
from .pipeline import ExperimentConfig, StabilitySettings
from .rng import stream

ENV_OUTPUT_ROOT = "TRAJTOPO_OUT"


def _default_out(explicit: str | None, configured: str | None = None) -> str:
    out = explicit or configured or os.environ.get(ENV_OUTPUT_ROOT)
    if not out:
        raise InvalidInputError(
            f"no output directory given; pass --out or set {ENV_OUTPUT_ROOT}"
        )
    return out


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated integers, got {text!r}") from exc


def _apply_set_overrides(cfg: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply --set key=JSON overrides; `stability.` prefixes reach the
    stability section."""
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise InvalidInputError(f"--set expects key=value, got {assignment!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if key == "stability":
            if value is None:
                cfg.stability = None
            elif isinstance(value, dict):
                try:
                    cfg.stability = StabilitySettings(**value)
                except TypeError as exc:
                    raise InvalidInputError(f"bad stability section: {exc}") from exc
            else:
                raise InvalidInputError("stability override must be a JSON object or null")
        elif key.startswith("stability."):
            section = cfg.stability if cfg.stability is not None else StabilitySettings()
            field_name = key.split(".", 1)[1]
            if not hasattr(section, field_name):
                raise InvalidInputError(f"unknown stability config key {field_name!r}")
            cfg.stability = replace(section, **{field_name: value})
        else:
            if not hasattr(cfg, key):
                raise InvalidInputError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = pipeline.load_config(args.config) if args.config else ExperimentConfig()
    if args.task:
        cfg.task = args.task
    if args.n_grid:
        cfg.n_grid = _parse_ints(args.n_grid)
    if args.eta_grid:
        cfg.eta_grid = _parse_floats(args.eta_grid)
    if args.seeds:
        cfg.seeds = _parse_ints(args.seeds)
    if args.iterations:
        cfg.iterations = args.iterations
    if args.jobs:
        cfg.jobs = args.jobs
    cfg = _apply_set_overrides(cfg, args.set or [])
    out = _default_out(args.out, cfg.output_dir)
    result = pipeline.run_pipeline(cfg, output_dir=out)
    print(
        json.dumps(
            {
                "output_dir": result.output_dir,
                "cells_computed": result.computed,
                "cells_skipped": result.skipped,
                "runs": len(result.records),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_traj_gen(args: argparse.Namespace) -> int:
    out_dir = Path(_default_out(args.out))
    out_dir.mkdir(parents=True, exist_ok=True)
    task, data, pool = trainer.make_task_and_data(
        args.task, args.n, args.input_dim, args.seed,
        class_sep=args.class_sep, noise=args.noise,
    )
    cfg = trainer.SGDConfig(
        radius=args.radius,
        step=args.eta,
        iterations=args.warmup + args.iterations,
        seed=args.seed,
        step_rule=args.step_rule,
        batch=args.batch,
    )
    full = trainer.projected_sgd(task, data, cfg)
    window = trainer.tail_window(full, args.iterations + 1)

    m = min(args.n, 500)
    train_idx = np.sort(stream(args.seed, "train-probe").choice(args.n, size=m, replace=False))
    lm_train = trainer.loss_matrix(task, window, data.take(train_idx), "train")
    lm_test = trainer.loss_matrix(task, window, pool.take(np.arange(m)), "test")

    save_trajectory(window, out_dir / "trajectory")
    save_loss_matrix(lm_train, out_dir / "losses_train")
    save_loss_matrix(lm_test, out_dir / "losses_test")
    stub = {
        "run_id": pipeline.cell_id(args.task, args.n, args.eta, args.batch, args.seed),
        "n": args.n,
        "eta": args.eta,
        "batch": args.batch,
        "seed": args.seed,
        "gen_gap": analysis.worst_case_gap(lm_train, lm_test),
        "e_alpha": None,
        "pmag": {},
        "beta_hat": None,
    }
    (out_dir / "record_stub.json").write_text(json.dumps(stub, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"output_dir": str(out_dir), "gen_gap": stub["gen_gap"]}, sort_keys=True))
    return 0


def cmd_distmat(args: argparse.Namespace) -> int:
    from .artifacts import load_trajectory

    traj = load_trajectory(args.trajectory)
    if args.subsample:
        traj = geometry.subsample_uniform(traj, args.subsample, args.seed)
    dist = geometry.pairwise_distances(traj)
    eps = geometry.default_dedup_eps(dist) if args.dedup_eps is None else args.dedup_eps
    dist = geometry.deduplicate(dist, eps)
    save_distance_matrix(dist, args.out)
    print(json.dumps({"points": len(dist), "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_lifetime_sum(args: argparse.Namespace) -> int:
    dist = load_distance_matrix(args.distmat)
    tree = lifetime.minimum_spanning_tree(dist)
    value = lifetime.alpha_weighted_lifetime_sum(dist, args.alpha)
    print(
        json.dumps(
            {"alpha": args.alpha, "e_alpha": value, "edges": tree.count},
            sort_keys=True,
        )
    )
    return 0


def cmd_pmag(args: argparse.Namespace) -> int:
    dist = load_distance_matrix(args.distmat)
    if args.theorem_scale:
        parts = _parse_floats(args.theorem_scale)
        if len(parts) != 4:
            raise InvalidInputError("--theorem-scale expects lambda,L,B,beta")
        scales = [magnitude.pmag_scale(*parts)]
    elif args.scales:
        scales = _parse_floats(args.scales)
    else:
        raise InvalidInputError("pass --scales or --theorem-scale")
    grid = magnitude.ScaleGrid(tuple(sorted(set(scales))))
    profile = magnitude.magnitude_profile(dist, grid, solver=args.solver)
    doc = {
        repr(s): {
            "pmag": sol.pmag,
            "magnitude": sol.magnitude,
            "residual": sol.residual,
            "solver": sol.solver,
            "iterations": sol.iterations,
        }
        for s, sol in profile.items()
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_stability(args: argparse.Namespace) -> int:
    if args.losses:
        if len(args.losses) != 2:
            raise InvalidInputError("pass exactly two loss-matrix artifact stems")
        a = load_loss_matrix(args.losses[0])
        b = load_loss_matrix(args.losses[1])
        value = stability.estimate_stability(a, b, symmetrized=args.symmetrized)
        print(json.dumps({"estimate": value, "symmetrized": args.symmetrized}, sort_keys=True))
        return 0
    if not args.config:
        raise InvalidInputError("pass --config or two loss-matrix artifacts")
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise InvalidInputError("stability config must be a JSON object")
    n_values = doc.pop("n", None)
    if n_values is None:
        raise InvalidInputError("stability config needs 'n' (an integer or a list)")
    if isinstance(n_values, int):
        n_values = [n_values]
    reports = []
    for n in n_values:
        j = doc.get("J")
        cfg_doc = dict(doc)
        cfg_doc["J"] = j if j is not None else stability.default_injection_count(n)
        try:
            cfg = stability.StabilityConfig(n=n, **cfg_doc)
        except TypeError as exc:
            raise InvalidInputError(f"bad stability config: {exc}") from exc
        reports.append(stability.run_stability_experiment(cfg))
    for report in reports:
        sys.stdout.write(report.to_json())
    if args.csv:
        lines = [stability.STABILITY_CSV_HEADER] + [r.csv_row() for r in reports]
        Path(args.csv).write_text("\n".join(lines) + "\n")
    return 0


def _samples_from_summary(args: argparse.Namespace) -> list[float]:
    doc = json.loads(Path(args.summary).read_text(encoding="utf-8"))
    runs = doc.get("runs")
    if not isinstance(runs, list):
        raise InvalidInputError(f"{args.summary} is not a pipeline summary")
    if args.n is not None:
        runs = [r for r in runs if r["n"] == args.n]
    if not runs:
        raise InvalidInputError("no runs match the requested sample size")
    if args.theorem == "ealpha":
        return [float(r["e_alpha"]) for r in runs]
    key = args.scale_key or pipeline.THEOREM_KEY
    try:
        return [float(r["pmag"][key]) for r in runs]
    except KeyError as exc:
        raise InvalidInputError(
            f"summary runs lack magnitude values at scale {key!r}; "
            "pass --scale-key with one of the recorded scales"
        ) from exc


def _load_samples(args: argparse.Namespace) -> list[float]:
    if args.samples:
        return _parse_floats(args.samples)
    if args.samples_file:
        doc = json.loads(Path(args.samples_file).read_text(encoding="utf-8"))
        if isinstance(doc, dict):
            doc = doc.get("samples")
        if not isinstance(doc, list):
            raise InvalidInputError("samples file must hold a JSON list or {'samples': [...]}")
        return [float(v) for v in doc]
    if args.summary:
        return _samples_from_summary(args)
    raise InvalidInputError("pass --samples, --samples-file, or --summary")


def cmd_bound(args: argparse.Namespace) -> int:
    if args.beta is not None:
        beta = args.beta
    elif args.stability_report:
        doc = json.loads(Path(args.stability_report).read_text(encoding="utf-8"))
        beta = float(doc["mean"])
    else:
        raise InvalidInputError("pass --beta or --stability-report")
    samples = _load_samples(args)
    if args.theorem == "ealpha":
        if args.k_const is not None:
            k_const = args.k_const
        elif args.lipschitz is not None and args.n is not None:
            k_const = bounds.kn_alpha(args.n, args.lipschitz, args.loss_bound, args.alpha)
        else:
            raise InvalidInputError("pass --k-const, or --lipschitz with --n")
        result = bounds.ealpha_bound(beta, args.loss_bound, k_const, samples)
    else:
        result = bounds.pmag_bound(beta, args.loss_bound, args.lam, samples)
    sys.stdout.write(result.to_json())
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .artifacts import RunRecord

    runs_dir = Path(args.runs_dir)
    record_paths = sorted(runs_dir.glob("cells/*/record.json"))
    if not record_paths:
        raise InvalidInputError(f"no run records under {runs_dir}")
    records = [RunRecord.from_json(p.read_text()) for p in record_paths]
    records.sort(key=lambda r: (r.n, r.eta, r.batch, r.seed))
    out_dir = Path(args.out) if args.out else runs_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    fixed_keys = sorted(k for r in records for k in r.pmag if k != pipeline.THEOREM_KEY)
    kinds = [("e_alpha", None)]
    if fixed_keys:
        kinds.append(("pmag_fixed_scale", fixed_keys[0]))
    if all(pipeline.THEOREM_KEY in r.pmag for r in records):
        kinds.append(("pmag_theorem_scale", pipeline.THEOREM_KEY))
    per_n = {}
    for kind, key in kinds:
        rep = analysis.grid_report(records, kind, scale_key=key)
        (out_dir / f"grid_{kind}.csv").write_text(rep.to_csv())
        per_n[kind] = {
            str(n): {"tau": g.tau, "r": g.r, "slope": g.slope, "count": g.count}
            for n, g in rep.per_n_stats.items()
        }
    summary = {
        "runs": [json.loads(r.to_json()) for r in records],
        "per_n_stats": per_n,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"out": str(out_dir), "runs": len(records)}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajtopo",
        description="Topological complexity and stability analysis of optimizer trajectories",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full grid pipeline from a config file")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides config and environment)")
    p.add_argument("--task", choices=trainer.TASK_KINDS)
    p.add_argument("--n-grid", help="comma-separated sample sizes")
    p.add_argument("--eta-grid", help="comma-separated learning rates")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--iterations", type=int)
    p.add_argument("--jobs", type=int, help="parallel workers over grid cells")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any config key (JSON value); stability.KEY reaches the stability section",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("traj-gen", help="train one run and emit its artifacts")
    p.add_argument("--task", default="quadratic", choices=trainer.TASK_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--input-dim", type=int, default=16)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--step-rule", default="constant", choices=["constant", "decaying"])
    p.add_argument("--class-sep", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_traj_gen)

    p = sub.add_parser("distmat", help="distance matrix from a trajectory artifact")
    p.add_argument("trajectory", help="trajectory artifact stem")
    p.add_argument("--out", required=True, help="output artifact stem")
    p.add_argument("--subsample", type=int, help="uniform subsample size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dedup-eps", type=float, help="duplicate threshold (default: relative)")
    p.set_defaults(func=cmd_distmat)

    p = sub.add_parser("lifetime-sum", help="alpha-weighted MST lifetime sum")
    p.add_argument("distmat", help="distance-matrix artifact stem")
    p.add_argument("--alpha", type=float, default=1.0)
    p.set_defaults(func=cmd_lifetime_sum)

    p = sub.add_parser("pmag", help="positive magnitude over a scale grid")
    p.add_argument("distmat", help="distance-matrix artifact stem")
    p.add_argument("--scales", help="comma-separated scales")
    p.add_argument("--theorem-scale", help="lambda,L,B,beta for the schedule scale")
    p.add_argument("--solver", default="direct", choices=list(magnitude.SOLVERS))
    p.set_defaults(func=cmd_pmag)

    p = sub.add_parser("stability", help="stability estimate from artifacts or a config")
    p.add_argument("losses", nargs="*", help="two loss-matrix artifact stems")
    p.add_argument("--config", help="JSON stability experiment config")
    p.add_argument("--symmetrized", action="store_true")
    p.add_argument("--csv", help="also write a CSV summary to this path")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("bound", help="evaluate a generalization bound")
    p.add_argument("--theorem", required=True, choices=["ealpha", "pmag"])
    p.add_argument("--beta", type=float, help="stability coefficient")
    p.add_argument("--stability-report", help="JSON stability report (uses its mean)")
    p.add_argument("--loss-bound", type=float, required=True, help="loss bound B")
    p.add_argument("--lipschitz", type=float, help="Lipschitz constant L")
    p.add_argument("--n", type=int, help="sample count (for the lifetime-sum constant)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--k-const", type=float, help="lifetime-sum constant, overrides --lipschitz/--n")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--samples", help="comma-separated complexity samples")
    p.add_argument("--samples-file", help="JSON file with complexity samples")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("report", help="grid report CSVs from stored run records")
    p.add_argument("runs_dir", help="pipeline output directory")
    p.add_argument("--out", help="report directory (default: RUNS_DIR/report)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except TrajtopoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
