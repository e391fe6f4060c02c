"""End-to-end experiment pipeline.

For every grid cell (n, eta, batch, seed): generate data, train projected
SGD, window and subsample the trajectory, compute the distance matrix and
both complexity statistics, and append a RunRecord. Optional stages add
empirical stability estimates per sample size and evaluate both
generalization bounds. Reports are assembled deterministically: two runs
with the same config produce byte-identical CSV/JSON outputs, and
completed cells are skipped on re-runs via their on-disk records.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, bounds, geometry, lifetime, magnitude, stability, trainer
from .artifacts import RunRecord, load_trajectory, save_trajectory
from .errors import InvalidInputError, NumericalFailureError
from .rng import stream

THEOREM_KEY = "theorem"


@dataclass
class StabilitySettings:
    """Stability stage: one experiment per sample size in the grid."""

    J: int | None = None
    seeds: list[int] | None = None
    init_mode: str = "random_init"
    eval_split: str = "train"
    direction: str = "directed"
    iterations: int = 200
    converge_iterations: int = 400
    step: float | None = None


@dataclass
class ExperimentConfig:
    """Declarative description of a full grid experiment.

    Every field can be set in a JSON config file under the same name and
    overridden from the command line.
    """

    task: str = "quadratic"
    input_dim: int = 16
    n_grid: list[int] = field(default_factory=lambda: [100, 500, 1000, 5000, 10000])
    eta_grid: list[float] = field(default_factory=lambda: [0.05, 0.1])
    batch_grid: list[int] = field(default_factory=lambda: [1])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    iterations: int = geometry.DEFAULT_TRAJECTORY_LENGTH
    warmup: int = 0
    subsample: int = geometry.DEFAULT_SUBSAMPLE
    radius: float = 10.0
    step_rule: str = "constant"
    alpha: float = 1.0
    pmag_scales: list[float] = field(default_factory=lambda: [100.0])
    solver: str = "conjugate_gradient"
    theorem_lambda: float = 1.0
    stability: StabilitySettings | None = None
    lipschitz: float | None = None
    loss_bound: float | None = None
    class_sep: float = 1.0
    noise: float = 1.0
    hidden: int = 8
    output_dir: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        if self.task not in trainer.TASK_KINDS:
            raise InvalidInputError(f"unknown task {self.task!r}")
        for name, grid in (
            ("n_grid", self.n_grid),
            ("eta_grid", self.eta_grid),
            ("batch_grid", self.batch_grid),
            ("seeds", self.seeds),
        ):
            if not grid:
                raise InvalidInputError(f"{name} must be nonempty")
        if any(n < 1 for n in self.n_grid):
            raise InvalidInputError("sample sizes must be >= 1")
        if self.iterations < 1 or self.warmup < 0:
            raise InvalidInputError("iteration counts out of range")
        if self.step_rule not in ("constant", "decaying"):
            raise InvalidInputError(f"unknown step rule {self.step_rule!r}")
        if self.subsample < 1:
            raise InvalidInputError("subsample size must be >= 1")
        if not 0 <= self.alpha:
            raise InvalidInputError("alpha must be nonnegative")
        magnitude.ScaleGrid(tuple(sorted(set(self.pmag_scales))))
        if self.solver not in magnitude.SOLVERS:
            raise InvalidInputError(f"unknown solver {self.solver!r}")
        if self.theorem_lambda <= 0:
            raise InvalidInputError("theorem_lambda must be positive")
        if self.jobs < 1:
            raise InvalidInputError("jobs must be >= 1")


_CONFIG_KEYS = {
    "task", "input_dim", "n_grid", "eta_grid", "batch_grid", "seeds", "iterations",
    "warmup", "subsample", "radius", "step_rule", "alpha", "pmag_scales", "solver",
    "theorem_lambda", "stability", "lipschitz", "loss_bound", "class_sep", "noise",
    "hidden", "output_dir", "jobs",
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    doc = dict(doc)
    stab = doc.pop("stability", None)
    cfg = ExperimentConfig(**doc)
    if stab is not None:
        if not isinstance(stab, dict):
            raise InvalidInputError("stability section must be an object")
        cfg.stability = StabilitySettings(**stab)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed config {path}: {exc}") from exc
    except TypeError as exc:
        raise InvalidInputError(f"bad config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError(f"config {path} must be a JSON object")
    try:
        return config_from_dict(doc)
    except TypeError as exc:
        raise InvalidInputError(f"bad config value in {path}: {exc}") from exc


def _slug(value: float) -> str:
    return repr(float(value)).replace(".", "p").replace("-", "m")


def cell_id(task: str, n: int, eta: float, batch: int, seed: int) -> str:
    return f"{task}-n{n}-eta{_slug(eta)}-b{batch}-s{seed}"


def scale_key(s: float) -> str:
    return repr(float(s))


@dataclass
class CellResult:
    record: RunRecord
    skipped: bool


def compute_cell(cfg: ExperimentConfig, n: int, eta: float, batch: int, seed: int,
                 out_dir: str) -> CellResult:
    """Train one grid cell and write its record and subsampled trajectory.

    If the cell's record already exists on disk it is loaded and returned
    unchanged, making re-runs cheap and idempotent.
    """
    cid = cell_id(cfg.task, n, eta, batch, seed)
    cell_dir = Path(out_dir) / "cells" / cid
    record_path = cell_dir / "record.json"
    if record_path.exists():
        return CellResult(record=RunRecord.from_json(record_path.read_text()), skipped=True)
    try:
        return _compute_cell_fresh(cfg, n, eta, batch, seed, cid, cell_dir, record_path)
    except NumericalFailureError as exc:
        raise NumericalFailureError(f"cell {cid}: {exc}") from exc


def _compute_cell_fresh(cfg, n, eta, batch, seed, cid, cell_dir, record_path) -> CellResult:
    task, data, pool = trainer.make_task_and_data(
        cfg.task, n, cfg.input_dim, seed,
        class_sep=cfg.class_sep, noise=cfg.noise, hidden=cfg.hidden,
    )
    sgd = trainer.SGDConfig(
        radius=cfg.radius,
        step=eta,
        iterations=cfg.warmup + cfg.iterations,
        seed=seed,
        step_rule=cfg.step_rule,
        batch=batch,
    )
    full = trainer.projected_sgd(task, data, sgd)
    window = trainer.tail_window(full, cfg.iterations + 1)

    m = min(n, 500)
    train_idx = np.sort(stream(seed, "train-probe").choice(n, size=m, replace=False))
    lm_train = trainer.loss_matrix(task, window, data.take(train_idx), "train")
    lm_test = trainer.loss_matrix(task, window, pool.take(np.arange(m)), "test")
    gap = analysis.worst_case_gap(lm_train, lm_test)

    sub = geometry.subsample_uniform(window, cfg.subsample, seed)
    dist = geometry.pairwise_distances(sub)
    dist = geometry.deduplicate(dist, geometry.default_dedup_eps(dist))
    e_alpha = lifetime.alpha_weighted_lifetime_sum(dist, cfg.alpha)
    pmag = {
        scale_key(s): magnitude.positive_magnitude(dist, s, solver=cfg.solver)
        for s in cfg.pmag_scales
    }

    consts = bounds.estimate_constants(task, window, lm_train)
    record = RunRecord(
        run_id=cid,
        n=n,
        eta=float(eta),
        batch=batch,
        seed=seed,
        gen_gap=gap,
        e_alpha=e_alpha,
        pmag=pmag,
        beta_hat=None,
    )
    cell_dir.mkdir(parents=True, exist_ok=True)
    save_trajectory(sub, cell_dir / "trajectory")
    (cell_dir / "constants.json").write_text(
        json.dumps(
            {
                "lipschitz": consts.lipschitz,
                "loss_bound": consts.loss_bound,
                "smoothness": consts.smoothness,
                "source": consts.source,
                "probes": consts.probes,
            },
            indent=2,
        )
        + "\n"
    )
    record_path.write_text(record.to_json())
    return CellResult(record=record, skipped=False)


def _compute_cell_star(args) -> CellResult:
    return compute_cell(*args)


@dataclass
class PipelineResult:
    records: list[RunRecord]
    stability_reports: list[stability.StabilityReport]
    bound_rows: list[dict]
    computed: int
    skipped: int
    output_dir: str


def _load_constants(out_dir: Path, cid: str) -> dict:
    return json.loads((out_dir / "cells" / cid / "constants.json").read_text())


def _stability_stage(cfg: ExperimentConfig, log) -> list[stability.StabilityReport]:
    settings = cfg.stability
    reports = []
    for n in sorted(set(cfg.n_grid)):
        j = settings.J if settings.J is not None else stability.default_injection_count(n)
        j = min(j, n)
        scfg = stability.StabilityConfig(
            task=cfg.task,
            n=n,
            J=j,
            seeds=settings.seeds if settings.seeds is not None else list(cfg.seeds),
            input_dim=cfg.input_dim,
            init_mode=settings.init_mode,
            eval_split=settings.eval_split,
            direction=settings.direction,
            radius=cfg.radius,
            step=settings.step if settings.step is not None else float(cfg.eta_grid[0]),
            step_rule=cfg.step_rule,
            iterations=settings.iterations,
            converge_iterations=settings.converge_iterations,
            class_sep=cfg.class_sep,
            noise=cfg.noise,
        )
        started = time.perf_counter()
        report = stability.run_stability_experiment(scfg)
        log("stability", n=n, J=j, seconds=round(time.perf_counter() - started, 3))
        reports.append(report)
    return reports


def _bounds_stage(
    cfg: ExperimentConfig,
    out_dir: Path,
    records: list[RunRecord],
    stab_reports: list[stability.StabilityReport],
) -> list[dict]:
    """Evaluate both bounds per sample size, reusing stored trajectories for
    the theorem-schedule magnitude scale."""
    beta_by_n = {r.n: r.mean for r in stab_reports}
    rows: list[dict] = []
    for n in sorted(set(cfg.n_grid)):
        group = [r for r in records if r.n == n]
        if not group:
            continue
        consts = [_load_constants(out_dir, r.run_id) for r in group]
        lipschitz = cfg.lipschitz if cfg.lipschitz is not None else max(
            c["lipschitz"] for c in consts
        )
        loss_bound = cfg.loss_bound if cfg.loss_bound is not None else max(
            c["loss_bound"] for c in consts
        )
        beta = beta_by_n.get(n)
        if beta is None or beta <= 0:
            # bound needs a positive stability coefficient
            continue
        alpha = cfg.alpha if 0 < cfg.alpha <= 1 else 1.0
        k_const = bounds.kn_alpha(n, lipschitz, loss_bound, alpha)
        ealpha_samples = [r.e_alpha for r in group]
        res_e = bounds.ealpha_bound(beta, loss_bound, k_const, ealpha_samples)

        s_theorem = magnitude.pmag_scale(cfg.theorem_lambda, lipschitz, loss_bound, beta)
        pmag_samples = []
        for r in group:
            traj = load_trajectory(out_dir / "cells" / r.run_id / "trajectory")
            dist = geometry.pairwise_distances(traj)
            dist = geometry.deduplicate(dist, geometry.default_dedup_eps(dist))
            value = magnitude.positive_magnitude(dist, s_theorem, solver=cfg.solver)
            pmag_samples.append(value)
            r.pmag[THEOREM_KEY] = value
            (out_dir / "cells" / r.run_id / "record.json").write_text(r.to_json())
        res_p = bounds.pmag_bound(beta, loss_bound, cfg.theorem_lambda, pmag_samples)

        analytic = None
        if cfg.step_rule == "decaying" and cfg.task == "quadratic":
            step = float(cfg.eta_grid[0])
            if step < 1.0:
                analytic = stability.analytic_sgd_stability(
                    lipschitz, 1.0, cfg.radius, step, n, cfg.iterations
                )
        row = {
            "n": n,
            "beta_hat": beta,
            "analytic_beta": analytic,
            "L": lipschitz,
            "B": loss_bound,
            "alpha": alpha,
            "K": k_const,
            "lambda": cfg.theorem_lambda,
            "theorem_scale": s_theorem,
            "ealpha_bound": res_e.value,
            "pmag_bound": res_p.value,
        }
        if analytic is not None and analytic > 0:
            row["ealpha_bound_analytic"] = bounds.ealpha_bound(
                analytic, loss_bound, k_const, ealpha_samples
            ).value
            row["pmag_bound_analytic"] = bounds.pmag_bound(
                analytic, loss_bound, cfg.theorem_lambda, pmag_samples
            ).value
        rows.append(row)
    return rows


def _write_reports(
    cfg: ExperimentConfig,
    out_dir: Path,
    records: list[RunRecord],
    stab_reports: list[stability.StabilityReport],
    bound_rows: list[dict],
) -> None:
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    kinds = [("e_alpha", None), ("pmag_fixed_scale", scale_key(cfg.pmag_scales[0]))]
    # theorem-scale stats only when every record carries the value (the
    # bounds stage may skip groups whose stability coefficient is zero)
    if records and all(THEOREM_KEY in r.pmag for r in records):
        kinds.append(("pmag_theorem_scale", THEOREM_KEY))
    reports = {}
    for kind, key in kinds:
        rep = analysis.grid_report(records, kind, scale_key=key)
        reports[kind] = rep
        (report_dir / f"grid_{kind}.csv").write_text(rep.to_csv())

    if stab_reports:
        lines = [stability.STABILITY_CSV_HEADER]
        lines += [r.csv_row() for r in sorted(stab_reports, key=lambda r: r.n)]
        (report_dir / "stability.csv").write_text("\n".join(lines) + "\n")

    summary = {
        "task": cfg.task,
        "alpha": cfg.alpha,
        "pmag_scales": [float(s) for s in cfg.pmag_scales],
        "runs": [json.loads(r.to_json()) for r in records],
        "per_n_stats": {
            kind: {
                str(n): {"tau": g.tau, "r": g.r, "slope": g.slope, "count": g.count}
                for n, g in rep.per_n_stats.items()
            }
            for kind, rep in reports.items()
        },
        "stability": [json.loads(r.to_json()) for r in sorted(stab_reports, key=lambda r: r.n)],
        "bounds": bound_rows,
    }
    (report_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )


def run_pipeline(cfg: ExperimentConfig, output_dir: str | None = None) -> PipelineResult:
    """Run the full grid, then the stability, bounds, and report stages."""
    cfg.validate()
    out = output_dir or cfg.output_dir
    if not out:
        raise InvalidInputError("no output directory configured")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "pipeline.log.jsonl"

    def log(event: str, **fields) -> None:
        entry = {"event": event, **fields}
        with log_path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry) + "\n")

    cells = [
        (cfg, n, eta, batch, seed, str(out_dir))
        for n in cfg.n_grid
        for eta in cfg.eta_grid
        for batch in cfg.batch_grid
        for seed in cfg.seeds
    ]
    results: list[CellResult] = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for res in pool.map(_compute_cell_star, cells):
                log("cell", id=res.record.run_id, skipped=res.skipped)
                results.append(res)
    else:
        for args in cells:
            started = time.perf_counter()
            res = compute_cell(*args)
            log(
                "cell",
                id=res.record.run_id,
                skipped=res.skipped,
                seconds=round(time.perf_counter() - started, 3),
            )
            results.append(res)

    records = [r.record for r in results]
    records.sort(key=lambda r: (r.n, r.eta, r.batch, r.seed))

    stab_reports = _stability_stage(cfg, log) if cfg.stability is not None else []
    bound_rows = _bounds_stage(cfg, out_dir, records, stab_reports) if stab_reports else []
    _write_reports(cfg, out_dir, records, stab_reports, bound_rows)

    return PipelineResult(
        records=records,
        stability_reports=stab_reports,
        bound_rows=bound_rows,
        computed=sum(1 for r in results if not r.skipped),
        skipped=sum(1 for r in results if r.skipped),
        output_dir=str(out_dir),
    )
