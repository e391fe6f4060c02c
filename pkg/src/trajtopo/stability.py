"""Trajectory-stability estimation.

The empirical estimator compares two trajectories through their loss
matrices on a shared evaluation set: for each iterate of the first run it
finds the closest iterate of the second run under the worst-per-sample
loss difference, then reports the worst such match. The closed-form
companion gives the decay rate of projected SGD with decaying steps on
smooth Lipschitz losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .artifacts import LossMatrix
from .errors import InvalidInputError
from .rng import stream
from .trainer import (
    Dataset,
    PerturbSpec,
    SGDConfig,
    loss_matrix,
    make_task_and_data,
    perturb_dataset,
    projected_sgd,
)

INIT_MODES = ("random_init", "locally_converged")
EVAL_SPLITS = ("train", "validation")
DIRECTIONS = ("directed", "symmetrized")

# row-block size keeping the (block, T', M) work tensor around 10^7 entries
_BLOCK_TARGET = 10_000_000


def default_injection_count(n: int) -> int:
    """50 replacements, scaled down proportionally for n below 100."""
    if n >= 100:
        return 50
    return max(1, (50 * n) // 100)


def _directed_estimate(a: np.ndarray, b: np.ndarray) -> float:
    rows = max(1, _BLOCK_TARGET // max(1, b.size))
    worst = 0.0
    for start in range(0, a.shape[0], rows):
        block = a[start : start + rows]
        # (block, T', M) -> worst sample, then best match, then worst iterate
        diff = np.abs(block[:, None, :] - b[None, :, :]).max(axis=2)
        worst = max(worst, float(diff.min(axis=1).max()))
    return worst


def estimate_stability(
    losses_a: LossMatrix, losses_b: LossMatrix, symmetrized: bool = False
) -> float:
    """Worst-case best-match loss deviation between two trajectories.

    Directed by default (first trajectory is the reference); the
    symmetrized variant takes the larger of the two directions and
    dominates both.
    """
    if not np.array_equal(losses_a.sample_ids, losses_b.sample_ids):
        raise InvalidInputError("loss matrices must share the same evaluation samples")
    value = _directed_estimate(losses_a.values, losses_b.values)
    if symmetrized:
        value = max(value, _directed_estimate(losses_b.values, losses_a.values))
    return value


def analytic_sgd_stability(
    lipschitz: float, smoothness: float, radius: float, step: float, n: int, iterations: int
) -> float:
    """Closed-form stability parameter of projected SGD with steps c/k.

    Requires c < 1/G (G the gradient-Lipschitz constant); decays like
    1/(n - 1) in the sample count and grows with the iteration budget.
    """
    if lipschitz <= 0 or smoothness <= 0 or radius <= 0 or step <= 0:
        raise InvalidInputError("constants must be positive")
    if step >= 1.0 / smoothness:
        raise InvalidInputError(
            f"step constant {step} must be below 1/G = {1.0 / smoothness}"
        )
    if n < 2:
        raise InvalidInputError("need n >= 2")
    if iterations < 0:
        raise InvalidInputError("iteration count must be nonnegative")
    if iterations == 0:
        return 0.0
    gc = smoothness * step
    exponent = gc / (gc + 1.0)
    k = np.arange(1, iterations + 1, dtype=np.float64)
    return (
        (4.0 * lipschitz * radius / (n - 1))
        * (lipschitz / (smoothness * radius)) ** (1.0 / (gc + 1.0))
        * float(np.sum(k**exponent))
    )


@dataclass
class StabilityConfig:
    """One stability experiment: task, perturbation size, and SGD settings."""

    task: str
    n: int
    J: int
    seeds: list[int]
    input_dim: int = 8
    init_mode: str = "random_init"
    eval_split: str = "train"
    direction: str = "directed"
    radius: float = 10.0
    step: float = 0.05
    step_rule: str = "constant"
    iterations: int = 200
    converge_iterations: int = 400
    class_sep: float = 1.0
    noise: float = 1.0

    def __post_init__(self) -> None:
        if self.init_mode not in INIT_MODES:
            raise InvalidInputError(f"unknown init mode {self.init_mode!r}")
        if self.eval_split not in EVAL_SPLITS:
            raise InvalidInputError(f"unknown eval split {self.eval_split!r}")
        if self.direction not in DIRECTIONS:
            raise InvalidInputError(f"unknown direction {self.direction!r}")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")
        if self.J > self.n:
            raise InvalidInputError(f"replacement count {self.J} exceeds n = {self.n}")


@dataclass
class StabilityReport:
    """Per-seed stability estimates with their aggregate.

    `raw_deviations` holds the max-min loss deviation of each seed pair;
    `beta_hats` divides it by the replacement count J, giving the
    per-replacement stability coefficient that the deviation is assumed to
    scale with (for J = 0 the two coincide at zero). Mean and stderr refer
    to `beta_hats`.
    """

    beta_hats: list[float]
    raw_deviations: list[float]
    seeds: list[int]
    mean: float
    stderr: float
    n: int
    J: int
    direction: str
    eval_split: str
    init_mode: str
    analytic_beta: float | None = None
    extras: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "J": self.J,
            "direction": self.direction,
            "eval_split": self.eval_split,
            "init_mode": self.init_mode,
            "seeds": self.seeds,
            "beta_hats": self.beta_hats,
            "raw_deviations": self.raw_deviations,
            "mean": self.mean,
            "stderr": self.stderr,
            "analytic_beta": self.analytic_beta,
            "extras": dict(sorted(self.extras.items())),
        }
        return json.dumps(doc, indent=2) + "\n"

    def csv_row(self) -> str:
        return ",".join(
            [
                self.init_mode,
                self.eval_split,
                str(self.n),
                str(self.J),
                repr(self.mean),
                repr(self.stderr),
                str(len(self.seeds)),
            ]
        )


STABILITY_CSV_HEADER = "init_mode,eval_split,n,J,mean,stderr,seeds"


def _probe_set(
    cfg: StabilityConfig, seed: int, data_perturbed: Dataset, pool: Dataset, injected: np.ndarray
) -> Dataset:
    m = min(cfg.n, 500)
    if cfg.eval_split == "train":
        # evaluation samples live in the perturbed training set, minus the
        # injected ones, so both runs are probed on data they share
        picks = stream(seed, "probe").choice(cfg.n, size=m, replace=False)
        picks.sort()
        keep = picks[~np.isin(data_perturbed.ids[picks], injected)]
        if keep.size == 0:
            raise InvalidInputError("every probe sample was injected; decrease J")
        return data_perturbed.take(keep)
    start = cfg.J
    if start + m > pool.n:
        raise InvalidInputError("pool too small for validation probes")
    return pool.take(np.arange(start, start + m))


def run_single_seed(cfg: StabilityConfig, seed: int) -> float:
    """One Algorithm-style estimate: train twin runs differing only in J
    injected samples, then compare their loss matrices."""
    task, data, pool = make_task_and_data(
        cfg.task, cfg.n, cfg.input_dim, seed, class_sep=cfg.class_sep, noise=cfg.noise
    )
    spec = PerturbSpec(J=cfg.J, pool=pool, seed=seed)
    data_perturbed = perturb_dataset(data, spec)
    injected = pool.ids[: cfg.J]

    w0 = None
    tag = "window"
    if cfg.init_mode == "locally_converged":
        warm_cfg = SGDConfig(
            radius=cfg.radius,
            step=cfg.step,
            iterations=cfg.converge_iterations,
            seed=seed,
            step_rule=cfg.step_rule,
            stream_tag="warmup",
        )
        w0 = projected_sgd(task, data, warm_cfg).points[-1]

    run_cfg = dict(
        radius=cfg.radius,
        step=cfg.step,
        iterations=cfg.iterations,
        seed=seed,
        step_rule=cfg.step_rule,
        w0=w0,
        stream_tag=tag,
    )
    traj_a = projected_sgd(task, data, SGDConfig(**run_cfg))
    traj_b = projected_sgd(task, data_perturbed, SGDConfig(**run_cfg))

    probes = _probe_set(cfg, seed, data_perturbed, pool, injected)
    losses_a = loss_matrix(task, traj_a, probes, "probe")
    losses_b = loss_matrix(task, traj_b, probes, "probe")
    return estimate_stability(losses_a, losses_b, symmetrized=cfg.direction == "symmetrized")


def run_stability_experiment(cfg: StabilityConfig) -> StabilityReport:
    """Estimate stability across seeds and aggregate mean and stderr."""
    raw = [run_single_seed(cfg, seed) for seed in cfg.seeds]
    betas = [r / cfg.J if cfg.J > 0 else r for r in raw]
    arr = np.array(betas)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return StabilityReport(
        beta_hats=[float(b) for b in betas],
        raw_deviations=[float(r) for r in raw],
        seeds=list(cfg.seeds),
        mean=mean,
        stderr=stderr,
        n=cfg.n,
        J=cfg.J,
        direction=cfg.direction,
        eval_split=cfg.eval_split,
        init_mode=cfg.init_mode,
    )
