"""Persistent artifact formats shared by all stages.

An artifact is a pair of files ``<stem>.json`` (manifest) and ``<stem>.bin``
(raw row-major little-endian float64). The binary payload is bit-exact
across platforms; the manifest carries interpretation. Non-finite payloads
are rejected on read and write because every downstream solver assumes
finite inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, UnsupportedVersionError

SCHEMA_VERSION = 1
DTYPE = "f64le"
ROLES = ("trajectory", "loss_matrix", "distance_matrix", "dataset")
SPLITS = ("train", "test", "probe")


@dataclass
class ArtifactManifest:
    """Sidecar description of one binary matrix."""

    role: str
    shape: tuple[int, int]
    metadata: dict[str, str] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    dtype: str = DTYPE

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise UnsupportedVersionError(
                f"unsupported schema_version {self.schema_version!r}, expected {SCHEMA_VERSION}"
            )
        if self.role not in ROLES:
            raise InvalidInputError(f"unknown artifact role {self.role!r}")
        if self.dtype != DTYPE:
            raise InvalidInputError(f"unsupported dtype {self.dtype!r}, expected {DTYPE!r}")
        if len(self.shape) != 2 or any(int(s) <= 0 for s in self.shape):
            raise InvalidInputError(f"shape must be two positive integers, got {self.shape!r}")
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in self.metadata.items()):
            raise InvalidInputError("metadata must map strings to strings")


def write_artifact(manifest: ArtifactManifest, matrix: np.ndarray, path: str | Path) -> None:
    """Write ``<path>.json`` and ``<path>.bin`` for a finite 2-D matrix."""
    manifest.validate()
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape != tuple(int(s) for s in manifest.shape):
        raise InvalidInputError(
            f"matrix shape {matrix.shape} does not match manifest shape {tuple(manifest.shape)}"
        )
    if not np.isfinite(matrix).all():
        raise InvalidInputError("matrix contains non-finite entries")
    doc = {
        "schema_version": manifest.schema_version,
        "role": manifest.role,
        "dtype": manifest.dtype,
        "shape": [int(s) for s in manifest.shape],
        "metadata": dict(sorted(manifest.metadata.items())),
    }
    Path(f"{path}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    Path(f"{path}.bin").write_bytes(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def read_artifact(path: str | Path) -> tuple[ArtifactManifest, np.ndarray]:
    """Inverse of :func:`write_artifact`."""
    json_path = Path(f"{path}.json")
    bin_path = Path(f"{path}.bin")
    try:
        doc = json.loads(json_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed manifest {json_path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidInputError(f"manifest {json_path} is not a JSON object")
    try:
        manifest = ArtifactManifest(
            role=doc["role"],
            shape=tuple(doc["shape"]),
            metadata=doc.get("metadata", {}),
            schema_version=doc["schema_version"],
            dtype=doc["dtype"],
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"manifest {json_path} is missing required keys: {exc}") from exc
    manifest.validate()
    rows, cols = (int(s) for s in manifest.shape)
    payload = bin_path.read_bytes()
    expected = 8 * rows * cols
    if len(payload) != expected:
        raise InvalidInputError(
            f"payload {bin_path} has {len(payload)} bytes, expected {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if not np.isfinite(matrix).all():
        raise InvalidInputError(f"payload {bin_path} contains non-finite entries")
    return manifest, matrix


@dataclass
class Trajectory:
    """Ordered optimizer iterates: row t is the parameter vector at step
    ``iteration_ids[t]``."""

    points: np.ndarray
    iteration_ids: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        self.iteration_ids = np.asarray(self.iteration_ids, dtype=np.int64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise InvalidInputError("trajectory must be a T x d matrix with T >= 1")
        if self.iteration_ids.shape != (self.points.shape[0],):
            raise InvalidInputError("iteration_ids length must equal the number of rows")
        if self.points.shape[0] > 1 and not (np.diff(self.iteration_ids) > 0).all():
            raise InvalidInputError("iteration_ids must be strictly increasing")
        if not np.isfinite(self.points).all():
            raise InvalidInputError("trajectory contains non-finite entries")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class LossMatrix:
    """Per-iterate, per-sample loss values: entry (t, i) is the loss of
    iterate t on evaluation sample i."""

    values: np.ndarray
    iteration_ids: np.ndarray
    sample_ids: np.ndarray
    split: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.iteration_ids = np.asarray(self.iteration_ids, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.split not in SPLITS:
            raise InvalidInputError(f"unknown split {self.split!r}")
        if self.values.ndim != 2:
            raise InvalidInputError("loss matrix must be 2-D")
        if self.values.shape != (len(self.iteration_ids), len(self.sample_ids)):
            raise InvalidInputError("loss matrix dimensions inconsistent with id lists")
        if not np.isfinite(self.values).all():
            raise InvalidInputError("loss matrix contains non-finite entries")
        if (self.values < 0).any():
            raise InvalidInputError("loss matrix contains negative entries")


@dataclass
class RunRecord:
    """Summary of one training run: hyperparameters, generalization gap,
    and trajectory complexity statistics."""

    run_id: str
    n: int
    eta: float
    batch: int
    seed: int
    gen_gap: float
    e_alpha: float
    pmag: dict[str, float]
    beta_hat: float | None = None

    def validate(self) -> None:
        if self.e_alpha < 0 or any(v < 0 for v in self.pmag.values()):
            raise InvalidInputError("complexity statistics must be nonnegative")
        if self.beta_hat is not None and self.beta_hat < 0:
            raise InvalidInputError("beta_hat must be nonnegative")

    def to_json(self) -> str:
        self.validate()
        doc = {
            "run_id": self.run_id,
            "n": self.n,
            "eta": self.eta,
            "batch": self.batch,
            "seed": self.seed,
            "gen_gap": self.gen_gap,
            "e_alpha": self.e_alpha,
            "pmag": dict(sorted(self.pmag.items())),
            "beta_hat": self.beta_hat,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        doc = json.loads(text)
        record = cls(
            run_id=doc["run_id"],
            n=int(doc["n"]),
            eta=float(doc["eta"]),
            batch=int(doc["batch"]),
            seed=int(doc["seed"]),
            gen_gap=float(doc["gen_gap"]),
            e_alpha=float(doc["e_alpha"]),
            pmag={k: float(v) for k, v in doc["pmag"].items()},
            beta_hat=None if doc.get("beta_hat") is None else float(doc["beta_hat"]),
        )
        record.validate()
        return record


def _join_ids(ids: np.ndarray) -> str:
    return ",".join(str(int(i)) for i in ids)


def _split_ids(text: str) -> np.ndarray:
    if text == "":
        return np.zeros(0, dtype=np.int64)
    return np.array([int(p) for p in text.split(",")], dtype=np.int64)


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    meta = dict(traj.meta)
    meta["iteration_ids"] = _join_ids(traj.iteration_ids)
    manifest = ArtifactManifest(role="trajectory", shape=traj.points.shape, metadata=meta)
    write_artifact(manifest, traj.points, path)


def load_trajectory(path: str | Path) -> Trajectory:
    manifest, matrix = read_artifact(path)
    if manifest.role != "trajectory":
        raise InvalidInputError(f"artifact {path} has role {manifest.role!r}, not trajectory")
    meta = dict(manifest.metadata)
    ids_text = meta.pop("iteration_ids", "")
    ids = _split_ids(ids_text) if ids_text else np.arange(matrix.shape[0], dtype=np.int64)
    return Trajectory(points=matrix, iteration_ids=ids, meta=meta)


def save_loss_matrix(losses: LossMatrix, path: str | Path) -> None:
    meta = {
        "iteration_ids": _join_ids(losses.iteration_ids),
        "sample_ids": _join_ids(losses.sample_ids),
        "split": losses.split,
    }
    manifest = ArtifactManifest(role="loss_matrix", shape=losses.values.shape, metadata=meta)
    write_artifact(manifest, losses.values, path)


def load_loss_matrix(path: str | Path) -> LossMatrix:
    manifest, matrix = read_artifact(path)
    if manifest.role != "loss_matrix":
        raise InvalidInputError(f"artifact {path} has role {manifest.role!r}, not loss_matrix")
    meta = manifest.metadata
    try:
        return LossMatrix(
            values=matrix,
            iteration_ids=_split_ids(meta["iteration_ids"]),
            sample_ids=_split_ids(meta["sample_ids"]),
            split=meta["split"],
        )
    except KeyError as exc:
        raise InvalidInputError(f"loss-matrix artifact {path} lacks metadata key {exc}") from exc
