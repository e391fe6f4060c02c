import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from trajtopo.cli import main
from trajtopo.errors import InvalidInputError
from trajtopo.pipeline import (
    ExperimentConfig,
    StabilitySettings,
    cell_id,
    config_from_dict,
    load_config,
    run_pipeline,
)

SMALL = dict(
    task="quadratic",
    input_dim=3,
    n_grid=[20, 40],
    eta_grid=[0.05],
    batch_grid=[1],
    seeds=[0, 1],
    iterations=40,
    subsample=30,
    stability=StabilitySettings(J=4, iterations=30, converge_iterations=0, seeds=[0, 1]),
)


def small_config(**overrides) -> ExperimentConfig:
    doc = dict(SMALL)
    doc.update(overrides)
    return ExperimentConfig(**doc)


def tree_digest(root: Path, subdirs=("report", "cells")) -> dict[str, str]:
    out = {}
    for sub in subdirs:
        for path in sorted((root / sub).rglob("*")):
            if path.is_file():
                out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


class TestPipeline:
    def test_single_cell_smoke(self, tmp_path):
        cfg = small_config(n_grid=[25], seeds=[0], stability=None)
        result = run_pipeline(cfg, output_dir=tmp_path / "out")
        assert len(result.records) == 1
        record = result.records[0]
        assert np.isfinite(record.gen_gap)
        assert record.e_alpha >= 0.0
        assert all(v >= 1.0 for v in record.pmag.values())
        assert (tmp_path / "out" / "report" / "summary.json").exists()

    def test_empty_grid_rejected(self):
        with pytest.raises(InvalidInputError):
            small_config(n_grid=[]).validate()

    def test_rerun_skips_and_reproduces(self, tmp_path):
        cfg = small_config()
        first = run_pipeline(cfg, output_dir=tmp_path / "out")
        before = tree_digest(tmp_path / "out")
        second = run_pipeline(cfg, output_dir=tmp_path / "out")
        assert first.computed == 4 and first.skipped == 0
        assert second.computed == 0 and second.skipped == 4
        assert tree_digest(tmp_path / "out") == before

    def test_fresh_runs_byte_identical(self, tmp_path):
        run_pipeline(small_config(), output_dir=tmp_path / "a")
        run_pipeline(small_config(), output_dir=tmp_path / "b")
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_parallel_matches_serial(self, tmp_path):
        run_pipeline(small_config(jobs=1), output_dir=tmp_path / "serial")
        run_pipeline(small_config(jobs=2), output_dir=tmp_path / "parallel")
        assert tree_digest(tmp_path / "serial") == tree_digest(tmp_path / "parallel")

    def test_stability_and_bounds_sections(self, tmp_path):
        result = run_pipeline(small_config(), output_dir=tmp_path / "out")
        assert [r.n for r in result.stability_reports] == [20, 40]
        assert {row["n"] for row in result.bound_rows} == {20, 40}
        for row in result.bound_rows:
            assert np.isfinite(row["ealpha_bound"]) and row["ealpha_bound"] >= 0
            assert np.isfinite(row["pmag_bound"]) and row["pmag_bound"] >= 0
        summary = json.loads((tmp_path / "out" / "report" / "summary.json").read_text())
        assert set(summary["per_n_stats"]) == {
            "e_alpha", "pmag_fixed_scale", "pmag_theorem_scale"
        }

    def test_theorem_scale_recorded_per_cell(self, tmp_path):
        result = run_pipeline(small_config(), output_dir=tmp_path / "out")
        assert all("theorem" in r.pmag for r in result.records)

    def test_zero_stability_skips_bounds_but_reports_survive(self, tmp_path):
        """A zero stability coefficient (J = 0) gives no usable bound; the
        grid reports must still be written."""
        cfg = small_config(stability=StabilitySettings(J=0, iterations=20,
                                                       converge_iterations=0))
        result = run_pipeline(cfg, output_dir=tmp_path / "out")
        assert result.bound_rows == []
        assert (tmp_path / "out" / "report" / "grid_e_alpha.csv").exists()
        assert not (tmp_path / "out" / "report" / "grid_pmag_theorem_scale.csv").exists()

    def test_warmup_offsets_recorded_window(self, tmp_path):
        from trajtopo.artifacts import load_trajectory

        cfg = small_config(n_grid=[10], seeds=[0], warmup=25, iterations=30,
                           subsample=1000, stability=None)
        result = run_pipeline(cfg, output_dir=tmp_path / "out")
        traj = load_trajectory(
            tmp_path / "out" / "cells" / result.records[0].run_id / "trajectory"
        )
        assert traj.iteration_ids[0] == 25
        assert traj.iteration_ids[-1] == 55

    def test_config_file_roundtrip(self, tmp_path):
        doc = {
            "task": "quadratic",
            "n_grid": [10],
            "eta_grid": [0.1],
            "seeds": [0],
            "iterations": 20,
            "subsample": 10,
            "stability": {"J": 2, "iterations": 10, "converge_iterations": 0},
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        cfg = load_config(path)
        assert cfg.n_grid == [10]
        assert cfg.stability.J == 2

    def test_unknown_config_key_rejected(self):
        with pytest.raises(InvalidInputError, match="unknown config keys"):
            config_from_dict({"optimizer": "adam"})

    def test_cell_id_stable(self):
        assert cell_id("quadratic", 10, 0.05, 1, 3) == "quadratic-n10-eta0p05-b1-s3"

    def test_numerical_failure_names_the_cell(self, tmp_path):
        from trajtopo.errors import NumericalFailureError

        # a zero learning rate freezes the trajectory, so the empirical
        # Lipschitz constant is undefined for that cell
        cfg = small_config(n_grid=[10], seeds=[0], eta_grid=[0.0], stability=None)
        with pytest.raises(NumericalFailureError, match="quadratic-n10-eta0p0-b1-s0"):
            run_pipeline(cfg, output_dir=tmp_path / "out")


class TestCli:
    def run_cli(self, *argv):
        return main([str(a) for a in argv])

    def test_run_and_report_roundtrip(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "task": "quadratic", "n_grid": [12, 24], "eta_grid": [0.05],
            "seeds": [0, 1], "iterations": 30, "subsample": 20, "input_dim": 2,
        }))
        assert self.run_cli("run", "--config", cfg_path, "--out", tmp_path / "out") == 0
        summary_first = (tmp_path / "out" / "report" / "summary.json").read_bytes()
        assert self.run_cli("report", tmp_path / "out", "--out", tmp_path / "rep2") == 0
        rebuilt = json.loads((tmp_path / "rep2" / "summary.json").read_text())
        original = json.loads(summary_first)
        assert rebuilt["runs"] == original["runs"]
        assert rebuilt["per_n_stats"]["e_alpha"] == original["per_n_stats"]["e_alpha"]

    def test_stage_chain_matches_pipeline(self, tmp_path, capsys):
        """traj-gen + distmat + lifetime-sum/pmag reproduce the pipeline's
        complexity values for the same settings."""
        out = tmp_path / "out"
        cfg = small_config(n_grid=[20], seeds=[3], stability=None, subsample=25)
        result = run_pipeline(cfg, output_dir=out)
        record = result.records[0]

        stage = tmp_path / "stage"
        assert self.run_cli(
            "traj-gen", "--task", "quadratic", "--n", 20, "--eta", 0.05,
            "--seed", 3, "--iterations", 40, "--input-dim", 3, "--out", stage,
        ) == 0
        assert self.run_cli(
            "distmat", stage / "trajectory", "--subsample", 25, "--seed", 3,
            "--out", stage / "dist",
        ) == 0
        capsys.readouterr()
        assert self.run_cli("lifetime-sum", stage / "dist", "--alpha", 1.0) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["e_alpha"] == record.e_alpha
        assert self.run_cli("pmag", stage / "dist", "--scales", "100.0",
                            "--solver", "conjugate_gradient") == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["100.0"]["pmag"] == record.pmag["100.0"]

    def test_pmag_theorem_scale_flag(self, tmp_path, capsys):
        from conftest import distances_of
        from trajtopo.geometry import save_distance_matrix
        from trajtopo.magnitude import pmag_scale, positive_magnitude

        rng = np.random.default_rng(0)
        dist = distances_of(rng.standard_normal((8, 2)))
        save_distance_matrix(dist, tmp_path / "dist")
        assert self.run_cli(
            "pmag", tmp_path / "dist", "--theorem-scale", "1.0,2.0,1.0,0.008",
        ) == 0
        doc = json.loads(capsys.readouterr().out)
        scale = pmag_scale(1.0, 2.0, 1.0, 0.008)
        assert doc[repr(scale)]["pmag"] == positive_magnitude(dist, scale)

    def test_stability_two_artifact_mode(self, tmp_path, capsys):
        from trajtopo.artifacts import LossMatrix, save_loss_matrix
        from trajtopo.stability import estimate_stability

        a = LossMatrix(values=np.array([[0.0], [1.0]]), iteration_ids=[0, 1],
                       sample_ids=[0], split="probe")
        b = LossMatrix(values=np.array([[0.5], [0.9]]), iteration_ids=[0, 1],
                       sample_ids=[0], split="probe")
        save_loss_matrix(a, tmp_path / "a")
        save_loss_matrix(b, tmp_path / "b")
        assert self.run_cli("stability", tmp_path / "a", tmp_path / "b") == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["estimate"] == estimate_stability(a, b)

    def test_stability_config_mode(self, tmp_path, capsys):
        cfg = tmp_path / "stab.json"
        cfg.write_text(json.dumps({
            "task": "quadratic", "n": [10, 20], "J": 2, "seeds": [0],
            "input_dim": 2, "iterations": 15, "step": 0.2,
        }))
        csv_path = tmp_path / "stab.csv"
        assert self.run_cli("stability", "--config", cfg, "--csv", csv_path) == 0
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0].startswith("init_mode,eval_split,n,J")
        assert len(lines) == 3

    def test_bound_subcommand(self, tmp_path, capsys):
        assert self.run_cli(
            "bound", "--theorem", "pmag", "--beta", 1.0, "--loss-bound", 1.0,
            "--lambda", 2.0, "--samples", "1.0",
        ) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["value"] == 4.0

        report = tmp_path / "stab.json"
        report.write_text(json.dumps({"mean": 8.0}))
        assert self.run_cli(
            "bound", "--theorem", "ealpha", "--stability-report", report,
            "--loss-bound", 1.0, "--k-const", 4.0, "--samples", "0.0",
        ) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["value"] == 8.0

    def test_exit_codes(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert self.run_cli("run", "--config", bad, "--out", tmp_path / "o") == 2
        assert self.run_cli("lifetime-sum", tmp_path / "missing") == 2
        empty = tmp_path / "empty.json"
        empty.write_text(json.dumps({"n_grid": []}))
        assert self.run_cli("run", "--config", empty, "--out", tmp_path / "o") == 2

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        """Near-coincident points make the similarity system singular at
        double precision, which must surface as exit code 3."""
        from conftest import distances_of
        from trajtopo.geometry import save_distance_matrix

        dist = distances_of([[0.0], [1e-18], [1.0]])
        save_distance_matrix(dist, tmp_path / "dist")
        assert self.run_cli("pmag", tmp_path / "dist", "--scales", "1.0") == 3

    def test_structured_log_records_cells(self, tmp_path):
        out = tmp_path / "out"
        run_pipeline(small_config(n_grid=[15], seeds=[0], stability=None), output_dir=out)
        entries = [
            json.loads(line)
            for line in (out / "pipeline.log.jsonl").read_text().strip().split("\n")
        ]
        cell_events = [e for e in entries if e["event"] == "cell"]
        assert len(cell_events) == 1
        assert cell_events[0]["skipped"] is False
        assert cell_events[0]["seconds"] >= 0.0

    def test_env_var_output_root(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("TRAJTOPO_OUT", str(tmp_path / "envout"))
        assert self.run_cli(
            "traj-gen", "--task", "quadratic", "--n", 5, "--eta", 0.1,
            "--iterations", 10, "--input-dim", 2,
        ) == 0
        assert (tmp_path / "envout" / "trajectory.bin").exists()

    def test_missing_output_dir_rejected(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("TRAJTOPO_OUT", raising=False)
        assert self.run_cli(
            "traj-gen", "--task", "quadratic", "--n", 5, "--eta", 0.1,
            "--iterations", 10, "--input-dim", 2,
        ) == 2

    def test_set_overrides(self, tmp_path, capsys):
        assert self.run_cli(
            "run", "--task", "quadratic", "--n-grid", "8", "--eta-grid", "0.1",
            "--seeds", "0", "--iterations", 12, "--set", "subsample=10",
            "--set", "input_dim=2", "--set", 'stability={"J":2,"iterations":10,"converge_iterations":0}',
            "--out", tmp_path / "o",
        ) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["runs"] == 1
        assert (tmp_path / "o" / "report" / "stability.csv").exists()

    def test_set_rejects_unknown_key(self, tmp_path, capsys):
        assert self.run_cli(
            "run", "--task", "quadratic", "--set", "momentum=0.9", "--out", tmp_path / "o",
        ) == 2
