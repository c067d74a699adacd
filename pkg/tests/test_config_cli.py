import csv
import json
from pathlib import Path

import numpy as np
import pytest

import kinshell.cli as cli
from kinshell.config import ConfigError, RunConfig, load_config
from kinshell.grid import save_snapshot
from kinshell.initial import homogeneous_anisotropic
from kinshell.moments import compute_moments

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


def write_toml(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


MINIMAL = """
[grid]
dim = 1
cells = [8]
extent = [1.0]
shells = 2
angles = 8
s_max = 1.0

[kernel]
profile = "isotropic"
lambda = 0.5

[damping]
kind = "zero"

[picard]
horizon = 0.25
steps = 8

[initial]
generator = "homogeneous-anisotropic"

[output]
directory = "out"
"""


class TestLoadConfig:
    def test_minimal_config_loads(self, tmp_path):
        cfg = load_config(write_toml(tmp_path, MINIMAL))
        assert cfg.cells == (8,)
        assert cfg.lam == 0.5
        assert cfg.checksum

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.toml")

    def test_toml_syntax_error_reports_line(self, tmp_path):
        path = write_toml(tmp_path, "[grid\ndim = 1\n")
        with pytest.raises(ConfigError, match="line 1|at line 1"):
            load_config(path)

    def test_missing_field_names_path(self, tmp_path):
        broken = MINIMAL.replace('s_max = 1.0\n', "")
        with pytest.raises(ConfigError, match="grid.s_max"):
            load_config(write_toml(tmp_path, broken))

    def test_wrong_type_names_field(self, tmp_path):
        broken = MINIMAL.replace("shells = 2", 'shells = "two"')
        with pytest.raises(ConfigError, match="grid.shells"):
            load_config(write_toml(tmp_path, broken))

    def test_unknown_generator(self, tmp_path):
        broken = MINIMAL.replace("homogeneous-anisotropic", "plasma-sheet")
        with pytest.raises(ConfigError, match="initial.generator"):
            load_config(write_toml(tmp_path, broken))

    def test_unsymmetric_angle_count_rejected(self, tmp_path):
        broken = MINIMAL.replace("angles = 8", "angles = 3")
        with pytest.raises(ConfigError, match="angles"):
            load_config(write_toml(tmp_path, broken))

    def test_max_iter_zero_rejected(self, tmp_path):
        broken = MINIMAL.replace("steps = 8", "steps = 8\nmax_iter = 0")
        with pytest.raises(ConfigError, match="max_iter"):
            load_config(write_toml(tmp_path, broken))

    def test_shipped_configs_parse(self):
        for name in (
            "homogeneous_decay.toml", "beam_relaxation.toml",
            "pure_transport.toml", "convergence_smoke.toml",
        ):
            cfg = load_config(CONFIGS / name)
            assert cfg.steps >= 1

    def test_from_snapshot_round_trip(self, tmp_path):
        base = load_config(write_toml(tmp_path, MINIMAL))
        grid = base.make_grid()
        f = homogeneous_anisotropic(grid, amplitude=2.0, anisotropy=0.3).on_grid(grid)
        save_snapshot(f, tmp_path / "ic")
        cfg_text = MINIMAL.replace(
            'generator = "homogeneous-anisotropic"',
            f'generator = "from-snapshot"\nsnapshot = "{tmp_path / "ic"}"',
        )
        cfg = load_config(write_toml(tmp_path, cfg_text, "snap.toml"))
        f2 = cfg.make_initial_field(cfg.make_grid())
        assert np.array_equal(f2.values, f.values)

    def test_refined_scales_cells_and_steps(self, tmp_path):
        cfg = load_config(write_toml(tmp_path, MINIMAL))
        fine = cfg.refined(4)
        assert fine.cells == (32,) and fine.steps == 32


class TestCmdRun:
    def test_homogeneous_decay_run(self, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["run", "--config", str(CONFIGS / "homogeneous_decay.toml"),
                       "--out", str(out)])
        assert rc == 0
        for name in ("summary.csv", "energy_ledger.csv", "iterate_trace.csv",
                     "moments.csv", "manifest.json", "energy_ledger.png"):
            assert (out / name).exists(), name

        # closed-form oracle for the final density read back from the CSV
        cfg = load_config(CONFIGS / "homogeneous_decay.toml")
        grid = cfg.make_grid()
        f0 = cfg.make_initial_field(grid)
        n0 = float(compute_moments(f0, 0).density.reshape(-1)[0])
        n_exact = n0 / (1 + cfg.damping_c * n0 * cfg.horizon)
        with open(out / "moments.csv") as fh:
            rows = [r for r in csv.DictReader(fh)]
        finals = [float(r["n"]) for r in rows if float(r["t"]) == cfg.horizon]
        assert finals
        assert abs(finals[0] - n_exact) / n_exact < 1e-3

        # snapshots reload into a consistent trajectory
        traj = cli._load_trajectory(out / "snapshots" / "picard")
        assert traj.n_steps == cfg.steps

        # reports work on the finished run directory
        assert cli.main(["energy-report", str(out)]) == 0
        assert (out / "energy_report.csv").exists()
        assert cli.main(["weak-form", str(out)]) == 0
        assert (out / "weak_form.csv").exists()

    def test_invalid_config_exits_nonzero(self, tmp_path):
        bad = write_toml(tmp_path, MINIMAL.replace("steps = 8", "steps = 8\nmax_iter = 0"))
        rc = cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_nonconvergence_exits_nonzero_but_writes_trace(self, tmp_path):
        text = MINIMAL.replace("lambda = 0.5", "lambda = 2.0")
        text = text.replace("steps = 8", "steps = 20\nmax_iter = 2")
        text = text.replace("horizon = 0.25", "horizon = 1.0")
        out = tmp_path / "nc"
        rc = cli.main(["run", "--config", str(write_toml(tmp_path, text)), "--out", str(out)])
        assert rc == 3
        assert (out / "iterate_trace.csv").exists()
        with open(out / "summary.csv") as fh:
            rows = {r["quantity"]: r["value"] for r in csv.DictReader(fh)}
        assert rows["converged"] == "0"


class TestCmdVerifyKernel:
    def test_isotropic_passes_and_reports_law_table(self, tmp_path):
        out = tmp_path / "vk"
        rc = cli.main(["verify-kernel", "--config", str(CONFIGS / "homogeneous_decay.toml"),
                       "--out", str(out)])
        assert rc == 0
        with open(out / "h_law.csv") as fh:
            rows = list(csv.DictReader(fh))
        by_speed = {float(r["speed"]): float(r["computed"]) for r in rows}
        assert by_speed[2.0] == 0.125
        assert by_speed[1.0] == 1.0
        assert by_speed[0.5] == 8.0
        with open(out / "kernel_report.csv") as fh:
            checks = {r["check"]: r for r in csv.DictReader(fh)}
        assert checks["normalization_defect"]["pass"] == "1"
        assert abs(float(checks["reverse_mass"]["value"]) - 1.0) < 1e-12

    def test_corrupted_kernel_fails_named_check(self, tmp_path, monkeypatch, capsys):
        # test hook: inject an unnormalized matrix past the constructor guard
        original = RunConfig.make_kernel

        def corrupted(self, grid):
            kernel = original(self, grid)
            object.__setattr__(kernel, "matrix", kernel.matrix * 1.01)
            return kernel

        monkeypatch.setattr(RunConfig, "make_kernel", corrupted)
        rc = cli.main(["verify-kernel", "--config", str(CONFIGS / "homogeneous_decay.toml"),
                       "--out", str(tmp_path / "vk")])
        assert rc == 1
        assert "normalization_defect" in capsys.readouterr().err


class TestCmdConvergence:
    def test_requires_two_levels(self, tmp_path, capsys):
        rc = cli.main(["convergence", "--config", str(CONFIGS / "convergence_smoke.toml"),
                       "--levels", "1", "--out", str(tmp_path / "cv")])
        assert rc == 2
        assert "at least 2 levels" in capsys.readouterr().err

    def test_memory_guard_refuses_oversized_request(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setattr(cli, "MEMORY_BUDGET_BYTES", 1 << 20)
        rc = cli.main(["convergence", "--config", str(CONFIGS / "convergence_smoke.toml"),
                       "--levels", "3", "--out", str(tmp_path / "cv")])
        assert rc == 2
        assert "GiB" in capsys.readouterr().err

    def test_two_level_study_reports_orders(self, tmp_path):
        out = tmp_path / "cv"
        rc = cli.main(["convergence", "--config", str(CONFIGS / "convergence_smoke.toml"),
                       "--levels", "2", "--out", str(out)])
        assert rc == 0
        with open(out / "convergence.csv") as fh:
            rows = list(csv.DictReader(fh))
        metrics = {r["metric"] for r in rows}
        assert metrics == {
            "transport", "homogeneous_decay", "ledger_residual",
            "weak_form", "picard_vs_splitting_gap",
        }
        assert (out / "convergence.png").exists()


class TestManifest:
    def test_manifest_checksums_match_artifacts(self, tmp_path):
        out = tmp_path / "run"
        rc = cli.main(["run", "--config", str(CONFIGS / "pure_transport.toml"),
                       "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        from kinshell.reports import sha256_file

        for rel, digest in manifest["artifacts"].items():
            assert sha256_file(out / rel) == digest
        assert "lambda" in manifest["config"]
