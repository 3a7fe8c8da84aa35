"""Subcommands and exit statuses of the command-line client."""

import csv

import pytest
from conftest import write_config

from eqaug import CommandTree
from eqaug.__main__ import main
from eqaug.storage import read_trajectory


def run(*argv):
    return CommandTree().run(list(argv))


def read_rows(filepath):
    with open(filepath, "r", encoding="utf-8", newline="") as file:
        return list(csv.reader(file))


class TestErrors:
    """Failures mapped to exit statuses."""

    def test_usage(self, workspace):
        assert run("frobnicate") == 2
        assert run("flow", "--mode", "sideways") == 2
        assert run() == 2

    def test_missing_config(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert run("basis") == 2
        assert "Missing TOML configuration file" in capsys.readouterr().err

    def test_unknown_key(self, workspace, capsys):
        write_config(workspace, dynamics={"speed": 2.0})
        assert run("basis") == 2
        assert "'dynamics.speed'" in capsys.readouterr().err

    def test_unknown_dataset_is_reported(self, workspace):
        write_config(workspace, data={"dataset": "cifar"})
        assert run("basis") == 2

    def test_incompatible_support_fails_verification(self, workspace, capsys):
        write_config(workspace, network={"support": [[0, 0], [0, 1]]})
        assert run("verify") == 1
        rows = read_rows(workspace / "results" / "checks.csv")
        assert rows[0] == ["name", "passed", "residual", "tolerance"]
        assert [row[:2] for row in rows[1:]] == [["compatibility", "false"]]
        assert "0/1 checks passed" in capsys.readouterr().out

    def test_divergence(self, workspace):
        write_config(
            workspace,
            logging={"type": "file", "file": {"path": "eqaug.log"}},
        )
        status = run(
            "flow", "--mode", "regularized_augmented", "--gamma", "1e4", "--seed", "0"
        )
        assert status == 3
        filepath = workspace / "results" / "flow_regularized_augmented_g10000_s0.csv"
        _, trajectory_status = read_trajectory(str(filepath))
        assert trajectory_status == "diverged"
        log = (workspace / "eqaug.log").read_text()
        assert "[warning] flow: step size 0.01 times gamma 10000 is at least 1" in log
        assert "[warning] flow: Trajectory diverged at step" in log

    def test_main(self, workspace, capsys):
        assert main(["basis"]) == 0
        assert capsys.readouterr().out.startswith("dim T L: 82\n")


class TestCommands:
    """Outputs of the subcommands."""

    def test_basis(self, workspace, capsys):
        assert run("basis") == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[:3] == ["dim T L: 82", "dim T E: 22", "dim T E-perp: 60"]
        assert lines[3].startswith("commutator norm: ")
        assert not (workspace / "results").exists()

    def test_flow(self, workspace):
        assert run("flow", "--mode", "augmented", "--mode", "equivariant") == 0
        results = workspace / "results"
        assert sorted(path.name for path in results.iterdir()) == [
            "flow_augmented_g1_s0.csv",
            "flow_augmented_g1_s1.csv",
            "flow_equivariant_g1_s0.csv",
            "flow_equivariant_g1_s1.csv",
        ]
        records, status = read_trajectory(str(results / "flow_equivariant_g1_s1.csv"))
        assert status == "ok"
        assert [record.step for record in records] == [0, 5, 10]
        assert max(record.dist_E for record in records) < 1e-12

    def test_flow_overrides(self, workspace):
        assert run("--output", "other", "--seed", "4", "flow", "--gamma", "0.5") == 0
        names = sorted(path.name for path in (workspace / "other").iterdir())
        assert names == [
            "flow_augmented_g0.5_s4.csv",
            "flow_equivariant_g0.5_s4.csv",
            "flow_regularized_augmented_g0.5_s4.csv",
        ]

    def test_global_options_after_subcommand(self, workspace):
        status = run("flow", "--seed", "3", "--output", "late", "--mode", "augmented")
        assert status == 0
        names = sorted(path.name for path in (workspace / "late").iterdir())
        assert names == ["flow_augmented_g1_s3.csv"]
        assert not (workspace / "results").exists()

    def test_options_on_both_sides_of_subcommand(self, workspace):
        assert run("--seed", "1", "basis", "--seed", "2") == 0
        assert run("basis", "--jobs", "two") == 2

    def test_sgd(self, workspace):
        assert run("sgd", "--mode", "nominal") == 0
        records, _ = read_trajectory(
            str(workspace / "results" / "sgd_nominal_g1_s0.csv")
        )
        assert [record.step for record in records] == [0, 1, 2, 3]

    def test_sweep(self, workspace):
        assert run("sweep") == 0
        results = workspace / "results"
        for mode in ("augmented", "nominal"):
            for seed in (0, 1):
                assert (results / f"sgd_{mode}_g1_s{seed}.csv").exists()
        rows = read_rows(results / "medians.csv")
        assert rows[0] == ["mode", "gamma", "step", "median_dist_E"]
        assert len(rows) == 1 + 2 * 4
        assert [row[0] for row in rows[1:]] == ["augmented"] * 4 + ["nominal"] * 4
        assert [int(row[2]) for row in rows[1:5]] == [0, 1, 2, 3]

    @pytest.mark.slow
    def test_verify(self, workspace, capsys):
        assert run("verify") == 0
        rows = read_rows(workspace / "results" / "checks.csv")
        names = [row[0] for row in rows[1:]]
        assert len(names) == 14
        assert names[0] == "compatibility"
        assert names[-1] == "gronwall[1]"
        assert "invariance_control" in names
        assert any(name.startswith("remark2") for name in names)
        assert all(row[1] == "true" for row in rows[1:])
        assert "14/14 checks passed" in capsys.readouterr().out

    @pytest.mark.slow
    def test_sweep_penalty_ordering(self, workspace):
        """Linear classifier on the orientation dependent task."""
        write_config(
            workspace,
            network={"channels": []},
            data={"dataset": "synth_asym", "limit": 200},
            dynamics={"gamma_list": [1e-4, 1e-2, 1.0, 1e2], "perturb_scale": 0.1},
            sgd={"lr": 5e-3, "batch_size": 10, "epochs": 100},
            run={"seeds": [0, 1, 2, 3, 4], "output_dir": "results"},
        )
        assert run("sweep") == 0
        curves = {}
        for mode, gamma, _, median in read_rows(
            workspace / "results" / "medians.csv"
        )[1:]:
            curves.setdefault((mode, float(gamma)), []).append(float(median))
        initial = curves["augmented", 1e-4][0]
        final = {key: curve[-1] for key, curve in curves.items()}
        augmented = [final["augmented", gamma] for gamma in (1e-4, 1e-2, 1.0, 1e2)]
        assert all(a >= b for a, b in zip(augmented, augmented[1:]))
        for mode in ("augmented", "nominal"):
            assert final[mode, 1e2] < 0.05 * curves[mode, 1e2][0]
        assert final["augmented", 1.0] < final["nominal", 1.0]
        assert final["augmented", 1e-4] > 0.5 * initial

    @pytest.mark.slow
    def test_parallel_runs_match_serial_runs(self, workspace):
        assert run("--output", "serial", "flow") == 0
        assert run("--output", "parallel", "--jobs", "2", "flow") == 0
        for path in (workspace / "serial").iterdir():
            parallel = workspace / "parallel" / path.name
            assert parallel.read_text() == path.read_text()
