"""
Tests for the command-line runner and the experiment orchestrator.
"""

import csv
from unittest.mock import patch

import pytest

from app.main import build_config, build_parser, merge_options, run_experiment_cli
from app.services.orchestration_service import parse_sweep_file
from app.services.time_integrator_service import StepError


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestArguments:
    """Flag parsing, config files and exit codes for bad input."""

    def test_help(self, capsys):
        assert run_experiment_cli(["--help"]) == 0
        assert "--experiment" in capsys.readouterr().out

    def test_unknown_experiment(self):
        assert run_experiment_cli(["--experiment", "9", "--h", "1/2", "--dt", "1/4"]) == 2

    def test_missing_experiment(self, capsys):
        assert run_experiment_cli(["--h", "1/2", "--dt", "1/4"]) == 2
        assert "--experiment is required" in capsys.readouterr().err

    def test_h_not_dividing_box(self):
        assert run_experiment_cli(["--experiment", "1", "--h", "0.3", "--dt", "1/4"]) == 2

    def test_final_time_not_multiple(self):
        assert run_experiment_cli(["--experiment", "1", "--h", "1/2", "--dt", "0.3"]) == 2

    def test_missing_config_file(self, tmp_path):
        missing = tmp_path / "nope.env"
        assert run_experiment_cli(["--experiment", "1", "--config", str(missing)]) == 2

    def test_flags_override_config(self, tmp_path):
        config_file = tmp_path / "run.env"
        config_file.write_text("experiment=2\nh=1/4\ndt=1/16\nT=1/8\ndump-band=true\n")
        args = build_parser().parse_args(["--config", str(config_file), "--h", "1/2"])
        options = merge_options(args)
        assert options["h"] == "1/2"
        assert options["T"] == "1/8"
        assert options["dump_band"] is True
        config = build_config(options)
        assert config.experiment_id == 2
        assert config.h == 0.5
        assert config.n_steps == 2

    def test_runtime_failure_exit_code(self, tmp_path):
        failure = StepError(3, 0.75, RuntimeError("boom"))
        with patch("app.main.experiment_orchestrator") as orchestrator:
            orchestrator.run_single.side_effect = failure
            code = run_experiment_cli(["--experiment", "1", "--h", "1/2", "--dt", "1/4", "--out", str(tmp_path)])
        assert code == 1


class TestSweepFile:
    def test_parse(self, tmp_path):
        path = tmp_path / "cells.txt"
        path.write_text("# h dt\n1/2 1/4\n\n0.25, 0.125  # finer\n")
        cells = parse_sweep_file(path)
        assert [(c.h, c.dt) for c in cells] == [(0.5, 0.25), (0.25, 0.125)]

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "cells.txt"
        path.write_text("1/2 1/4 1\n")
        with pytest.raises(ValueError, match="expected 'h dt'"):
            parse_sweep_file(path)

    def test_empty(self, tmp_path):
        path = tmp_path / "cells.txt"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError):
            parse_sweep_file(path)


class TestEndToEnd:
    """Short runs on the coarsest mesh."""

    def test_single_run_outputs(self, tmp_path, capsys):
        argv = [
            "--experiment", "1", "--h", "1/2", "--dt", "1/4", "--T", "1/2", "--out", str(tmp_path),
            "--snapshot-every", "1", "--dump-mesh", "--dump-matrix", "--dump-band",
        ]
        assert run_experiment_cli(argv) == 0
        assert "exp=1" in capsys.readouterr().out

        steps = read_rows(tmp_path / "steps.csv")
        assert [int(r["n"]) for r in steps] == [0, 1, 2]
        assert all(r["err_l2"] != "" for r in steps)
        assert len(read_rows(tmp_path / "mass.csv")) == 3
        convergence = read_rows(tmp_path / "convergence.csv")
        assert len(convergence) == 1
        assert int(convergence[0]["n_steps"]) == 2
        for name in ("mesh.vtk", "matrix_final.txt", "band_final.txt",
                     "surface_00000.vtk", "surface_00001.vtk", "surface_00002.vtk"):
            assert (tmp_path / name).exists(), name

    def test_runs_are_reproducible(self, tmp_path):
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            argv = ["--experiment", "1", "--h", "1/2", "--dt", "1/4", "--T", "1/2", "--out", str(out)]
            assert run_experiment_cli(argv) == 0
            outputs.append((out / "steps.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_mass_only_experiment(self, tmp_path):
        argv = ["--experiment", "4", "--h", "1/2", "--dt", "1/4", "--T", "1/4", "--out", str(tmp_path)]
        assert run_experiment_cli(argv) == 0
        steps = read_rows(tmp_path / "steps.csv")
        assert all(r["err_l2"] == "" for r in steps)
        assert read_rows(tmp_path / "convergence.csv")[0]["err_l2_l2"] == ""

    def test_sweep(self, tmp_path):
        cells = tmp_path / "cells.txt"
        cells.write_text("1/2 1/4\n1/2 1/8\n")
        out = tmp_path / "sweep"
        argv = ["--experiment", "1", "--sweep", str(cells), "--T", "1/4", "--scheme", "bdf1", "--out", str(out)]
        assert run_experiment_cli(argv) == 0
        rows = read_rows(out / "convergence.csv")
        assert [float(r["dt"]) for r in rows] == [0.25, 0.125]
        assert all(r["scheme"] == "bdf1" for r in rows)
        assert (out / "h0.5_dt0.25" / "steps.csv").exists()
        assert (out / "h0.5_dt0.125" / "steps.csv").exists()
