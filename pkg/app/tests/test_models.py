"""
Tests for request/response models and runtime settings.
"""

import pytest
from pydantic import ValidationError

from app.config.experiments import get_experiment_box, get_experiment_defaults, get_experiment_ids
from app.config.settings import Settings
from app.models.request import ExperimentConfig, SweepCell, TimeScheme, parse_number
from app.models.response import RunSummary


class TestParseNumber:
    def test_fraction(self):
        assert parse_number("1/8") == 0.125

    def test_plain(self):
        assert parse_number(" 0.25 ") == 0.25
        assert parse_number(3) == 3.0

    def test_scientific(self):
        assert parse_number("1e-3") == pytest.approx(1e-3)

    def test_garbage(self):
        with pytest.raises(ValueError):
            parse_number("one eighth")


class TestExperimentConfig:
    """Validation of a single run."""

    def test_defaults_from_experiment(self):
        config = ExperimentConfig(experiment_id=4, h="1/4", dt="1/16")
        assert config.T_final == 6.0
        assert config.nu == 1.0
        assert config.scheme is TimeScheme.BDF2
        assert config.n_steps == 96

    def test_explicit_values(self):
        config = ExperimentConfig(experiment_id=1, h=0.5, dt=0.25, T_final="1/2", nu=0.5, scheme="bdf1")
        assert config.n_steps == 2
        assert config.scheme.steps == 1

    def test_zero_final_time(self):
        config = ExperimentConfig(experiment_id=1, h=0.5, dt=0.25, T_final=0)
        assert config.n_steps == 0

    def test_unknown_experiment(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=6, h=0.5, dt=0.25)

    def test_h_must_divide_box(self):
        with pytest.raises(ValidationError, match="does not divide"):
            ExperimentConfig(experiment_id=1, h=0.3, dt=0.25)

    def test_merge_box_accepts_half(self):
        # Experiment 5 runs on [-3, 3] x [-2, 2]^2
        assert ExperimentConfig(experiment_id=5, h=0.5, dt=0.125).h == 0.5

    def test_final_time_multiple_of_dt(self):
        with pytest.raises(ValidationError, match="integral multiple"):
            ExperimentConfig(experiment_id=1, h=0.5, dt=0.3)

    def test_non_positive_values(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=1, h=0.5, dt=0.0)
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=1, h=0.5, dt=0.25, nu=0.0)

    def test_unknown_scheme(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment_id=1, h=0.5, dt=0.25, scheme="bdf3")

    def test_sweep_cell_fractions(self):
        cell = SweepCell(h="1/8", dt="1/32")
        assert (cell.h, cell.dt) == (0.125, 0.03125)


class TestExperimentDefaults:
    def test_ids(self):
        assert get_experiment_ids() == [1, 2, 3, 4, 5]

    def test_boxes(self):
        assert get_experiment_box(1) == ((-2.0, 2.0), (-2.0, 2.0), (-2.0, 2.0))
        assert get_experiment_box(5)[0] == (-3.0, 3.0)

    def test_unknown(self):
        with pytest.raises(KeyError):
            get_experiment_defaults(0)

    def test_defaults_are_copies(self):
        defaults = get_experiment_defaults(1)
        defaults["T"] = 99.0
        assert get_experiment_defaults(1)["T"] == 1.0


class TestRunSummary:
    def test_table_row(self):
        summary = RunSummary(
            experiment_id=1, scheme="bdf2", h=0.125, dt=0.03125, T_final=1.0, n_steps=32,
            err_l2_h1=0.37954, err_l2_l2=0.04013, mass_initial=12.5, mass_final=12.4,
            mass_error=0.1, max_iterations=9,
        )
        row = summary.table_row()
        assert "h=0.125" in row
        assert "err_L2(H1)=0.37954" in row
        assert "N=32" in row

    def test_table_row_without_errors(self):
        summary = RunSummary(
            experiment_id=4, scheme="bdf1", h=0.25, dt=0.25, T_final=1.0, n_steps=4,
            mass_initial=1.0, mass_final=1.0, mass_error=0.0,
        )
        assert "err_L2(L2)=-" in summary.table_row()


class TestSettings:
    def test_defaults(self):
        settings = Settings(_env_file=None)
        assert settings.solver_rtol == 1e-6
        assert settings.sign_cleanup_factor == 1e-12

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("TRACEFEM_SOLVER_RTOL", "1e-8")
        monkeypatch.setenv("TRACEFEM_LOG_LEVEL", "debug")
        settings = Settings(_env_file=None)
        assert settings.solver_rtol == 1e-8
        assert settings.log_level == "DEBUG"

    def test_invalid_log_level(self, monkeypatch):
        monkeypatch.setenv("TRACEFEM_LOG_LEVEL", "chatty")
        with pytest.raises(ValidationError):
            Settings(_env_file=None)
