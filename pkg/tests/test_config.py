"""
Pytest tests for configuration loading and validation.

Covers:
  - get_config  (environment before config file before default)
  - load_config_file  (key normalization, missing file)
  - parse_time_grid
  - Model1Config / Model2Config / RunConfig validators
  - build_run_config  (field-named errors)
"""

import pytest
from pydantic import ValidationError

from surroval.config import (
    MediationSettings,
    Model1Config,
    Model2Config,
    build_run_config,
    config_file_values,
    get_config,
    load_config_file,
    parse_time_grid,
)
from surroval.errors import ConfigError

# ---------------------------------------------------------------------------
# Value resolution
# ---------------------------------------------------------------------------


class TestGetConfig:
    """Environment, config file and default precedence."""

    def test_default(self):
        assert get_config("SURROVAL_THREADS", "3") == "3"

    def test_file_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("SURROVAL_THREADS=2\n")
        load_config_file(path)
        assert get_config("SURROVAL_THREADS", "3") == "2"

    def test_environment_wins(self, tmp_path, monkeypatch):
        path = tmp_path / "run.cfg"
        path.write_text("SURROVAL_THREADS=2\n")
        load_config_file(path)
        monkeypatch.setenv("SURROVAL_THREADS", "6")
        assert get_config("SURROVAL_THREADS") == "6"

    def test_keys_normalized(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("pte.nboot=200\nNb-MC=50\n")
        values = load_config_file(path)
        assert values == {"pte_nboot": "200", "nb_mc": "50"}
        assert get_config("pte-nboot") == "200"
        assert config_file_values()["nb_mc"] == "50"

    def test_reload_replaces_values(self, tmp_path):
        first, second = tmp_path / "a.cfg", tmp_path / "b.cfg"
        first.write_text("seed=1\n")
        second.write_text("nb_gh=16\n")
        load_config_file(first)
        load_config_file(second)
        assert get_config("seed") is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            load_config_file(tmp_path / "absent.cfg")
        assert exc.value.field == "config"


class TestParseTimeGrid:
    """start:end:count and comma lists."""

    def test_range(self):
        grid = parse_time_grid("1.5:2:30")
        assert len(grid) == 30
        assert grid[0] == 1.5
        assert grid[-1] == pytest.approx(2.0)

    def test_single_point(self):
        assert parse_time_grid("3:9:1") == [3.0]

    def test_list(self):
        assert parse_time_grid("0.5, 1,2.5") == [0.5, 1.0, 2.5]

    @pytest.mark.parametrize("text", ["1:2", "1:2:0"])
    def test_invalid(self, text):
        with pytest.raises(ValueError):
            parse_time_grid(text)


# ---------------------------------------------------------------------------
# Settings models
# ---------------------------------------------------------------------------


class TestModelConfigs:
    """Cross-field rules of the model settings."""

    def test_model1_needs_kappas(self):
        with pytest.raises(ValidationError, match="kappa"):
            Model1Config(kappa_s=10.0)

    def test_model1_auto_kappa(self):
        assert Model1Config(auto_kappa=True).kappa_s is None

    def test_no_trial_frailty_fixes_alpha(self):
        cfg = Model1Config(kappa_s=1.0, kappa_t=1.0, include_trial_frailty=False)
        assert cfg.estimate_alpha is False

    def test_init_values(self):
        cfg = Model1Config(kappa_s=1.0, kappa_t=1.0, init={"theta": 0.3})
        assert cfg.init_value("theta") == 0.3
        assert cfg.init_value("sigma_st") == 0.48

    def test_unknown_init_key(self):
        with pytest.raises(ValidationError, match="unknown"):
            Model1Config(kappa_s=1.0, kappa_t=1.0, init={"rho": 0.1})

    @pytest.mark.parametrize("n_knots", [3, 21])
    def test_knot_range(self, n_knots):
        with pytest.raises(ValidationError):
            Model1Config(kappa_s=1.0, kappa_t=1.0, n_knots=n_knots)

    def test_mediation_with_shared_link(self):
        with pytest.raises(ValidationError, match="shared_random_effects"):
            Model2Config(link="shared_random_effects", mediation=True, hazard="Weibull")

    def test_spline_hazard_needs_kappa(self):
        with pytest.raises(ValidationError, match="kappa"):
            Model2Config(hazard="Splines")
        assert Model2Config(hazard="Weibull").kappa is None

    def test_random_terms(self):
        assert Model2Config(hazard="Weibull", random=["1"]).n_random == 1
        with pytest.raises(ValidationError):
            Model2Config(hazard="Weibull", random=("timevar",))

    def test_pte_times_from_text(self):
        assert MediationSettings(pte_times="1:3:3").pte_times == [1.0, 2.0, 3.0]


class TestBuildRunConfig:
    """Nested dicts into a validated run."""

    def test_valid_fit(self, tmp_path):
        run = build_run_config(
            {
                "command": "fit-tte",
                "data": tmp_path / "data.csv",
                "model1": {"kappa_s": 10.0, "kappa_t": 10.0},
                "integration": {"nb_mc": 50},
            }
        )
        assert run.integration.nb_mc == 50
        assert run.integration.nb_gh == 32
        assert run.limits.maxit == 50

    def test_error_names_field(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            build_run_config({"command": "fit-tte", "data": tmp_path / "d.csv", "integration": {"nb_gh": 200}})
        assert exc.value.field == "integration.nb_gh"

    def test_data_required(self):
        with pytest.raises(ConfigError, match="data path"):
            build_run_config({"command": "fit-tte"})

    @pytest.mark.parametrize(
        "mediation",
        [{}, {"pte_times": [1.0, 2.0], "pte_ntimes": 5}],
    )
    def test_mediation_needs_one_time_source(self, tmp_path, mediation):
        values = {
            "command": "fit-tte",
            "data": tmp_path / "d.csv",
            "model1": {"kappa_s": 1.0, "kappa_t": 1.0, "mediation": True},
            "mediation": mediation,
        }
        with pytest.raises(ConfigError, match="pte_times"):
            build_run_config(values)

    def test_mediation_with_time_count(self, tmp_path):
        run = build_run_config(
            {
                "command": "fit-tte",
                "data": tmp_path / "d.csv",
                "model1": {"kappa_s": 1.0, "kappa_t": 1.0, "mediation": True},
                "mediation": {"pte_ntimes": 10},
            }
        )
        assert run.mediation.pte_ntimes == 10
