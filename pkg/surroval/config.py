"""
Configuration for surroval runs.

Values are resolved the same way everywhere: environment variable first,
then the active flat key=value config file, then the built-in default.
Validated settings models accept the dotted argument names with
underscores (n.knots -> n_knots, nb.mc -> nb_mc, pte.nboot -> pte_nboot).
"""

import logging
import os
from pathlib import Path
from typing import Literal

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, Field, ValidationError, root_validator, validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

load_dotenv()

_CONFIG_FILE_VALUES: dict[str, str] = {}


def load_config_file(path) -> dict[str, str]:
    """
    Read a flat key=value config file and make it the active fallback source
    for get_config(). Keys are normalized to lower case with '.' and '-'
    turned into '_' so `pte.nboot`, `pte-nboot` and `pte_nboot` are the same key.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"config file not found: {path}")
    raw = dotenv_values(path)
    values = {_normalize_key(k): v for k, v in raw.items() if v is not None}
    _CONFIG_FILE_VALUES.clear()
    _CONFIG_FILE_VALUES.update(values)
    logger.info("Loaded %d keys from config file %s", len(values), path)
    return dict(values)


def _normalize_key(key: str) -> str:
    return key.strip().lower().replace(".", "_").replace("-", "_")


def get_config(key: str, default=None):
    """
    Get a configuration value from the environment first, then from the
    active config file.

    Args:
        key: Environment variable name (e.g. "SURROVAL_THREADS") or config key.
        default: Returned when neither source defines the key.
    """
    value = os.getenv(key)
    if value is not None:
        return value
    value = _CONFIG_FILE_VALUES.get(_normalize_key(key))
    if value is not None:
        return value
    return default


def config_file_values() -> dict[str, str]:
    return dict(_CONFIG_FILE_VALUES)


class ModelDefaults:
    """Default starting values for the optimizer."""

    MODEL1_INIT = {
        "theta": 1.0,
        "sigma_ss": 0.5,
        "sigma_tt": 0.5,
        "sigma_st": 0.48,
        "gamma": 0.5,
        "alpha": 1.0,
        "zeta": 1.0,
        "betas": 0.5,
        "betat": 0.5,
    }

    MODEL2_INIT = {
        "sigma_nu_mm": 0.5,
        "sigma_nu_tt": 0.5,
        "sigma_nu_mt": 0.0,
        "eta": 0.0,
        "betat": 0.0,
    }

    # log10 kappa grid searched by LCV when --auto-kappa is set
    KAPPA_GRID = tuple(10.0**k for k in range(-2, 9))

    STRENGTH_CUTOFFS = (0.49, 0.72)


# -------------------------
# Settings models
# -------------------------


class OptimizerLimits(BaseModel):
    limparam: float = Field(1e-3, gt=0)
    limlogl: float = Field(1e-3, gt=0)
    limderiv: float = Field(1e-3, gt=0)
    maxit: int = Field(50, ge=1)


class IntegrationSettings(BaseModel):
    nb_mc: int = Field(300, ge=1)
    nb_gh: int = Field(32, ge=1, le=128)
    nb_gh2: int = Field(20, ge=1, le=128)
    n_nodes_adaptive: int = Field(9, ge=1, le=128)
    nb_mc_kendall: int = Field(10000, ge=1)
    seed: int = Field(0, ge=0)
    antithetic: bool = False
    threads: int | None = Field(None, ge=1)


class Model1Config(BaseModel):
    estimate_zeta: bool = True
    estimate_alpha: bool = True
    include_trial_frailty: bool = True
    mediation: bool = False
    g_nknots: int = Field(1, ge=1, le=5)
    n_knots: int = Field(6, ge=4, le=20)
    placement: Literal["equidistant", "percentile"] = "equidistant"
    kappa_s: float | None = Field(None, ge=0)
    kappa_t: float | None = Field(None, ge=0)
    auto_kappa: bool = False
    init: dict[str, float] = Field(default_factory=dict)

    @validator("init")
    def _known_init_keys(cls, value):
        unknown = set(value) - set(ModelDefaults.MODEL1_INIT)
        if unknown:
            raise ValueError(f"unknown initial values {sorted(unknown)}")
        return value

    @root_validator(skip_on_failure=True)
    def _kappa_given(cls, values):
        if not values["auto_kappa"] and (values["kappa_s"] is None or values["kappa_t"] is None):
            raise ValueError("give both kappa_s and kappa_t, or set auto_kappa")
        if values["include_trial_frailty"] is False:
            values["estimate_alpha"] = False
        return values

    def init_value(self, name: str) -> float:
        return float(self.init.get(name, ModelDefaults.MODEL1_INIT[name]))


class Model2Config(BaseModel):
    link: Literal["current_level", "current_slope", "shared_random_effects"] = "current_level"
    random: tuple[str, ...] = ("1", "timevar")
    intercept: bool = True
    hazard: Literal["Splines", "Splines-per", "Weibull"] = "Splines"
    n_knots: int = Field(7, ge=4, le=20)
    kappa: float | None = Field(None, ge=0)
    auto_kappa: bool = False
    mediation: bool = False
    method_gh: Literal["standard", "pseudo_adaptive"] = "pseudo_adaptive"

    @validator("random")
    def _random_terms(cls, value):
        if tuple(value) not in (("1",), ("1", "timevar")):
            raise ValueError('random must be ("1",) or ("1", "timevar")')
        return tuple(value)

    @root_validator(skip_on_failure=True)
    def _consistent(cls, values):
        if values["mediation"] and values["link"] == "shared_random_effects":
            raise ValueError("shared_random_effects link cannot be used with mediation")
        if values["hazard"] != "Weibull" and not values["auto_kappa"] and values["kappa"] is None:
            raise ValueError("give kappa, or set auto_kappa, for spline hazards")
        return values

    @property
    def n_random(self) -> int:
        return len(self.random)


class MediationSettings(BaseModel):
    pte_times: list[float] | None = None
    pte_ntimes: int | None = Field(None, ge=1)
    pte_nmc: int = Field(500, ge=1)
    pte_boot: bool = False
    pte_nboot: int = Field(2000, ge=1)
    pte_boot_nmc: int = Field(500, ge=1)
    tte_floor: float = Field(1e-3, ge=0)

    @validator("pte_times", pre=True)
    def _parse_times(cls, value):
        if isinstance(value, str):
            return parse_time_grid(value)
        return value


class BootstrapSettings(BaseModel):
    nboot_kendall: int = Field(1000, ge=0)
    max_reject_fraction: float = Field(0.5, gt=0, lt=1)


class RunConfig(BaseModel):
    command: Literal["fit-tte", "fit-longi", "simulate", "report"]
    data: Path | None = None
    data_longi: Path | None = None
    out_dir: Path = Path("surroval_out")
    scale: float = Field(1.0, gt=0)
    recode_composite: bool = False
    subsample: float | None = Field(None, gt=0, le=1)
    model1: Model1Config | None = None
    model2: Model2Config | None = None
    integration: IntegrationSettings = Field(default_factory=IntegrationSettings)
    limits: OptimizerLimits = Field(default_factory=OptimizerLimits)
    mediation: MediationSettings = Field(default_factory=MediationSettings)
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    ste_level: float = Field(0.05, gt=0, lt=1)
    ste_include_var: bool = True
    decimals: int = Field(4, ge=0, le=12)
    plots: bool = True

    @root_validator(skip_on_failure=True)
    def _command_inputs(cls, values):
        command = values["command"]
        if command in ("fit-tte", "fit-longi") and values.get("data") is None:
            raise ValueError("data path is required")
        if command == "fit-longi" and values.get("data_longi") is None:
            raise ValueError("data_longi path is required")
        mediation_on = (values.get("model1") and values["model1"].mediation) or (
            values.get("model2") and values["model2"].mediation
        )
        med = values["mediation"]
        if mediation_on and (med.pte_times is None) == (med.pte_ntimes is None):
            raise ValueError("set exactly one of pte_times / pte_ntimes when mediation is on")
        return values


def parse_time_grid(text: str) -> list[float]:
    """
    Parse `start:end:count` (count evenly spaced times from start to end)
    or a comma-separated list of times.
    """
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"time grid '{text}' is not start:end:count")
        start, end, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("time grid count must be >= 1")
        if count == 1:
            return [start]
        step = (end - start) / (count - 1)
        return [start + i * step for i in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def build_run_config(values: dict) -> RunConfig:
    """Validate a nested dict into a RunConfig, turning pydantic errors into ConfigError."""
    try:
        return RunConfig(**values)
    except ValidationError as err:
        first = err.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigError(field, first["msg"]) from err
