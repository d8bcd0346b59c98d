"""Shared pytest fixtures for the test suite."""

import numpy as np
import pandas as pd
import pytest

from surroval import config
from surroval.simulate import Scenario, reference_model1_params, reference_model2_params, simulate_model1, simulate_model2
from surroval.utils import parallel


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """
    Isolate every test from the caller's environment.

    Drops SURROVAL_* variables, clears the active config file values and
    the thread override so get_config() only sees what the test sets.
    """
    for key in ("SURROVAL_THREADS", "SURROVAL_LOG_LEVEL", "SURROVAL_CONFIG", "SURROVAL_DATA_DIR"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setattr(config, "_CONFIG_FILE_VALUES", {})
    monkeypatch.setattr(parallel, "_THREAD_OVERRIDE", None)


@pytest.fixture()
def tte_csv(tmp_path):
    """A small valid surrogate/final endpoint file with two trials."""
    rows = [
        # patientID, trialID, trt, timeS, statusS, timeT, statusT
        (11, 5, 1, 100, 1, 400, 1),
        (12, 5, 0, 200, 0, 200, 1),
        (13, 5, 1, 300, 1, 300, 1),
        (21, 9, 0, 50, 1, 500, 0),
        (22, 9, 1, 150, 1, 450, 1),
        (23, 9, 0, 600, 0, 600, 0),
    ]
    df = pd.DataFrame(rows, columns=["patientID", "trialID", "trt", "timeS", "statusS", "timeT", "statusT"])
    path = tmp_path / "tte.csv"
    df.to_csv(path, index=False)
    return path


@pytest.fixture()
def longi_csvs(tmp_path):
    """Survival table (with centers and a categorical covariate) plus its measurements."""
    surv = pd.DataFrame(
        {
            "id": [7, 3, 5, 9],
            "time": [2.0, 3.0, 1.5, 4.0],
            "status": [1, 0, 1, 0],
            "trt": [1, 0, 1, 0],
            "center": [20, 10, 10, 20],
            "age": ["<60", "60-69", ">69", "<60"],
        }
    )
    longi = pd.DataFrame(
        {
            "id": [3, 3, 5, 7, 7, 7, 9],
            "timevar": [0.0, 1.0, 0.0, 0.0, 0.5, 1.5, 0.0],
            "value": [3.1, 2.9, 4.0, 3.5, 3.2, 3.0, 2.0],
        }
    )
    path_surv = tmp_path / "surv.csv"
    path_longi = tmp_path / "longi.csv"
    surv.to_csv(path_surv, index=False)
    longi.to_csv(path_longi, index=False)
    return path_surv, path_longi


@pytest.fixture()
def small_tte_dataset():
    """Three simulated trials of 30 subjects under the reference scenario."""
    sc = Scenario(k_trials=3, n_per_trial=30, params=reference_model1_params(), admin_censoring=5.0, seed=11)
    return simulate_model1(sc)


@pytest.fixture()
def small_longi_dataset():
    """Three simulated centers of 15 subjects, measurements every half time unit."""
    sc = Scenario(
        k_trials=3,
        n_per_trial=15,
        params=reference_model2_params(),
        admin_censoring=6.0,
        seed=12,
        schedule_step=0.5,
    )
    return simulate_model2(sc)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
