"""
Pytest tests for data loading, validation and transformation.

Covers:
  - load_tte_dataset  (columns, id remapping, time scaling, errors)
  - recode_composite
  - subsample
  - write_tte_dataset  (reload reproduces the dataset)
  - load_longitudinal  (centers, categorical covariates, errors)
"""

import pandas as pd
import pytest

from surroval.data import load_longitudinal, load_tte_dataset, recode_composite, subsample, write_tte_dataset
from surroval.errors import (
    DuplicateSurvivalRow,
    InputError,
    InvariantViolation,
    MissingColumn,
    NonNumericCell,
    OrphanMeasurement,
)


def _write(tmp_path, df, name="data.csv"):
    path = tmp_path / name
    df.to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# load_tte_dataset
# ---------------------------------------------------------------------------


class TestLoadTTE:
    """Surrogate/final endpoint table."""

    def test_ids_are_contiguous_and_mapped_back(self, tte_csv):
        ds = load_tte_dataset(tte_csv)
        assert ds.n_subjects == 6
        assert ds.n_trials == 2
        assert sorted(ds.frame["patient_id"]) == [1, 2, 3, 4, 5, 6]
        assert ds.trial_map == {1: 5, 2: 9}
        assert ds.patient_map[1] == 11
        assert ds.patient_map[6] == 23

    def test_rows_ordered_by_trial(self, tte_csv):
        ds = load_tte_dataset(tte_csv)
        assert list(ds.frame["trial_id"]) == [1, 1, 1, 2, 2, 2]
        assert [len(idx) for idx in ds.trial_indices()] == [3, 3]

    def test_time_scale_applied_to_both_endpoints(self, tte_csv):
        ds = load_tte_dataset(tte_csv, time_scale=1 / 365)
        first = ds.frame.iloc[0]
        assert first["time_s"] == pytest.approx(100 / 365)
        assert first["time_t"] == pytest.approx(400 / 365)

    def test_days_to_years(self, tmp_path):
        df = pd.DataFrame(
            {
                "patientID": [1, 2],
                "trialID": [1, 1],
                "trt": [0, 1],
                "timeS": [4636, 100],
                "statusS": [0, 1],
                "timeT": [4636, 200],
                "statusT": [0, 1],
            }
        )
        ds = load_tte_dataset(_write(tmp_path, df), time_scale=1 / 365)
        assert ds.frame["time_t"].max() == pytest.approx(12.7014, abs=1e-4)

    def test_missing_column(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv).drop(columns=["statusT"])
        with pytest.raises(MissingColumn) as exc:
            load_tte_dataset(_write(tmp_path, df, "bad.csv"))
        assert exc.value.column == "statusT"

    def test_non_numeric_cell_reports_row(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv).astype({"timeT": object})
        df.loc[2, "timeT"] = "abc"
        with pytest.raises(NonNumericCell) as exc:
            load_tte_dataset(_write(tmp_path, df, "bad.csv"))
        assert exc.value.row == 3
        assert exc.value.column == "timeT"

    def test_surrogate_after_final_rejected(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv)
        df.loc[0, "timeS"] = 900
        with pytest.raises(InvariantViolation, match="timeS exceeds timeT"):
            load_tte_dataset(_write(tmp_path, df, "bad.csv"))

    def test_status_must_be_binary(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv)
        df.loc[1, "statusS"] = 2
        with pytest.raises(InvariantViolation, match="statusS|status_s"):
            load_tte_dataset(_write(tmp_path, df, "bad.csv"))

    def test_single_arm_rejected(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv)
        df["trt"] = 1
        with pytest.raises(InvariantViolation, match="both treatment arms"):
            load_tte_dataset(_write(tmp_path, df, "bad.csv"))

    def test_missing_file_is_input_error(self, tmp_path):
        with pytest.raises(InputError, match="not found"):
            load_tte_dataset(tmp_path / "nope.csv")

    def test_text_covariate_becomes_indicators(self, tmp_path, tte_csv):
        df = pd.read_csv(tte_csv)
        df["stage"] = ["I", "II", "III", "I", "II", "I"]
        ds = load_tte_dataset(_write(tmp_path, df, "cov.csv"))
        assert ds.covariates == ("stage_II", "stage_III")
        assert ds.covariate_groups == {"stage": ["stage_II", "stage_III"]}
        assert ds.covariate_matrix().sum(axis=0).tolist() == [2.0, 1.0]


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------


class TestTransforms:
    """Composite recoding, subsampling and writing back."""

    def test_recode_censors_tied_surrogate_events(self, tte_csv):
        ds = load_tte_dataset(tte_csv)
        recoded = recode_composite(ds)
        # patient 13: surrogate event at the final event time
        row = recoded.frame[recoded.frame["patient_id"] == 3].iloc[0]
        assert row["status_s"] == 0
        assert recoded.recoded
        assert int(recoded.frame["status_s"].sum()) == int(ds.frame["status_s"].sum()) - 1

    def test_recode_leaves_source_untouched(self, tte_csv):
        ds = load_tte_dataset(tte_csv)
        recode_composite(ds)
        assert int(ds.frame["status_s"].sum()) == 4

    def test_subsample_renormalizes_ids(self, small_tte_dataset):
        sub = subsample(small_tte_dataset, 0.2, seed=1)
        assert sub.n_subjects == round(0.2 * small_tte_dataset.n_subjects)
        assert sorted(sub.frame["patient_id"]) == list(range(1, sub.n_subjects + 1))
        assert sorted(sub.frame["trial_id"].unique()) == list(range(1, sub.n_trials + 1))

    def test_subsample_is_seeded(self, small_tte_dataset):
        a = subsample(small_tte_dataset, 0.5, seed=3)
        b = subsample(small_tte_dataset, 0.5, seed=3)
        pd.testing.assert_frame_equal(a.frame, b.frame)

    def test_subsample_fraction_range(self, small_tte_dataset):
        with pytest.raises(InvariantViolation):
            subsample(small_tte_dataset, 0.0)

    def test_write_then_load(self, tmp_path, small_tte_dataset):
        path = write_tte_dataset(small_tte_dataset, tmp_path / "out.csv")
        again = load_tte_dataset(path)
        pd.testing.assert_frame_equal(
            again.frame.reset_index(drop=True), small_tte_dataset.frame.reset_index(drop=True), check_dtype=False
        )


# ---------------------------------------------------------------------------
# load_longitudinal
# ---------------------------------------------------------------------------


class TestLoadLongitudinal:
    """Survival table joined with repeated measurements."""

    def test_centers_and_id_order(self, longi_csvs):
        ds = load_longitudinal(*longi_csvs)
        assert ds.has_centers
        assert ds.n_centers == 2
        assert ds.center_map == {1: 10, 2: 20}
        # center 10 holds ids 3 and 5, center 20 holds 7 and 9
        assert [ds.id_map[i] for i in range(1, 5)] == [3, 5, 7, 9]
        assert [len(g) for g in ds.group_indices()] == [2, 2]

    def test_measurements_follow_new_ids(self, longi_csvs):
        ds = load_longitudinal(*longi_csvs)
        counts = ds.measurements.groupby("id").size().to_dict()
        assert counts == {1: 2, 2: 1, 3: 3, 4: 1}
        assert ds.n_measurements == 7

    def test_categorical_covariate(self, longi_csvs):
        ds = load_longitudinal(*longi_csvs)
        assert ds.surv_covariates == ("age_<60", "age_>69")

    def test_without_centers_one_group_per_subject(self, tmp_path, longi_csvs):
        surv = pd.read_csv(longi_csvs[0]).drop(columns=["center"])
        path = _write(tmp_path, surv, "nocenter.csv")
        ds = load_longitudinal(path, longi_csvs[1])
        assert not ds.has_centers
        assert len(ds.group_indices()) == ds.n_subjects

    def test_duplicate_survival_row(self, tmp_path, longi_csvs):
        surv = pd.read_csv(longi_csvs[0])
        surv = pd.concat([surv, surv.iloc[[0]]])
        with pytest.raises(DuplicateSurvivalRow) as exc:
            load_longitudinal(_write(tmp_path, surv, "dup.csv"), longi_csvs[1])
        assert exc.value.subject_id == 7

    def test_orphan_measurement(self, tmp_path, longi_csvs):
        longi = pd.read_csv(longi_csvs[1])
        longi.loc[len(longi)] = [42, 0.0, 1.0]
        with pytest.raises(OrphanMeasurement) as exc:
            load_longitudinal(longi_csvs[0], _write(tmp_path, longi, "orphan.csv"))
        assert exc.value.subject_id == 42

    def test_measurement_after_follow_up(self, tmp_path, longi_csvs):
        longi = pd.read_csv(longi_csvs[1])
        longi.loc[2, "timevar"] = 10.0
        with pytest.raises(InvariantViolation, match="after the subject's follow-up"):
            load_longitudinal(longi_csvs[0], _write(tmp_path, longi, "late.csv"))

    def test_missing_value_column(self, tmp_path, longi_csvs):
        longi = pd.read_csv(longi_csvs[1]).drop(columns=["value"])
        with pytest.raises(MissingColumn):
            load_longitudinal(longi_csvs[0], _write(tmp_path, longi, "novalue.csv"))
