"""
Loading, validation and transformation of meta-analytic trial data.

Two CSV layouts are read:
  - surrogate/final time-to-event table, one row per subject:
    patientID, trialID, trt, timeS, statusS, timeT, statusT [, covariates...]
  - longitudinal pair: survival table (id, time, status, trt [, center], covariates...)
    and measurement table (id, timevar, value [, covariates...])

Ids are remapped to contiguous 1..N / 1..K and the original values kept in
a mapping. Text covariates become reference-coded indicator columns, with
the alphabetically first level as reference.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DuplicateSurvivalRow,
    InputError,
    InvariantViolation,
    MissingColumn,
    NonNumericCell,
    OrphanMeasurement,
)

logger = logging.getLogger(__name__)

TTE_COLUMNS = {
    "patientID": "patient_id",
    "trialID": "trial_id",
    "trt": "trt",
    "timeS": "time_s",
    "statusS": "status_s",
    "timeT": "time_t",
    "statusT": "status_t",
}
SURV_COLUMNS = {"id": "id", "time": "time_t", "status": "status_t", "trt": "trt"}
LONGI_COLUMNS = {"id": "id", "timevar": "timevar", "value": "value"}
CENTER_COLUMN = "center"


@dataclass(frozen=True)
class SubjectRecord:
    patient_id: int
    trial_id: int
    trt: int
    time_s: float
    status_s: int
    time_t: float
    status_t: int
    covariates: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True, eq=False)
class SurrogacyDataset:
    """One row per subject, ordered by (trial_id, patient_id)."""

    frame: pd.DataFrame
    covariates: tuple[str, ...] = ()
    covariate_groups: dict = field(default_factory=dict)
    time_scale: float = 1.0
    patient_map: dict = field(default_factory=dict)
    trial_map: dict = field(default_factory=dict)
    recoded: bool = False

    @property
    def n_subjects(self) -> int:
        return len(self.frame)

    @property
    def n_trials(self) -> int:
        return int(self.frame["trial_id"].max()) if len(self.frame) else 0

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    def covariate_matrix(self) -> np.ndarray:
        if not self.covariates:
            return np.zeros((self.n_subjects, 0))
        return self.frame[list(self.covariates)].to_numpy(dtype=float)

    def trial_indices(self) -> list[np.ndarray]:
        """Row positions of each trial, in trial-id order."""
        trial = self.column("trial_id")
        return [np.flatnonzero(trial == k) for k in range(1, self.n_trials + 1)]

    def records(self) -> list[SubjectRecord]:
        cov = self.covariate_matrix()
        out = []
        for i, row in enumerate(self.frame.itertuples(index=False)):
            out.append(
                SubjectRecord(
                    patient_id=int(row.patient_id),
                    trial_id=int(row.trial_id),
                    trt=int(row.trt),
                    time_s=float(row.time_s),
                    status_s=int(row.status_s),
                    time_t=float(row.time_t),
                    status_t=int(row.status_t),
                    covariates=tuple(zip(self.covariates, cov[i].tolist(), strict=True)),
                )
            )
        return out


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    survival: pd.DataFrame
    measurements: pd.DataFrame
    surv_covariates: tuple[str, ...] = ()
    long_covariates: tuple[str, ...] = ()
    covariate_groups: dict = field(default_factory=dict)
    id_map: dict = field(default_factory=dict)
    center_map: dict = field(default_factory=dict)
    time_scale: float = 1.0

    @property
    def n_subjects(self) -> int:
        return len(self.survival)

    @property
    def has_centers(self) -> bool:
        return "center_id" in self.survival.columns

    @property
    def n_centers(self) -> int:
        return int(self.survival["center_id"].max()) if self.has_centers else 0

    @property
    def n_measurements(self) -> int:
        return len(self.measurements)

    def group_indices(self) -> list[np.ndarray]:
        """Survival-row positions per center, or one group per subject without centers."""
        if not self.has_centers:
            return [np.array([i]) for i in range(self.n_subjects)]
        center = self.survival["center_id"].to_numpy()
        return [np.flatnonzero(center == k) for k in range(1, self.n_centers + 1)]


# -------------------------
# Column helpers
# -------------------------


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise InputError(f"data file not found: {path}")
    df = pd.read_csv(path, skipinitialspace=True)
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _require(df: pd.DataFrame, columns, path) -> None:
    for col in columns:
        if col not in df.columns:
            raise MissingColumn(col, path)


def _numeric(df: pd.DataFrame, columns) -> pd.DataFrame:
    """Coerce mandatory columns to numbers; the first bad cell raises NonNumericCell."""
    out = df.copy()
    for col in columns:
        values = pd.to_numeric(out[col], errors="coerce")
        bad = values.isna()
        if bad.any():
            pos = int(np.flatnonzero(bad.to_numpy())[0])
            raise NonNumericCell(pos + 1, col, df[col].iloc[pos])
        out[col] = values
    return out


def _binary(df: pd.DataFrame, columns) -> None:
    for col in columns:
        bad = ~df[col].isin([0, 1])
        if bad.any():
            pos = int(np.flatnonzero(bad.to_numpy())[0])
            raise InvariantViolation(f"column '{col}' must be 0/1", df.iloc[pos].to_dict())


def _positive(df: pd.DataFrame, columns) -> None:
    for col in columns:
        bad = ~(df[col] > 0)
        if bad.any():
            pos = int(np.flatnonzero(bad.to_numpy())[0])
            raise InvariantViolation(f"column '{col}' must be > 0", df.iloc[pos].to_dict())


def _expand_covariates(df: pd.DataFrame, columns) -> tuple[pd.DataFrame, tuple[str, ...], dict]:
    """Numeric covariates pass through; text covariates become reference-coded indicators."""
    blocks, names, groups = [], [], {}
    for col in columns:
        series = df[col]
        numeric = pd.to_numeric(series, errors="coerce")
        if numeric.notna().all():
            blocks.append(numeric.astype(float).rename(col))
            names.append(col)
            groups[col] = [col]
            continue
        if series.isna().any():
            pos = int(np.flatnonzero(series.isna().to_numpy())[0])
            raise NonNumericCell(pos + 1, col, series.iloc[pos])
        levels = sorted(series.astype(str).unique())
        dummies = []
        for level in levels[1:]:
            name = f"{col}_{level}"
            blocks.append((series.astype(str) == level).astype(float).rename(name))
            dummies.append(name)
        names.extend(dummies)
        groups[col] = dummies
        logger.debug("Covariate %s coded with reference level %r", col, levels[0])
    if not blocks:
        return pd.DataFrame(index=df.index), (), {}
    return pd.concat(blocks, axis=1), tuple(names), groups


def _remap(values: pd.Series) -> tuple[pd.Series, dict]:
    originals = sorted(values.unique())
    forward = {orig: new for new, orig in enumerate(originals, start=1)}
    return values.map(forward).astype(int), {new: orig for orig, new in forward.items()}


# -------------------------
# Time-to-event surrogate data
# -------------------------


def load_tte_dataset(path, time_scale: float = 1.0) -> SurrogacyDataset:
    """
    Read the 7-column surrogate/final endpoint CSV.

    All times are multiplied by `time_scale` (e.g. 1/365 for days to years).
    """
    if not time_scale > 0:
        raise InvariantViolation(f"time_scale must be positive, got {time_scale}")
    raw = _read_csv(path)
    _require(raw, TTE_COLUMNS, path)
    df = _numeric(raw, TTE_COLUMNS)
    extra = [c for c in raw.columns if c not in TTE_COLUMNS]
    cov_frame, cov_names, groups = _expand_covariates(raw, extra)

    frame = df[list(TTE_COLUMNS)].rename(columns=TTE_COLUMNS)
    frame["time_s"] = frame["time_s"].astype(float) * time_scale
    frame["time_t"] = frame["time_t"].astype(float) * time_scale
    frame = pd.concat([frame, cov_frame], axis=1)

    ds = _finish_tte(frame, cov_names, groups, time_scale, original_ids=True)
    n_events_s = int(ds.frame["status_s"].sum())
    n_events_t = int(ds.frame["status_t"].sum())
    logger.info(
        "Loaded %d subjects in %d trials from %s (%d surrogate events, %d final events)",
        ds.n_subjects,
        ds.n_trials,
        path,
        n_events_s,
        n_events_t,
    )
    return ds


def _finish_tte(frame, cov_names, groups, time_scale, original_ids, recoded=False) -> SurrogacyDataset:
    _binary(frame, ["trt", "status_s", "status_t"])
    _positive(frame, ["time_s", "time_t"])
    bad = frame["time_s"] > frame["time_t"]
    if bad.any():
        pos = int(np.flatnonzero(bad.to_numpy())[0])
        raise InvariantViolation("timeS exceeds timeT", frame.iloc[pos].to_dict())
    dup = frame["patient_id"].duplicated()
    if dup.any():
        pos = int(np.flatnonzero(dup.to_numpy())[0])
        raise InvariantViolation("patientID must be unique", frame.iloc[pos].to_dict())
    if frame["trt"].nunique() < 2:
        raise InvariantViolation("both treatment arms must be present")

    frame = frame.copy()
    frame["trial_id"], trial_map = _remap(frame["trial_id"])
    frame = frame.sort_values(["trial_id", "patient_id"], kind="mergesort").reset_index(drop=True)
    frame["patient_id"], patient_map = _remap(frame["patient_id"])
    for col in ("patient_id", "trial_id", "trt", "status_s", "status_t"):
        frame[col] = frame[col].astype(int)
    if not original_ids:
        patient_map, trial_map = {}, {}
    return SurrogacyDataset(
        frame=frame,
        covariates=tuple(cov_names),
        covariate_groups=dict(groups),
        time_scale=time_scale,
        patient_map=patient_map,
        trial_map=trial_map,
        recoded=recoded,
    )


def recode_composite(ds: SurrogacyDataset) -> SurrogacyDataset:
    """
    Censor surrogate events recorded on the day of the final event
    (composite endpoints such as disease-free survival count death as an event).
    """
    frame = ds.frame.copy()
    tie = (frame["time_s"] == frame["time_t"]) & (frame["status_s"] == 1)
    frame.loc[tie, "status_s"] = 0
    if tie.any():
        logger.info("Recoded %d surrogate events tied with the final event time", int(tie.sum()))
    return replace(ds, frame=frame, recoded=True)


def subsample(ds: SurrogacyDataset, fraction: float, seed: int = 0) -> SurrogacyDataset:
    """Random subset of subjects without replacement, ids renormalized."""
    if not 0 < fraction <= 1:
        raise InvariantViolation(f"subsample fraction must be in (0, 1], got {fraction}")
    n_keep = max(1, int(round(fraction * ds.n_subjects)))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(ds.n_subjects, size=n_keep, replace=False))
    frame = ds.frame.iloc[keep].reset_index(drop=True)
    out = _finish_tte(frame, ds.covariates, ds.covariate_groups, ds.time_scale, original_ids=True, recoded=ds.recoded)
    # keep the link back to the ids of the source file
    patient_map = {new: ds.patient_map.get(old, old) for new, old in out.patient_map.items()}
    trial_map = {new: ds.trial_map.get(old, old) for new, old in out.trial_map.items()}
    logger.info("Subsampled %d of %d subjects (fraction %.3f)", out.n_subjects, ds.n_subjects, fraction)
    return replace(out, patient_map=patient_map, trial_map=trial_map)


def write_tte_dataset(ds: SurrogacyDataset, path) -> Path:
    """Write in the loader's column layout; reloading with time_scale=1 reproduces the dataset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reverse = {v: k for k, v in TTE_COLUMNS.items()}
    out = ds.frame[list(reverse) + list(ds.covariates)].rename(columns=reverse)
    out.to_csv(path, index=False)
    return path


# -------------------------
# Longitudinal surrogate data
# -------------------------


def load_longitudinal(path_surv, path_longi, time_scale: float = 1.0) -> LongitudinalDataset:
    """Read and join the survival table and the repeated-measurement table."""
    surv_raw = _read_csv(path_surv)
    long_raw = _read_csv(path_longi)
    _require(surv_raw, SURV_COLUMNS, path_surv)
    _require(long_raw, LONGI_COLUMNS, path_longi)

    mandatory = list(SURV_COLUMNS) + ([CENTER_COLUMN] if CENTER_COLUMN in surv_raw.columns else [])
    surv = _numeric(surv_raw, mandatory)
    longi = _numeric(long_raw, LONGI_COLUMNS)

    surv_extra = [c for c in surv_raw.columns if c not in mandatory]
    long_extra = [c for c in long_raw.columns if c not in LONGI_COLUMNS]
    surv_cov, surv_names, surv_groups = _expand_covariates(surv_raw, surv_extra)
    long_cov, long_names, long_groups = _expand_covariates(long_raw, long_extra)

    survival = surv[mandatory].rename(columns={**SURV_COLUMNS, CENTER_COLUMN: "center_id"})
    survival = pd.concat([survival, surv_cov], axis=1)
    measurements = pd.concat([longi[list(LONGI_COLUMNS)], long_cov], axis=1)
    survival["time_t"] = survival["time_t"].astype(float) * time_scale
    measurements["timevar"] = measurements["timevar"].astype(float) * time_scale

    ds = _finish_longitudinal(
        survival, measurements, surv_names, long_names, {**surv_groups, **long_groups}, time_scale
    )
    logger.info(
        "Loaded %d subjects (%d events), %d repeated measurements, %s",
        ds.n_subjects,
        int(ds.survival["status_t"].sum()),
        ds.n_measurements,
        f"{ds.n_centers} centers" if ds.has_centers else "no center information",
    )
    return ds


def _finish_longitudinal(survival, measurements, surv_names, long_names, groups, time_scale) -> LongitudinalDataset:
    dup = survival["id"].duplicated()
    if dup.any():
        raise DuplicateSurvivalRow(survival["id"][dup].iloc[0])
    known = set(survival["id"])
    orphan = ~measurements["id"].isin(known)
    if orphan.any():
        raise OrphanMeasurement(measurements["id"][orphan].iloc[0])
    if measurements.empty:
        raise InvariantViolation("the measurement table is empty; the joint model needs at least one measurement")
    _binary(survival, ["trt", "status_t"])
    _positive(survival, ["time_t"])
    if survival["trt"].nunique() < 2:
        raise InvariantViolation("both treatment arms must be present")
    negative = measurements["timevar"] < 0
    if negative.any():
        pos = int(np.flatnonzero(negative.to_numpy())[0])
        raise InvariantViolation("timevar must be >= 0", measurements.iloc[pos].to_dict())
    follow = measurements["id"].map(survival.set_index("id")["time_t"])
    late = measurements["timevar"] > follow
    if late.any():
        pos = int(np.flatnonzero(late.to_numpy())[0])
        raise InvariantViolation("measurement taken after the subject's follow-up time", measurements.iloc[pos].to_dict())

    survival = survival.copy()
    measurements = measurements.copy()
    center_map = {}
    if "center_id" in survival.columns:
        survival["center_id"], center_map = _remap(survival["center_id"])
        survival = survival.sort_values(["center_id", "id"], kind="mergesort").reset_index(drop=True)
    else:
        survival = survival.sort_values("id", kind="mergesort").reset_index(drop=True)
    # ids follow row order so subject i sits at survival row i - 1
    id_map = {new: orig for new, orig in enumerate(survival["id"].tolist(), start=1)}
    forward = {orig: new for new, orig in id_map.items()}
    survival["id"] = np.arange(1, len(survival) + 1)
    measurements["id"] = measurements["id"].map(forward).astype(int)
    measurements = measurements.sort_values(["id", "timevar"], kind="mergesort").reset_index(drop=True)
    for col in ("trt", "status_t"):
        survival[col] = survival[col].astype(int)
    return LongitudinalDataset(
        survival=survival,
        measurements=measurements,
        surv_covariates=tuple(surv_names),
        long_covariates=tuple(long_names),
        covariate_groups=dict(groups),
        id_map=id_map,
        center_map=center_map,
        time_scale=time_scale,
    )


def write_longitudinal(ds: LongitudinalDataset, path_surv, path_longi) -> tuple[Path, Path]:
    path_surv, path_longi = Path(path_surv), Path(path_longi)
    path_surv.parent.mkdir(parents=True, exist_ok=True)
    surv_cols = ["id", "time_t", "status_t", "trt"] + (["center_id"] if ds.has_centers else [])
    surv = ds.survival[surv_cols + list(ds.surv_covariates)].rename(
        columns={"time_t": "time", "status_t": "status", "center_id": CENTER_COLUMN}
    )
    surv.to_csv(path_surv, index=False)
    ds.measurements[list(LONGI_COLUMNS) + list(ds.long_covariates)].to_csv(path_longi, index=False)
    return path_surv, path_longi
