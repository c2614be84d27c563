"""Flux CSV ingestion, feature encoding, and supervised sample assembly.

Feature vector (29 columns): the nine climate channels, hour-of-day and
day-of-year sine/cosine pairs, month one-of-12 and season one-of-4. Only the
climate channels are standardized; the encodings stay raw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .fit import WindowedParams, estimate_params_windowed
from .physics import STEP_SECONDS, nee_ode_rhs_arrays
from .synth import FLUX_COLUMNS, TIMESTAMP_COLUMN
from .targets import finite_diff_targets, night_mask

CLIMATE_CHANNELS = ["Tair", "Rg", "RH", "VPD", "Ustar", "Tsoil1", "Tsoil2", "H", "Tau"]
N_CLIMATE = len(CLIMATE_CHANNELS)
SEASON_OF_MONTH = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1,
                   6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}
N_NEE_FEATURES = N_CLIMATE + 4 + 12 + 4


def write_flux_csv(frame: pd.DataFrame, path: str):
    cols = [TIMESTAMP_COLUMN] + FLUX_COLUMNS
    frame[cols].to_csv(path, index=False, float_format="%.10g", na_rep="NaN")


def read_flux_csv(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in [TIMESTAMP_COLUMN] + FLUX_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"flux file lacks columns {missing}")
    validate_flux_frame(frame)
    return frame


def timestamps_seconds(frame: pd.DataFrame) -> np.ndarray:
    ts = pd.to_datetime(frame[TIMESTAMP_COLUMN])
    return ts.astype("int64").to_numpy() / 1e9


def validate_flux_frame(frame: pd.DataFrame):
    ts = timestamps_seconds(frame)
    step = np.diff(ts)
    if np.any(step <= 0):
        raise ValueError("timestamps must strictly increase")
    if np.any(np.abs(np.round(step / STEP_SECONDS) * STEP_SECONDS - step) > 1e-6):
        raise ValueError("timestamps must sit on the 30-minute grid")
    rh = frame["RH"].to_numpy(dtype=np.float64)
    if np.any((rh < 0) | (rh > 100)):  # NaN compares False: missing is allowed
        raise ValueError("RH outside [0, 100]")
    rg = frame["Rg"].to_numpy(dtype=np.float64)
    if np.any(rg < 0):
        raise ValueError("Rg must be non-negative")


def build_features(frame: pd.DataFrame) -> np.ndarray:
    n = len(frame)
    ts = pd.to_datetime(frame[TIMESTAMP_COLUMN])
    climate = frame[CLIMATE_CHANNELS].to_numpy(dtype=np.float64)
    hour = ts.dt.hour.to_numpy() + ts.dt.minute.to_numpy() / 60.0
    doy = ts.dt.dayofyear.to_numpy().astype(np.float64)
    hour_angle = 2.0 * np.pi * hour / 24.0
    doy_angle = 2.0 * np.pi * doy / 365.25
    enc = np.stack([np.sin(hour_angle), np.cos(hour_angle),
                    np.sin(doy_angle), np.cos(doy_angle)], axis=1)
    month = ts.dt.month.to_numpy()
    month_onehot = np.zeros((n, 12))
    month_onehot[np.arange(n), month - 1] = 1.0
    season_onehot = np.zeros((n, 4))
    seasons = np.array([SEASON_OF_MONTH[m] for m in month])
    season_onehot[np.arange(n), seasons] = 1.0
    return np.concatenate([climate, enc, month_onehot, season_onehot], axis=1)


def feature_scaler(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean/std over climate channels (encodings pass through unscaled),
    plus the activity mask zeroing columns with no training variance."""
    mean = np.zeros(features.shape[1])
    std = np.ones(features.shape[1])
    mean[:N_CLIMATE] = features[:, :N_CLIMATE].mean(axis=0)
    std[:N_CLIMATE] = features[:, :N_CLIMATE].std(axis=0)
    std[std < 1e-9] = 1.0
    active = (features.std(axis=0) >= 1e-9).astype(np.float64)
    return mean, std, active


@dataclass
class NeeDataset:
    """Night-only supervised samples with intermediate-variable labels."""

    timestamps_s: np.ndarray
    features: np.ndarray
    t_air: np.ndarray
    nee_t: np.ndarray
    nee_next: np.ndarray
    dnee_dt: np.ndarray
    dtdt: np.ndarray
    e0_label: np.ndarray
    rb_label: np.ndarray
    physics_pred: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nee_t)


def estimate_labels(frame: pd.DataFrame) -> WindowedParams:
    ts = timestamps_seconds(frame)
    return estimate_params_windowed(
        ts,
        frame["Tair"].to_numpy(dtype=np.float64),
        frame["NEE"].to_numpy(dtype=np.float64),
        night_mask(frame["Rg"].to_numpy(dtype=np.float64)),
    )


def build_nee_dataset(frame: pd.DataFrame, params: WindowedParams) -> NeeDataset:
    """Samples where the record and its successor are both night, on-grid,
    with finite climate channels; rows with missing NEE are fill targets,
    not training samples."""
    ts = timestamps_seconds(frame)
    nee = frame["NEE"].to_numpy(dtype=np.float64)
    t_air = frame["Tair"].to_numpy(dtype=np.float64)
    rg = frame["Rg"].to_numpy(dtype=np.float64)
    features = build_features(frame)

    night = night_mask(rg)
    dnee, dtair, valid = finite_diff_targets(ts, nee, t_air)
    next_night = np.zeros_like(night)
    next_night[:-1] = night[1:]
    feats_ok = np.all(np.isfinite(features), axis=1)
    keep = night & next_night & valid & feats_ok
    idx = np.flatnonzero(keep)

    e0_lab, rb_lab = params.lookup(ts[idx])
    rhs = nee_ode_rhs_arrays(e0_lab, rb_lab, t_air[idx], dtair[idx])
    physics_pred = nee[idx] + rhs * STEP_SECONDS
    return NeeDataset(
        timestamps_s=ts[idx],
        features=features[idx],
        t_air=t_air[idx],
        nee_t=nee[idx],
        nee_next=nee[idx + 1],
        dnee_dt=dnee[idx],
        dtdt=dtair[idx],
        e0_label=e0_lab,
        rb_label=rb_lab,
        physics_pred=physics_pred,
    )


def split_by_day(frame: pd.DataFrame, train_days: float) -> tuple[pd.DataFrame, pd.DataFrame]:
    """First `train_days` of records train; the remainder tests."""
    ts = timestamps_seconds(frame)
    cut = ts[0] + train_days * 86400.0
    train = frame[ts < cut].reset_index(drop=True)
    test = frame[ts >= cut].reset_index(drop=True)
    return train, test


def split_interleaved_days(frame: pd.DataFrame, period_days: int = 5,
                           test_slot: int | None = None) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Every `period_days`-th day tests, the rest train.

    Mirrors the year-based protocol's property that test records share their
    seasonal phase with training data; a contiguous tail split would make
    every calendar encoding extrapolative at short desk-scale spans.
    """
    if test_slot is None:
        test_slot = period_days - 1
    ts = timestamps_seconds(frame)
    day_index = np.floor((ts - ts[0]) / 86400.0).astype(int)
    test_mask = day_index % period_days == test_slot
    train = frame[~test_mask].reset_index(drop=True)
    test = frame[test_mask].reset_index(drop=True)
    return train, test


def split_by_year(frame: pd.DataFrame, last_train_year: int) -> tuple[pd.DataFrame, pd.DataFrame]:
    years = pd.to_datetime(frame[TIMESTAMP_COLUMN]).dt.year
    train = frame[years <= last_train_year].reset_index(drop=True)
    test = frame[years > last_train_year].reset_index(drop=True)
    return train, test
