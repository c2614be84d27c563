"""Artificial gaps in the nighttime NEE series, filled by iterated forecasts.

A gap is a contiguous wall-clock span (daily through quarterly) whose night
records lose their NEE; the filler rolls one-step Euler forecasts from the
last observed value before the gap, multiplying each step's derivative by the
actual interval to the next night record (30 minutes within a night, longer
across the day boundary).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..metrics import kl_divergence, mmd, r2_score, wasserstein_1d
from ..rng import stream
from ..training import mae_loss
from .data import build_features, timestamps_seconds
from .targets import night_mask

GAP_SCALE_DAYS = {"daily": 1.0, "weekly": 7.0, "monthly": 30.0, "quarterly": 90.0}
DEFAULT_GAP_COUNTS = {"daily": 6, "weekly": 3, "monthly": 2, "quarterly": 1}


@dataclass
class NightSeries:
    """Night records with observed NEE, in time order."""

    timestamps_s: np.ndarray
    nee: np.ndarray
    features: np.ndarray
    t_air: np.ndarray
    iso: np.ndarray   # timestamp strings for reports

    @property
    def n(self) -> int:
        return len(self.nee)


def build_night_series(frame: pd.DataFrame) -> NightSeries:
    ts = timestamps_seconds(frame)
    rg = frame["Rg"].to_numpy(dtype=np.float64)
    nee = frame["NEE"].to_numpy(dtype=np.float64)
    features = build_features(frame)
    keep = night_mask(rg) & np.isfinite(nee) & np.all(np.isfinite(features), axis=1)
    idx = np.flatnonzero(keep)
    return NightSeries(ts[idx], nee[idx], features[idx],
                       frame["Tair"].to_numpy(dtype=np.float64)[idx],
                       frame["timestamp"].to_numpy()[idx])


class ModelFiller:
    """Derivative estimates from a trained model's output head."""

    def __init__(self, model):
        self.model = model

    def derivatives(self, series: NightSeries, idx: np.ndarray) -> np.ndarray:
        extra = {"t_air": series.t_air[idx, None],
                 "nee_t": np.zeros((idx.size, 1))}
        out = self.model.forward_batch(series.features[idx], extra)
        return out["output"][:, 0]


class TrueDerivativeFiller:
    """Oracle: the discrete ground-truth derivative between night records."""

    def derivatives(self, series: NightSeries, idx: np.ndarray) -> np.ndarray:
        dt = series.timestamps_s[idx + 1] - series.timestamps_s[idx]
        return (series.nee[idx + 1] - series.nee[idx]) / dt


class PersistenceFiller:
    """Zero derivative: the last observation persists through the gap."""

    def derivatives(self, series: NightSeries, idx: np.ndarray) -> np.ndarray:
        return np.zeros(idx.size)


def place_gaps(series: NightSeries, scale: str, seed: int,
               n_gaps: int | None = None) -> list[tuple[int, int, bool]]:
    """Non-overlapping (start, end, shortened) index spans for one scale."""
    if scale not in GAP_SCALE_DAYS:
        raise ValueError(f"unknown gap scale {scale!r}")
    span_s = GAP_SCALE_DAYS[scale] * 86400.0
    count = DEFAULT_GAP_COUNTS[scale] if n_gaps is None else n_gaps
    rng = stream(seed, f"gaps/{scale}")
    t_lo = series.timestamps_s[1]
    t_hi = series.timestamps_s[-1]
    starts = np.sort(rng.uniform(t_lo, t_hi, size=count))
    gaps: list[tuple[int, int, bool]] = []
    last_end = 0
    for t0 in starts:
        i0 = int(np.searchsorted(series.timestamps_s, t0, side="left"))
        i1 = int(np.searchsorted(series.timestamps_s, t0 + span_s, side="left"))
        shortened = t0 + span_s > t_hi
        i0 = max(i0, 1)
        if i0 <= last_end or i1 <= i0:  # overlapping or empty: skip
            continue
        gaps.append((i0, i1, shortened))
        last_end = i1
    return gaps


def gapfill_evaluate(filler, series: NightSeries, scale: str, seed: int,
                     n_gaps: int | None = None) -> tuple[dict, pd.DataFrame]:
    """Fill every gap of one scale and score the filled values."""
    gaps = place_gaps(series, scale, seed, n_gaps)
    prediction = series.nee.copy()
    was_gap = np.zeros(series.n, dtype=bool)
    preds_all: list[np.ndarray] = []
    truth_all: list[np.ndarray] = []
    for i0, i1, _ in gaps:
        steps = np.arange(i0 - 1, i1 - 1)
        d = filler.derivatives(series, steps)
        dt = series.timestamps_s[steps + 1] - series.timestamps_s[steps]
        filled = series.nee[i0 - 1] + np.cumsum(d * dt)
        prediction[i0:i1] = filled
        was_gap[i0:i1] = True
        preds_all.append(filled)
        truth_all.append(series.nee[i0:i1])
    report = {"scale": scale, "n_gaps": len(gaps)}
    if preds_all:
        preds = np.concatenate(preds_all)
        truth = np.concatenate(truth_all)
        report.update({
            "mae": mae_loss(preds, truth),
            "r2": r2_score(preds, truth),
            "mmd": mmd(preds, truth),
            "wasserstein": wasserstein_1d(preds, truth),
            "kl": kl_divergence(preds, truth),
        })
    else:
        report.update({"mae": None, "r2": None, "mmd": None,
                       "wasserstein": None, "kl": None})
    filled_frame = pd.DataFrame({
        "timestamp": series.iso,
        "truth": series.nee,
        "prediction": prediction,
        "was_gap": was_gap.astype(int),
    })
    return report, filled_frame
