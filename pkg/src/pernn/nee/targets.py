"""Finite-difference training targets and the nighttime filter."""
from __future__ import annotations

import numpy as np

from .physics import NIGHT_RG_LIMIT, STEP_SECONDS


def night_mask(rg: np.ndarray) -> np.ndarray:
    """True where global radiation is low enough that photosynthesis ~ 0."""
    return np.asarray(rg, dtype=np.float64) < NIGHT_RG_LIMIT


def finite_diff_targets(timestamps_s: np.ndarray, nee: np.ndarray,
                        t_air: np.ndarray,
                        dt: float = STEP_SECONDS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-sided first differences (dNEE/dt, dT/dt) per record.

    Returns (dnee_dt, dt_dt, valid); the last record and any pair spanning a
    grid gap or missing value has valid=False (excluded, never interpolated).
    """
    ts = np.asarray(timestamps_s, dtype=np.float64)
    nee = np.asarray(nee, dtype=np.float64)
    t_air = np.asarray(t_air, dtype=np.float64)
    n = ts.size
    dnee = np.full(n, np.nan)
    dtair = np.full(n, np.nan)
    valid = np.zeros(n, dtype=bool)
    if n < 2:
        return dnee, dtair, valid
    step = ts[1:] - ts[:-1]
    on_grid = np.abs(step - dt) < 1e-6
    pair_ok = on_grid & np.isfinite(nee[:-1]) & np.isfinite(nee[1:]) \
        & np.isfinite(t_air[:-1]) & np.isfinite(t_air[1:])
    dnee[:-1] = np.where(pair_ok, (nee[1:] - nee[:-1]) / dt, np.nan)
    dtair[:-1] = np.where(pair_ok, (t_air[1:] - t_air[:-1]) / dt, np.nan)
    valid[:-1] = pair_ok
    return dnee, dtair, valid
