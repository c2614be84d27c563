"""Windowed Lloyd–Taylor parameter estimation from nighttime flux pairs.

Every 5 days, the respiration curve is fitted by damped Gauss–Newton
(Levenberg–Marquardt style) to the (T_air, NEE) night pairs of the
surrounding 15-day window, with multi-start over E0 and parameter clamping
after each step. Timestamps inherit the estimate of their 5-day block,
piecewise-constant; underpopulated or degenerate windows carry the previous
estimate forward and are flagged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import E0_MAX, E0_MIN, RespirationParams, T0_C, TREF_C

WINDOW_DAYS = 15.0
STEP_DAYS = 5.0
MIN_NIGHT_RECORDS = 30
RB_MIN = 1e-6
MULTI_START_E0 = (100.0, 200.0, 300.0)
MAX_ITERATIONS = 200


def _model(e0: float, rb: float, t_air: np.ndarray) -> np.ndarray:
    return rb * np.exp(e0 * (1.0 / (TREF_C - T0_C) - 1.0 / (t_air - T0_C)))


def _clamp(e0: float, rb: float) -> tuple[float, float]:
    return float(np.clip(e0, E0_MIN, E0_MAX)), max(rb, RB_MIN)


def fit_lloyd_taylor(t_air: np.ndarray, nee: np.ndarray,
                     starts=MULTI_START_E0) -> tuple[float, float, float, bool]:
    """Least-squares (E0, rb) fit; returns (e0, rb, cost, ok)."""
    t_air = np.asarray(t_air, dtype=np.float64)
    nee = np.asarray(nee, dtype=np.float64)
    if t_air.size < 2 or float(np.ptp(t_air)) < 0.5:
        # E0 unidentifiable without temperature spread
        rb = max(float(np.median(nee)), RB_MIN) if nee.size else 1.0
        return 200.0, rb, np.inf, False

    best = None
    for e0_start in starts:
        rb_start = max(float(np.median(nee)) / max(
            float(np.mean(np.exp(e0_start * (1.0 / (TREF_C - T0_C) - 1.0 / (t_air - T0_C))))), 1e-12), RB_MIN)
        e0, rb = _clamp(e0_start, rb_start)
        lam = 1e-3
        resid = nee - _model(e0, rb, t_air)
        cost = float(resid @ resid)
        for _ in range(MAX_ITERATIONS):
            pred = _model(e0, rb, t_air)
            resid = nee - pred
            # analytic Jacobian of the residual
            d_e0 = -pred * (1.0 / (TREF_C - T0_C) - 1.0 / (t_air - T0_C))
            d_rb = -pred / rb
            j = np.stack([d_e0, d_rb], axis=1)
            jtj = j.T @ j
            g = j.T @ resid
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)) + 1e-12 * np.eye(2), -g)
            except np.linalg.LinAlgError:
                break
            e0_new, rb_new = _clamp(e0 + step[0], rb + step[1])
            resid_new = nee - _model(e0_new, rb_new, t_air)
            cost_new = float(resid_new @ resid_new)
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                e0, rb, cost = e0_new, rb_new, cost_new
                lam = max(lam / 3.0, 1e-12)
                if rel < 1e-12:
                    break
            else:
                lam *= 10.0
                if lam > 1e8:
                    break
        if best is None or cost < best[2]:
            best = (e0, rb, cost)
    return best[0], best[1], best[2], True


@dataclass
class WindowedParams:
    """Piecewise-constant (E0, rb) estimates on a 5-day grid."""

    block_starts_s: np.ndarray
    e0: np.ndarray
    rb: np.ndarray
    flagged: np.ndarray   # True where carried forward / degenerate

    def lookup(self, timestamps_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ts = np.asarray(timestamps_s, dtype=np.float64)
        idx = np.searchsorted(self.block_starts_s, ts, side="right") - 1
        idx = np.clip(idx, 0, len(self.e0) - 1)
        return self.e0[idx], self.rb[idx]

    def lookup_params(self, t_s: float) -> RespirationParams:
        e0, rb = self.lookup(np.array([t_s]))
        return RespirationParams(float(e0[0]), float(rb[0]))


def estimate_params_windowed(timestamps_s: np.ndarray, t_air: np.ndarray,
                             nee: np.ndarray, night: np.ndarray,
                             window_days: float = WINDOW_DAYS,
                             step_days: float = STEP_DAYS,
                             min_records: int = MIN_NIGHT_RECORDS) -> WindowedParams:
    ts = np.asarray(timestamps_s, dtype=np.float64)
    t_air = np.asarray(t_air, dtype=np.float64)
    nee = np.asarray(nee, dtype=np.float64)
    night = np.asarray(night, dtype=bool)
    usable = night & np.isfinite(nee) & np.isfinite(t_air)

    t0, t1 = float(ts.min()), float(ts.max())
    step_s = step_days * 86400.0
    half_window_s = window_days * 86400.0 / 2.0
    starts = np.arange(t0, t1 + step_s, step_s)

    e0s, rbs, flags = [], [], []
    prev: tuple[float, float] | None = None
    for start in starts:
        center = start + step_s / 2.0
        sel = usable & (ts >= center - half_window_s) & (ts < center + half_window_s)
        ok = False
        if int(sel.sum()) >= min_records:
            e0, rb, _, ok = fit_lloyd_taylor(t_air[sel], nee[sel])
        if ok:
            prev = (e0, rb)
            flags.append(False)
        else:
            if prev is None:
                prev = (200.0, 1.0)  # neutral default before the first good fit
            flags.append(True)
        e0s.append(prev[0])
        rbs.append(prev[1])
    return WindowedParams(starts, np.array(e0s), np.array(rbs), np.array(flags))
