"""Synthetic half-hourly flux-tower records driven by the respiration ODE.

Air temperature is the exact antiderivative of the diurnal rate model plus a
seasonal trend. Because the ODE right-hand side is the total time derivative
of the respiration curve, its exact integral is NEE(t) = R_eco(T(t)); NEE is
generated from that closed form plus seeded Gaussian noise. Global radiation
follows a clipped solar curve (so the nighttime filter behaves like real
data); the remaining channels are plausible correlated filler, independent of
the noise level used for NEE.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..rng import stream
from .physics import (
    SECONDS_PER_DAY,
    STEP_SECONDS,
    DiurnalTempModel,
    RespirationParams,
    reco,
)

FLUX_COLUMNS = ["NEE", "H", "Tau", "RH", "VPD", "Rg", "Ustar", "Tsoil1", "Tsoil2", "Tair"]
TIMESTAMP_COLUMN = "timestamp"
SOLAR_PEAK_WM2 = 850.0
SOLAR_NOON_FRACTION = 0.5  # local noon at 12:00


@dataclass
class ParamSchedule:
    """Respiration parameters over time, linear between day anchors."""

    days: list[float]
    e0: list[float]
    rb: list[float]

    @classmethod
    def constant(cls, e0: float, rb: float) -> "ParamSchedule":
        return cls([0.0], [e0], [rb])

    def at_day(self, day: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        day = np.asarray(day, dtype=np.float64)
        return (np.interp(day, self.days, self.e0),
                np.interp(day, self.days, self.rb))

    def to_dict(self) -> dict:
        return {"days": list(self.days), "e0": list(self.e0), "rb": list(self.rb)}


@dataclass
class SynthConfig:
    days: int = 60
    noise_sigma: float = 0.0
    schedule: ParamSchedule = field(default_factory=lambda: ParamSchedule.constant(200.0, 2.0))
    t_mean: float = 10.0
    seasonal_amp: float = 5.0
    seasonal_period_days: float = 365.25
    seasonal_phase_days: float = 30.0
    diurnal_amp: float = 10.0
    t_tmax_s: float = 5.0 * 3600.0   # phase reference of the diurnal sinusoid
    # sub-diurnal flux modulation NOT covered by the respiration curve
    # (boundary-layer mixing effects); zero keeps NEE exactly on the curve
    modulation_amp: float = 0.0
    modulation_phase_s: float = 0.0
    # latent multi-day respiration driver (soil moisture / substrate) absent
    # from the measured channels; zero keeps NEE exactly on the curve
    latent_amp: float = 0.0
    latent_tau_days: float = 6.0
    start: str = "2016-01-01T00:00:00"

    def diurnal_model(self) -> DiurnalTempModel:
        return DiurnalTempModel(delta_t_air=self.diurnal_amp, t_tmax=self.t_tmax_s)


def flux_modulation(cfg: SynthConfig, t_s: np.ndarray) -> np.ndarray:
    """Multiplicative night-flux modulation, zero-mean over the night hours."""
    t_s = np.asarray(t_s, dtype=np.float64)
    return cfg.modulation_amp * np.sin(
        2.0 * math.pi * (t_s - cfg.modulation_phase_s) / SECONDS_PER_DAY)


def air_temperature(cfg: SynthConfig, t_s: np.ndarray) -> np.ndarray:
    """Exact antiderivative of the diurnal rate plus the seasonal trend."""
    t_s = np.asarray(t_s, dtype=np.float64)
    seasonal = cfg.seasonal_amp * np.sin(
        2.0 * math.pi * (t_s / SECONDS_PER_DAY - cfg.seasonal_phase_days)
        / cfg.seasonal_period_days)
    diurnal = -0.5 * cfg.diurnal_amp * np.cos(
        2.0 * math.pi * (t_s - cfg.t_tmax_s) / SECONDS_PER_DAY)
    return cfg.t_mean + seasonal + diurnal


def solar_radiation(cfg: SynthConfig, t_s: np.ndarray) -> np.ndarray:
    """Clipped solar curve; negative elevation (night) clamps to zero."""
    t_s = np.asarray(t_s, dtype=np.float64)
    day_frac = (t_s % SECONDS_PER_DAY) / SECONDS_PER_DAY
    elevation = np.sin(2.0 * math.pi * (day_frac - (SOLAR_NOON_FRACTION - 0.25)))
    doy = t_s / SECONDS_PER_DAY
    seasonal_scale = 0.55 + 0.45 * np.cos(
        2.0 * math.pi * (doy - 172.0) / cfg.seasonal_period_days)
    return np.maximum(0.0, SOLAR_PEAK_WM2 * elevation) * seasonal_scale


def _saturation_vapor_pressure_hpa(t_c: np.ndarray) -> np.ndarray:
    return 6.1078 * np.exp(17.27 * t_c / (t_c + 237.3))


def _ar1(rng: np.random.Generator, n: int, rho: float, sigma: float) -> np.ndarray:
    noise = rng.normal(0.0, sigma, size=n)
    out = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc = rho * acc + noise[i]
        out[i] = acc
    return out


def synth_flux_generate(cfg: SynthConfig, seed: int) -> pd.DataFrame:
    """Half-hourly flux records for `cfg.days` days, fully seeded."""
    if cfg.days < 1:
        raise ValueError("days must be >= 1")
    n = int(cfg.days * SECONDS_PER_DAY / STEP_SECONDS)
    t_s = np.arange(n) * STEP_SECONDS
    rng = stream(seed, "flux")

    t_air = air_temperature(cfg, t_s)
    rg = solar_radiation(cfg, t_s)
    e0, rb = cfg.schedule.at_day(t_s / SECONDS_PER_DAY)
    resp = np.empty(n)
    for i in range(n):  # params vary per record; curve evaluated exactly
        resp[i] = reco(RespirationParams(float(e0[i]), float(rb[i])), t_air[i])
    resp *= 1.0 + flux_modulation(cfg, t_s)
    if cfg.latent_amp > 0.0:
        rho = math.exp(-STEP_SECONDS / (cfg.latent_tau_days * SECONDS_PER_DAY))
        resp += cfg.latent_amp * _ar1(rng, n, rho, math.sqrt(1.0 - rho * rho))
    nee = resp + rng.normal(0.0, cfg.noise_sigma, size=n)

    rh = np.clip(80.0 - 1.2 * (t_air - cfg.t_mean) + _ar1(rng, n, 0.95, 1.2), 25.0, 100.0)
    vpd = _saturation_vapor_pressure_hpa(t_air) * (1.0 - rh / 100.0)
    h = 0.35 * rg - 18.0 + _ar1(rng, n, 0.9, 4.0)
    ustar = np.abs(0.25 + _ar1(rng, n, 0.9, 0.04)) + 0.05
    tau = 1.2 * ustar ** 2
    alpha1, alpha2 = 0.05, 0.01
    tsoil1 = np.empty(n)
    tsoil2 = np.empty(n)
    acc1 = acc2 = t_air[0]
    for i in range(n):  # lagged smoothed soil temperatures
        acc1 = (1 - alpha1) * acc1 + alpha1 * t_air[i]
        acc2 = (1 - alpha2) * acc2 + alpha2 * t_air[i]
        tsoil1[i] = acc1 + 0.3
        tsoil2[i] = acc2 + 0.6

    timestamps = pd.date_range(cfg.start, periods=n, freq="30min")
    return pd.DataFrame({
        TIMESTAMP_COLUMN: timestamps.strftime("%Y-%m-%dT%H:%M:%S"),
        "NEE": nee, "H": h, "Tau": tau, "RH": rh, "VPD": vpd, "Rg": rg,
        "Ustar": ustar, "Tsoil1": tsoil1, "Tsoil2": tsoil2, "Tair": t_air,
    })
