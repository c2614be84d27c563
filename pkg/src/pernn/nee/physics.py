"""Temperature-driven ecosystem respiration and the NEE evolution equation.

Nighttime NEE is dominated by respiration following the Lloyd–Taylor
Arrhenius-type curve

    R_eco(T) = r_b * exp(E0 * (1/(Tref - T0) - 1/(T - T0)))

so NEE evolves as dNEE/dt = dR_eco/dT * dT/dt, with the air-temperature rate
modeled by a diurnal sinusoid, and half-hourly forecasts stepping
NEE_{t+1} = NEE_t + dNEE/dt * dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import DomainError, Tape
from ..blocks import PhysicsBlock

TREF_C = 15.0           # reference temperature, degC
T0_C = -46.02           # fixed Lloyd-Taylor offset, degC
E0_MIN, E0_MAX = 50.0, 400.0
STEP_SECONDS = 1800.0   # half-hourly measurement grid
SECONDS_PER_DAY = 86400.0
NIGHT_RG_LIMIT = 20.0   # W/m^2; below this GPP is negligible


@dataclass
class RespirationParams:
    """Lloyd–Taylor parameters: temperature sensitivity and base respiration."""

    e0: float
    rb_night: float
    tref: float = TREF_C
    t0: float = T0_C

    def __post_init__(self):
        if not E0_MIN <= self.e0 <= E0_MAX:
            raise DomainError("e0", f"E0 {self.e0} outside [{E0_MIN}, {E0_MAX}]")
        if self.rb_night <= 0.0:
            raise DomainError("rb_night", "base respiration must be > 0")


def _check_tair(t_air, t0: float):
    if np.any(np.asarray(t_air) <= t0):
        raise DomainError("t_air", f"air temperature must exceed T0 = {t0} degC")


def reco(p: RespirationParams, t_air):
    """Ecosystem respiration at air temperature t_air (degC)."""
    _check_tair(t_air, p.t0)
    exponent = p.e0 * (1.0 / (p.tref - p.t0) - 1.0 / (np.asarray(t_air) - p.t0))
    return p.rb_night * np.exp(exponent)


def dreco_dT(p: RespirationParams, t_air):
    """Analytic derivative of reco w.r.t. air temperature."""
    _check_tair(t_air, p.t0)
    t_air = np.asarray(t_air)
    return p.e0 / (t_air - p.t0) ** 2 * reco(p, t_air)


@dataclass
class DiurnalTempModel:
    """Sinusoidal model of the daily air-temperature rate of change."""

    delta_t_air: float              # diurnal amplitude, degC
    t_tmax: float                   # phase reference within the day, s
    t_day: float = SECONDS_PER_DAY

    def __post_init__(self):
        if self.t_day <= 0:
            raise ValueError("t_day must be positive")
        if self.delta_t_air < 0:
            raise ValueError("diurnal amplitude must be >= 0")


def diurnal_dT_dt(m: DiurnalTempModel, t):
    """pi * dT_amp / t_day * sin(2 pi (t - t_tmax) / t_day), degC per second."""
    t = np.asarray(t, dtype=np.float64)
    return math.pi * m.delta_t_air / m.t_day * np.sin(
        2.0 * math.pi * (t - m.t_tmax) / m.t_day
    )


def nee_ode_rhs(p: RespirationParams, t_air, dtdt):
    """dNEE/dt via the chain rule: dR_eco/dT times dT/dt."""
    return dreco_dT(p, t_air) * np.asarray(dtdt)


def forecast_next(nee_t, dnee_dt, dt: float = STEP_SECONDS):
    """Euler step to the next half-hourly NEE value."""
    return np.asarray(nee_t) + np.asarray(dnee_dt) * dt


def reco_arrays(e0, rb, t_air):
    """reco with per-record parameter arrays (windowed estimates)."""
    e0, rb, t_air = (np.asarray(a, dtype=np.float64) for a in (e0, rb, t_air))
    _check_tair(t_air, T0_C)
    return rb * np.exp(e0 * (1.0 / (TREF_C - T0_C) - 1.0 / (t_air - T0_C)))


def nee_ode_rhs_arrays(e0, rb, t_air, dtdt):
    """nee_ode_rhs with per-record parameter arrays."""
    e0, t_air = np.asarray(e0, dtype=np.float64), np.asarray(t_air, dtype=np.float64)
    return e0 / (t_air - T0_C) ** 2 * reco_arrays(e0, rb, t_air) * np.asarray(dtdt)


class NeeOdeBlock(PhysicsBlock):
    """Fixed-operator fragment computing E0/(T-T0)^2 * R_eco * dT/dt."""

    name = "nee_ode"
    intermediate_names = ("e0", "rb_night", "dtdt")
    raw_input_names = ("t_air",)
    domain = {
        "e0": (E0_MIN, E0_MAX),
        "rb_night": (0.0, math.inf),
        "t_air": (T0_C + 1e-9, math.inf),  # strict: 1/(T - T0)
    }

    def build(self, t: Tape, intermediates: dict[str, int], raws: dict[str, int]) -> int:
        e0 = intermediates["e0"]
        rb = intermediates["rb_night"]
        dtdt = intermediates["dtdt"]
        t_minus_t0 = t.subtract(raws["t_air"], t.constant(T0_C))
        inv_t = t.reciprocal(t_minus_t0)
        exponent = t.multiply(
            e0, t.subtract(t.constant(1.0 / (TREF_C - T0_C)), inv_t)
        )
        resp = t.multiply(rb, t.exp(exponent))
        slope = t.multiply(t.divide(e0, t.square(t_minus_t0)), resp)
        return t.multiply(slope, dtdt)
