"""Lumped (0-D) thermal model of a pack's modules with injectable faults.

Each temperature sensor sits on its own module node::

    C dT/dt = g * P(t) + Q_fault(t, T) - h (T - T_coolant)

integrated with classical fixed-step RK4. ``g`` is a per-module gain on the
shared duty heat; fault terms touch only the target node or its reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import SimulationError

FAULT_KINDS = ("none", "drift", "step", "runaway-seed", "sensor-stuck")
KELVIN = 273.15


class StepSizeError(SimulationError):
    pass


@dataclass(frozen=True)
class ThermalSimConfig:
    lumped_heat_capacity: float = 1500.0  # J/K per module
    cooling_coefficient: float = 1.5  # W/K
    coolant_temperature: float = 25.0  # degC
    arrhenius_prefactor: float = 2.0e16  # W
    activation_temperature: float = 12000.0  # K
    reaction_heat: float = 3.0e5  # J released by self-heating before the reactants run out
    joule_resistance: float = 0.01  # ohm, for converting current profiles to heat
    n_sensors: int = 16
    gain_spread: float = 0.1  # module gains uniform in 1 +- spread
    sensor_offset: float = 0.3  # degC, uniform calibration offsets
    noise: float = 0.1  # degC
    initial_temperature: float | None = None  # defaults to coolant

    def __post_init__(self):
        if not self.lumped_heat_capacity > 0:
            raise SimulationError("heat capacity must be positive")
        if self.cooling_coefficient < 0:
            raise SimulationError("cooling coefficient must be >= 0")
        if self.n_sensors < 1:
            raise SimulationError("need at least one sensor")

    @property
    def time_constant(self) -> float:
        return self.lumped_heat_capacity / self.cooling_coefficient if self.cooling_coefficient else math.inf

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ThermalSimConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class FaultSpec:
    """``magnitude`` units: drift degC/h on the reading, step W of local heat,
    runaway-seed W/h growth of local heat (plus self-heating), sensor-stuck unused."""

    kind: str = "none"
    onset: float = 0.0
    magnitude: float = 0.0
    sensor: int = 0

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise SimulationError(f"unknown fault kind {self.kind!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DutyProfile:
    """Piecewise-constant heat input in W shared by all modules; ``power[k]`` holds on [times[k], times[k+1])."""

    times: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.power) or len(self.times) == 0:
            raise SimulationError("duty times and power must be non-empty and equal length")
        if np.any(np.diff(self.times) <= 0):
            raise SimulationError("duty times must increase")

    @classmethod
    def constant(cls, power: float) -> "DutyProfile":
        return cls(np.array([0.0]), np.array([float(power)]))

    @classmethod
    def from_current(cls, times, current, resistance: float) -> "DutyProfile":
        i = np.asarray(current, float)
        return cls(np.asarray(times, float), i * i * resistance)

    def at(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.power[np.clip(k, 0, len(self.power) - 1)]


def daily_duty(days: float, seed: int = 0, step: float = 60.0, drive_heat=(6.0, 14.0),
               charge_heat=(2.0, 5.0)) -> DutyProfile:
    """Random but plausible daily usage: one to three drives, an overnight charge, parking otherwise."""
    rng = np.random.default_rng(seed)
    n = int(math.ceil(days * 86400.0 / step))
    t = np.arange(n) * step
    p = np.zeros(n)
    for d in range(int(math.ceil(days))):
        base = d * 86400.0
        for _ in range(rng.integers(1, 4)):
            start = base + rng.uniform(6.0, 20.0) * 3600.0
            dur = rng.uniform(0.5, 1.5) * 3600.0
            level = rng.uniform(*drive_heat)
            sel = (t >= start) & (t < start + dur)
            # traffic: slowly varying load around the trip level
            wig = np.cumsum(rng.normal(0.0, 0.15, sel.sum()))
            wig -= np.linspace(0.0, wig[-1], sel.sum()) if sel.sum() > 1 else wig
            p[sel] = np.maximum(level * (1.0 + 0.5 * np.tanh(wig)), 0.0)
        start = base + rng.uniform(22.0, 25.0) * 3600.0
        dur = rng.uniform(1.0, 4.0) * 3600.0
        sel = (t >= start) & (t < start + dur) & (p == 0)
        p[sel] = rng.uniform(*charge_heat)
    return DutyProfile(t, p)


@dataclass
class ThermalRun:
    time: np.ndarray
    true_temperature: np.ndarray  # (n, sensors)
    measured: np.ndarray  # (n, sensors)
    generation: np.ndarray  # (n-1, sensors) step-averaged heat in W
    cooling: np.ndarray  # (n-1, sensors) step-averaged heat removed in W
    gains: np.ndarray
    offsets: np.ndarray
    fault: FaultSpec
    meta: dict = field(default_factory=dict)

    def crossing_time(self, threshold: float, sensor: int | None = None, measured: bool = True):
        """First time any (or the given) sensor reaches ``threshold``; None if never."""
        temps = self.measured if measured else self.true_temperature
        temps = temps if sensor is None else temps[:, [sensor]]
        hit = np.nonzero(np.any(temps >= threshold, axis=1))[0]
        return float(self.time[hit[0]]) if len(hit) else None

    def energy_residual(self, heat_capacity: float) -> np.ndarray:
        """Relative mismatch of C*dT against the integrated net heat, per sensor."""
        dt = np.diff(self.time)[:, None]
        net = np.sum((self.generation - self.cooling) * dt, axis=0)
        stored = heat_capacity * (self.true_temperature[-1] - self.true_temperature[0])
        scale = np.maximum(np.abs(stored), np.sum(np.abs(self.generation) * dt, axis=0))
        return np.abs(net - stored) / np.where(scale > 0, scale, 1.0)


def simulate_thermal(tconf: ThermalSimConfig, duty: DutyProfile, fault: FaultSpec | None = None,
                     horizon: float = 86400.0, dt: float = 1.0, seed: int = 0, t0: float = 0.0,
                     record_every: int = 1) -> ThermalRun:
    """Integrate every module node over ``[t0, t0 + horizon]`` with fixed-step RK4."""
    fault = fault or FaultSpec()
    if dt <= 0 or horizon <= 0:
        raise SimulationError("dt and horizon must be positive")
    if fault.kind != "none" and not (0 <= fault.sensor < tconf.n_sensors):
        raise SimulationError("fault sensor out of range")
    if fault.kind != "none" and not (t0 <= fault.onset <= t0 + horizon):
        raise SimulationError("fault onset outside the simulated horizon")
    c, h, tc = tconf.lumped_heat_capacity, tconf.cooling_coefficient, tconf.coolant_temperature
    # RK4 on linear decay is stable for h*dt/C below ~2.78; keep a margin
    if h * dt / c > 2.0:
        raise StepSizeError(f"dt={dt} too large for time constant {tconf.time_constant:.1f} s")
    rng = np.random.default_rng(seed)
    ns = tconf.n_sensors
    gains = 1.0 + rng.uniform(-tconf.gain_spread, tconf.gain_spread, ns)
    offsets = rng.uniform(-tconf.sensor_offset, tconf.sensor_offset, ns)
    target = np.zeros(ns)
    if fault.kind != "none":
        target[fault.sensor] = 1.0
    A, ta, hr = tconf.arrhenius_prefactor, tconf.activation_temperature, tconf.reaction_heat
    runaway = fault.kind == "runaway-seed"

    def fault_heat(t, temp, alpha):
        if t < fault.onset:
            return 0.0 * temp
        if fault.kind == "step":
            return target * fault.magnitude
        if runaway:
            seed_w = fault.magnitude * (t - fault.onset) / 3600.0
            arr = A * np.exp(-ta / (temp + KELVIN)) * (1.0 - alpha)
            return target * (seed_w + arr)
        return 0.0 * temp

    def rhs(t, temp, alpha, p):
        gen = gains * p + fault_heat(t, temp, alpha)
        cool = h * (temp - tc)
        dalpha = (target * A * np.exp(-ta / (temp + KELVIN)) * (1.0 - alpha) / hr
                  if runaway and t >= fault.onset else 0.0 * temp)
        return gen, cool, dalpha

    n = int(round(horizon / dt))
    temp = np.full(ns, tc if tconf.initial_temperature is None else tconf.initial_temperature, float)
    alpha = np.zeros(ns)
    keep = list(range(0, n + 1, record_every))
    if keep[-1] != n:
        keep.append(n)
    out_t = np.empty(len(keep))
    out_temp = np.empty((len(keep), ns))
    out_gen = np.zeros((len(keep) - 1, ns))
    out_cool = np.zeros((len(keep) - 1, ns))
    acc_gen = np.zeros(ns)
    acc_cool = np.zeros(ns)
    acc_t = 0.0
    j = 0
    out_t[0], out_temp[0] = t0, temp
    for k in range(n):
        t = t0 + k * dt
        # duty is constant over a step, sampled at its start
        p = float(duty.at(t))
        g1, c1, a1 = rhs(t, temp, alpha, p)
        g2, c2, a2 = rhs(t + dt / 2, temp + dt / 2 * (g1 - c1) / c, alpha + dt / 2 * a1, p)
        g3, c3, a3 = rhs(t + dt / 2, temp + dt / 2 * (g2 - c2) / c, alpha + dt / 2 * a2, p)
        g4, c4, a4 = rhs(t + dt, temp + dt * (g3 - c3) / c, alpha + dt * a3, p)
        gen = (g1 + 2 * g2 + 2 * g3 + g4) / 6.0
        cool = (c1 + 2 * c2 + 2 * c3 + c4) / 6.0
        temp = temp + dt * (gen - cool) / c
        alpha = np.minimum(alpha + dt * (a1 + 2 * a2 + 2 * a3 + a4) / 6.0, 1.0)
        if not np.all(np.isfinite(temp)):
            raise StepSizeError(f"temperature diverged at t={t + dt:.0f} s; reduce dt")
        acc_gen += gen * dt
        acc_cool += cool * dt
        acc_t += dt
        if k + 1 == keep[j + 1]:
            out_gen[j], out_cool[j] = acc_gen / acc_t, acc_cool / acc_t
            acc_gen[:], acc_cool[:], acc_t = 0.0, 0.0, 0.0
            j += 1
            out_t[j], out_temp[j] = t0 + (k + 1) * dt, temp
    measured = out_temp + offsets + rng.normal(0.0, tconf.noise, out_temp.shape)
    if fault.kind == "drift":
        hrs = np.maximum(out_t - fault.onset, 0.0) / 3600.0
        measured[:, fault.sensor] += fault.magnitude * hrs
    elif fault.kind == "sensor-stuck":
        on = out_t >= fault.onset
        if on.any():
            measured[on, fault.sensor] = measured[np.argmax(on), fault.sensor]
    return ThermalRun(out_t, out_temp, measured, out_gen, out_cool, gains, offsets, fault,
                      {"dt": dt, "seed": seed, "record_every": record_every})
