"""CCCV charge simulation of a degraded lithium-ion cell.

The cell is a set of identical parallel branches, each a small full cell
(cathode potential minus anode potential) behind its own resistance. Branch
resistances differ, so branches desynchronise across flat plateaus in
proportion to current; that is what smears incremental-capacity peaks at
higher rates. A series resistance and RC pairs sit in front of the branches,
and every resistance follows an Arrhenius temperature law.

Degradation follows the usual alignment construction: loss of lithium
inventory slides the electrode windows relative to each other, loss of active
material shrinks the electrode capacity together with the lithium it holds in
the fresh discharged state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from ..telemetry import ChargeSegment, TelemetrySample
from .ocp import GRAPHITE, NMC, HalfCellOCP, ocp_from_dict


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationState:
    lli: float = 0.0  # lithium lost, fraction of nominal capacity
    lam_a: float = 0.0
    lam_c: float = 0.0

    def __post_init__(self):
        for name in ("lli", "lam_a", "lam_c"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise SimulationError(f"{name} must lie in [0, 1), got {v}")

    @classmethod
    def along_path(cls, severity: float, lam_a_per_lli: float = 0.2, lam_c_per_lli: float = 0.1):
        """Degradation that grows proportionally along one ageing path."""
        return cls(severity, lam_a_per_lli * severity, lam_c_per_lli * severity)


@dataclass(frozen=True)
class CellSimConfig:
    nominal_capacity: float = 50.0  # Ah
    anode_ocp: HalfCellOCP = GRAPHITE
    cathode_ocp: HalfCellOCP = NMC
    anode_ratio: float = 1.2  # anode capacity / nominal
    cathode_ratio: float = 1.35
    cathode_stoich_empty: float = 0.93
    min_voltage: float = 3.0
    full_charge_voltage: float = 4.2
    taper_current: float = 0.02  # fraction of C
    series_resistance: float = 0.6e-3  # ohm at reference temperature
    rc_pairs: tuple[tuple[float, float], ...] = ((0.4e-3, 25000.0),)  # (ohm, farad)
    branch_resistance: float = 1.0e-3
    branch_spread: float = 0.6
    n_branches: int = 3
    resistance_activation: float = 3000.0  # K
    reference_temperature: float = 25.0
    n_cells: int = 1
    n_temp_sensors: int = 1
    heat_capacity: float = 900.0  # J/K per cell
    cooling_coefficient: float = 1.0  # W/K per cell
    noise_voltage: float = 0.002
    noise_temperature: float = 0.1
    noise_current: float = 0.010

    def __post_init__(self):
        if self.nominal_capacity <= 0:
            raise SimulationError("nominal capacity must be positive")
        if self.series_resistance < 0 or self.branch_resistance <= 0:
            raise SimulationError("resistances must be non-negative")
        if any(r < 0 or c <= 0 for r, c in self.rc_pairs):
            raise SimulationError("RC pairs need R >= 0 and C > 0")

    def resistance_factor(self, temperature_c: float) -> float:
        tk = temperature_c + 273.15
        tr = self.reference_temperature + 273.15
        return math.exp(self.resistance_activation * (1.0 / tk - 1.0 / tr))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["anode_ocp"] = self.anode_ocp.to_dict()
        d["cathode_ocp"] = self.cathode_ocp.to_dict()
        d["rc_pairs"] = [list(p) for p in self.rc_pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "CellSimConfig":
        d = dict(d or {})
        for key in ("anode_ocp", "cathode_ocp"):
            if key in d and isinstance(d[key], dict):
                d[key] = ocp_from_dict(d[key])
            elif key in d and isinstance(d[key], str):
                from .ocp import BUILTIN
                d[key] = BUILTIN[d[key]]
        if "rc_pairs" in d:
            d["rc_pairs"] = tuple(tuple(p) for p in d["rc_pairs"])
        return cls(**d)


@dataclass(frozen=True)
class Alignment:
    """Electrode capacities (Ah), lithium inventory (Ah) and the voltage window."""

    q_anode: float
    q_cathode: float
    lithium: float
    x_empty: float
    x_full: float
    capacity: float

    @property
    def y_empty(self) -> float:
        return (self.lithium - self.x_empty * self.q_anode) / self.q_cathode

    def stoich(self, q):
        """Anode and cathode lithiation after charging ``q`` Ah from empty."""
        return self.x_empty + q / self.q_anode, self.y_empty - q / self.q_cathode


def _window(cfg: CellSimConfig, lithium: float, qa: float, qc: float):
    def v(x):
        return float(cfg.cathode_ocp((lithium - x * qa) / qc) - cfg.anode_ocp(x))

    lo = max(1e-7, (lithium - qc) / qa + 1e-9)
    hi = min(1 - 1e-7, lithium / qa - 1e-9)
    if not lo < hi:
        raise SimulationError("no feasible electrode window")
    vlo, vhi = v(lo), v(hi)
    if not (vlo < cfg.min_voltage < vhi and vlo < cfg.full_charge_voltage < vhi):
        raise SimulationError("voltage limits unreachable for this degradation state")
    xb = brentq(lambda x: v(x) - cfg.min_voltage, lo, hi, xtol=1e-14)
    xt = brentq(lambda x: v(x) - cfg.full_charge_voltage, lo, hi, xtol=1e-14)
    return xb, xt


@lru_cache(maxsize=256)
def _fresh_alignment(cfg: CellSimConfig) -> Alignment:
    y0 = cfg.cathode_stoich_empty
    up0 = float(cfg.cathode_ocp(y0))
    xb0 = brentq(lambda x: up0 - float(cfg.anode_ocp(x)) - cfg.min_voltage, 1e-7, 0.9, xtol=1e-14)
    qa, qc = cfg.anode_ratio, cfg.cathode_ratio
    lith = y0 * qc + xb0 * qa
    xb, xt = _window(cfg, lith, qa, qc)
    scale = cfg.nominal_capacity / ((xt - xb) * qa)
    qa, qc, lith = qa * scale, qc * scale, lith * scale
    xb, xt = _window(cfg, lith, qa, qc)
    return Alignment(qa, qc, lith, xb, xt, (xt - xb) * qa)


def electrode_alignment(cfg: CellSimConfig, deg: DegradationState | None = None) -> Alignment:
    """Electrode window for a degradation state; raises if capacity collapses."""
    fresh = _fresh_alignment(cfg)
    deg = deg or DegradationState()
    if deg == DegradationState():
        return fresh
    qa = fresh.q_anode * (1.0 - deg.lam_a)
    qc = fresh.q_cathode * (1.0 - deg.lam_c)
    lith = (fresh.lithium - deg.lli * cfg.nominal_capacity
            - deg.lam_a * fresh.x_empty * fresh.q_anode
            - deg.lam_c * fresh.y_empty * fresh.q_cathode)
    if lith <= 0:
        raise SimulationError("degradation leaves no cyclable lithium")
    xb, xt = _window(cfg, lith, qa, qc)
    cap = (xt - xb) * qa
    if cap <= 0:
        raise SimulationError("degradation leaves no capacity")
    return Alignment(qa, qc, lith, xb, xt, cap)


def true_capacity(cfg: CellSimConfig, deg: DegradationState | None = None) -> float:
    return electrode_alignment(cfg, deg).capacity


def ocv(cfg: CellSimConfig, deg: DegradationState | None, soc):
    """Equilibrium cell voltage at state of charge ``soc`` (fraction)."""
    al = electrode_alignment(cfg, deg)
    x, y = al.stoich(np.asarray(soc) * al.capacity)
    return cfg.cathode_ocp(y) - cfg.anode_ocp(x)


@dataclass(frozen=True)
class SimulatedCharge:
    """A simulated charge plus the ground truth estimation code must not see."""

    samples: tuple[TelemetrySample, ...]
    segment: ChargeSegment
    true_soc: np.ndarray  # fraction, one per sample
    true_capacity: float
    charge_start: int  # first charging sample index into ``samples``
    charge_end: int  # last charging sample index
    cc_end: int  # last constant-current sample index
    delivered_ah: float
    meta: dict = field(default_factory=dict)


def simulate_charge(cell: CellSimConfig, deg: DegradationState | None = None, ambient: float = 25.0,
                    c_rate: float = 0.5, dt: float = 1.0, soc0: float = 0.0, *,
                    rest_before: float = 0.0, rest_after: float = 0.0, seed: int | None = 0,
                    constant_power: bool = False, ripple: float = 0.0, ripple_period: float = 600.0,
                    t0: float = 0.0, max_hours: float | None = None) -> SimulatedCharge:
    """CCCV (or constant-power then CV) charge from ``soc0``.

    Current noise is treated as real ripple: the cell integrates the emitted
    current with the trapezoidal rule, so the hidden SOC trace is exactly the
    coulomb count of the emitted current. Voltage and temperature noise are
    measurement noise only.
    """
    if c_rate <= 0 or dt <= 0:
        raise SimulationError("c_rate and dt must be positive")
    if not 0.0 <= soc0 < 1.0:
        raise SimulationError("soc0 must lie in [0, 1)")
    al = electrode_alignment(cell, deg)
    rng = np.random.default_rng(seed)
    cap = al.capacity
    nb = cell.n_branches
    frac = np.full(nb, 1.0 / nb)
    spread = np.linspace(-1.0, 1.0, nb) * cell.branch_spread if nb > 1 else np.zeros(1)
    r_branch_ref = nb * cell.branch_resistance * (1.0 + spread)
    rc = np.array(cell.rc_pairs, dtype=float).reshape(-1, 2)
    qa_b, qc_b = frac * al.q_anode * 3600.0, frac * al.q_cathode * 3600.0  # As per branch

    q = frac * soc0 * cap * 3600.0  # As per branch
    v_rc = np.zeros(len(rc))
    temp = ambient
    i_cc = c_rate * cell.nominal_capacity
    i_taper = cell.taper_current * cell.nominal_capacity
    horizon = (max_hours if max_hours is not None else 3.0 / c_rate + 10.0) * 3600.0

    def branch_ocv(qb):
        x = al.x_empty + qb / qa_b
        y = al.y_empty - qb / qc_b
        return cell.cathode_ocp(y) - cell.anode_ocp(x), \
            (-cell.cathode_ocp.deriv(y) / qc_b - cell.anode_ocp.deriv(x) / qa_b)

    times, currents, volts, temps, socs = [], [], [], [], []
    t = t0
    n_rest0 = int(round(rest_before / dt))
    n_rest1 = int(round(rest_after / dt))

    def emit(i_now, v_now):
        times.append(t)
        currents.append(i_now)
        volts.append(v_now)
        temps.append(temp)
        socs.append(q.sum() / 3600.0 / cap)

    # rest before: open circuit (plus current-sensor noise, integrated as ripple)
    rf = cell.resistance_factor(temp)
    i_start = i_cc + float(rng.normal(0.0, cell.noise_current))
    i_prev = float(rng.normal(0.0, cell.noise_current)) if n_rest0 else i_start
    for k in range(n_rest0):
        u0, _ = branch_ocv(q)
        emit(i_prev, float(np.mean(u0)))
        i_next = float(rng.normal(0.0, cell.noise_current)) if k + 1 < n_rest0 else i_start
        q += frac * 0.5 * (i_prev + i_next) * dt
        t += dt
        i_prev = i_next

    # first charging sample: instantaneous response to the current step
    phase_start = len(times)
    u, _ = branch_ocv(q)
    r_b = r_branch_ref * rf
    g = np.sum(1.0 / r_b)
    v_prev = (i_prev + np.sum(u / r_b)) / g + cell.series_resistance * rf * i_prev + v_rc.sum()
    if constant_power:
        power = i_cc * v_prev
    emit(i_prev, v_prev)

    in_cv = False
    cc_end = phase_start
    while True:
        rf = cell.resistance_factor(temp)
        r_b = r_branch_ref * rf
        r0 = cell.series_resistance * rf
        u, du = branch_ocv(q)
        r_eff = r_b + du * dt
        g = np.sum(1.0 / r_eff)
        s_u = np.sum(u / r_eff)
        e_rc = np.exp(-dt / (rc[:, 0] * rc[:, 1] * rf)) if len(rc) else np.zeros(0)
        r_rc = rc[:, 0] * rf if len(rc) else np.zeros(0)

        if not in_cv:
            if constant_power:
                i_target = power / v_prev
            else:
                i_target = i_cc
            if ripple:
                i_target *= 1.0 + ripple * math.sin(2 * math.pi * (t + dt - t0) / ripple_period)
            i_next = i_target + float(rng.normal(0.0, cell.noise_current))
            i_bar = 0.5 * (i_prev + i_next)
            v_c = (i_bar + s_u) / g
            v_rc_new = v_rc * e_rc + r_rc * (1.0 - e_rc) * i_bar
            v_next = v_c + r0 * i_next + v_rc_new.sum()
            if v_next >= cell.full_charge_voltage:
                in_cv = True
                cc_end = len(times) - 1
        if in_cv:
            # terminal voltage is affine in the end-of-step current
            a = s_u / g + 0.5 * i_prev / g + np.sum(v_rc * e_rc + 0.5 * r_rc * (1.0 - e_rc) * i_prev)
            b = 0.5 / g + r0 + np.sum(0.5 * r_rc * (1.0 - e_rc))
            i_solved = (cell.full_charge_voltage - a) / b
            if i_solved <= i_taper:
                break
            i_next = i_solved + float(rng.normal(0.0, cell.noise_current))
            i_bar = 0.5 * (i_prev + i_next)
            v_c = (i_bar + s_u) / g
            v_rc_new = v_rc * e_rc + r_rc * (1.0 - e_rc) * i_bar
            v_next = v_c + r0 * i_next + v_rc_new.sum()

        i_branch = (v_c - u) / r_eff
        q = q + i_branch * dt
        v_rc = v_rc_new
        heat = i_next ** 2 * (r0 + np.sum(r_rc) + 1.0 / np.sum(1.0 / r_b))
        temp = ambient + (temp - ambient) * math.exp(-dt * cell.cooling_coefficient / cell.heat_capacity) \
            + heat / cell.cooling_coefficient * (1 - math.exp(-dt * cell.cooling_coefficient / cell.heat_capacity))
        t += dt
        i_prev, v_prev = i_next, v_next
        emit(i_next, v_next)
        if not np.all(np.isfinite(q)) or t - t0 > horizon:
            raise SimulationError("charge did not terminate; check configuration")
    charge_end = len(times) - 1
    if not in_cv:
        cc_end = charge_end

    # rest after: relaxation of branches and RC toward equilibrium
    i_prev = currents[-1]
    for k in range(n_rest1):
        rf = cell.resistance_factor(temp)
        u, du = branch_ocv(q)
        r_eff = r_branch_ref * rf + du * dt
        i_next = float(rng.normal(0.0, cell.noise_current))
        i_bar = 0.5 * (i_prev + i_next)
        g = np.sum(1.0 / r_eff)
        v_c = (i_bar + np.sum(u / r_eff)) / g
        q = q + (v_c - u) / r_eff * dt
        e_rc = np.exp(-dt / (rc[:, 0] * rc[:, 1] * rf)) if len(rc) else np.zeros(0)
        v_rc = v_rc * e_rc + rc[:, 0] * rf * (1.0 - e_rc) * i_bar if len(rc) else v_rc
        temp = ambient + (temp - ambient) * math.exp(-dt * cell.cooling_coefficient / cell.heat_capacity)
        t += dt
        i_prev = i_next
        emit(i_next, v_c + cell.series_resistance * rf * i_next + v_rc.sum())

    true_soc = np.asarray(socs)
    samples = _to_samples(cell, np.asarray(times), np.asarray(currents), np.asarray(volts),
                          np.asarray(temps), rng)
    seg = ChargeSegment.from_samples(samples[phase_start:charge_end + 1], cell.nominal_capacity,
                                     phase_start, charge_end)
    delivered = float(np.sum(0.5 * (np.asarray(currents[phase_start + 1:charge_end + 1])
                                    + np.asarray(currents[phase_start:charge_end])) * dt) / 3600.0)
    return SimulatedCharge(tuple(samples), seg, true_soc, cap, phase_start, charge_end,
                           cc_end, delivered,
                           {"ambient": ambient, "c_rate": c_rate, "soc0": soc0, "dt": dt})


def _to_samples(cell: CellSimConfig, t, i, v, temp, rng) -> list[TelemetrySample]:
    n = len(t)
    cells = v[:, None] + rng.normal(0.0, cell.noise_voltage, (n, cell.n_cells))
    temps = temp[:, None] + rng.normal(0.0, cell.noise_temperature, (n, cell.n_temp_sensors))
    pack = cells.sum(axis=1)
    return [TelemetrySample(float(t[k]), float(i[k]), float(pack[k]),
                            tuple(cells[k].tolist()), tuple(temps[k].tolist()))
            for k in range(n)]
