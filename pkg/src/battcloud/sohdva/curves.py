"""Capacity-fade basics, charge gating and differential (IC/DV) curves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter

from ..telemetry import ChargeSegment


class SohError(ValueError):
    pass


class InsufficientDataError(SohError):
    pass


def soh_c(q_dis_max: float, c_n: float) -> float:
    """Capacitive state of health in percent: usable charge over nominal capacity."""
    if c_n <= 0:
        raise SohError("nominal capacity must be positive")
    if q_dis_max < 0:
        raise SohError("discharge capacity must be non-negative")
    return 100.0 * q_dis_max / c_n


@dataclass(frozen=True)
class SohGateConfig:
    max_c_rate: float = 0.5
    c_rate_tolerance: float = 0.02  # relative slack on max_c_rate for sensor noise
    min_charge_fraction: float = 0.3  # of nominal capacity
    temperature_range: tuple[float, float] = (-20.0, 60.0)

    @classmethod
    def from_dict(cls, d: dict | None) -> "SohGateConfig":
        d = dict(d or {})
        if "temperature_range" in d:
            d["temperature_range"] = tuple(d["temperature_range"])
        return cls(**d)


@dataclass(frozen=True)
class GateDecision:
    accepted: bool
    reason: str  # "ok", "c-rate", "charge-span", "temperature"

    def __bool__(self):
        return self.accepted


def gate_segment(segment: ChargeSegment, config: SohGateConfig | None = None,
                 lut=None) -> GateDecision:
    """Decide whether a charge is usable for differential analysis.

    When a LUT is given its calibrated temperature range replaces the
    configured one.
    """
    config = config or SohGateConfig()
    if segment.mean_c_rate > config.max_c_rate * (1.0 + config.c_rate_tolerance):
        return GateDecision(False, "c-rate")
    if segment.charge_throughput < config.min_charge_fraction * segment.capacity_ah:
        return GateDecision(False, "charge-span")
    lo, hi = lut.temperature_range if lut is not None else config.temperature_range
    t = segment.mean_temperature
    if not (np.isfinite(t) and lo <= t <= hi):
        return GateDecision(False, "temperature")
    return GateDecision(True, "ok")


@dataclass(frozen=True)
class DiffConfig:
    bin_fraction: float = 1.0 / 200.0  # bin width as a fraction of nominal capacity
    savgol_window: int = 9
    savgol_order: int = 2
    eps: float = 1e-6
    min_bins: int = 20
    cv_voltage_tol: float = 0.005  # V below the CV plateau that still counts as CV
    cv_current_ratio: float = 0.9  # final/peak current below this means a CV tail exists
    skip_start_bins: int = 2  # leading bins (relaxation transient) kept unsmoothed and hidden from peak search

    @classmethod
    def from_dict(cls, d: dict | None) -> "DiffConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class DifferentialCurves:
    q_axis: np.ndarray  # Ah from the start of the analysed span
    v_axis: np.ndarray  # V, smoothed
    ic: np.ndarray  # dQ/dV in Ah/V, 0 where masked
    dv: np.ndarray  # dV/dQ in V/Ah, 0 where masked
    ic_valid: np.ndarray
    dv_valid: np.ndarray
    bin_width: float
    capacity_ah: float
    mean_c_rate: float
    mean_temperature: float
    cc_throughput: float  # Ah over the analysed constant-current span
    smoothing_meta: dict = field(default_factory=dict)
    feature_mask: np.ndarray | None = None  # bins eligible for peak search; None means all

    def searchable(self, kind: str) -> np.ndarray:
        valid = self.dv_valid if kind == "dv" else self.ic_valid
        return valid if self.feature_mask is None else valid & self.feature_mask

    def export(self, path, kind: str = "dv") -> None:
        """Two-column text for plotting: ``q dv`` or ``v ic``; masked bins are left out."""
        if kind == "dv":
            data, header = np.column_stack([self.q_axis, self.dv])[self.dv_valid], "q_ah dv_v_per_ah"
        elif kind == "ic":
            data, header = np.column_stack([self.v_axis, self.ic])[self.ic_valid], "v_volt ic_ah_per_v"
        else:
            raise ValueError(f"unknown curve kind {kind!r}")
        np.savetxt(path, data, fmt="%.10g", header=header)


def cc_span(t: np.ndarray, current: np.ndarray, voltage: np.ndarray, config: DiffConfig) -> int:
    """Index one past the end of the constant-current part of a charge."""
    n = len(t)
    tail = max(3, n // 20)
    peak_i = np.percentile(current, 95)
    has_cv = np.median(current[-tail:]) < config.cv_current_ratio * peak_i
    if not has_cv:
        return n
    v_cv = np.median(voltage[-tail:])
    above = np.nonzero(voltage >= v_cv - config.cv_voltage_tol)[0]
    return int(above[0]) if len(above) else n


def differential_curves(segment: ChargeSegment, config: DiffConfig | None = None) -> DifferentialCurves:
    """IC and DV curves of a charge on uniform charge bins.

    Voltage is averaged inside bins of width ``bin_fraction * C_N``; the DV
    curve is the finite difference ``dV/dQ`` between neighbouring bins,
    smoothed with a Savitzky-Golay filter, and the IC curve is its reciprocal.
    Bins whose smoothed voltage step is below ``eps`` are masked on the IC
    curve; bins whose charge step is below ``eps`` are masked on the DV curve.
    """
    config = config or DiffConfig()
    arr = segment.arrays()
    t, i, v = arr.time, arr.current, arr.cell_voltage
    ok = np.isfinite(i) & np.isfinite(v)
    t, i, v = t[ok], i[ok], v[ok]
    if len(t) < 3:
        raise InsufficientDataError("segment too short")
    end = cc_span(t, i, v, config)
    t, i, v = t[:end], i[:end], v[:end]
    q = np.concatenate([[0.0], np.cumsum(0.5 * (i[1:] + i[:-1]) * np.diff(t))]) / 3600.0

    width = config.bin_fraction * segment.capacity_ah
    idx = np.floor(q / width).astype(int)
    counts = np.bincount(idx)
    keep = counts > 0
    q_bin = (np.bincount(idx, weights=q)[keep]) / counts[keep]
    v_bin = (np.bincount(idx, weights=v)[keep]) / counts[keep]
    # The leading bins carry the relaxation transient and the last bin is
    # usually partial. They stay in the curves (so the IC integral spans the
    # whole CC charge) but are neither smoothed nor searched for peaks.
    lead = config.skip_start_bins
    tail = 1 if len(q_bin) > 1 and counts[keep][-1] < 0.5 * np.median(counts[keep]) else 0

    dq = np.diff(q_bin)
    inner = slice(lead, len(dq) - tail)
    if len(dq) - lead - tail < max(config.min_bins, config.savgol_window):
        raise InsufficientDataError(f"only {len(dq) - lead - tail} bins in the constant-current span")
    dv_valid = np.abs(dq) >= config.eps
    dv_raw = np.zeros_like(dq)
    dv_raw[dv_valid] = np.diff(v_bin)[dv_valid] / dq[dv_valid]
    dv = dv_raw.copy()
    dv[inner] = savgol_filter(dv_raw[inner], config.savgol_window, config.savgol_order, mode="interp")
    dv = np.where(dv_valid, dv, 0.0)
    searchable = np.zeros(len(dq), bool)
    searchable[inner] = True
    dvolt = dv * dq
    ic_valid = dv_valid & (np.abs(dvolt) >= config.eps)
    ic = np.zeros_like(dv)
    ic[ic_valid] = 1.0 / dv[ic_valid]

    q_axis = 0.5 * (q_bin[1:] + q_bin[:-1])
    v_axis = v_bin[0] + np.cumsum(dvolt) - 0.5 * dvolt
    if not (np.all(np.isfinite(dv)) and np.all(np.isfinite(ic))):
        raise InsufficientDataError("non-finite differential values")
    temps = arr.temperature
    mean_t = float(np.nanmean(temps)) if np.any(np.isfinite(temps)) else float("nan")
    cc_q = float(q[-1])
    duration = t[-1] - t[0]
    c_rate = cc_q * 3600.0 / duration / segment.capacity_ah if duration > 0 else segment.mean_c_rate
    return DifferentialCurves(q_axis, v_axis, ic, dv, ic_valid, dv_valid, width, segment.capacity_ah,
                              c_rate, mean_t, cc_q,
                              {"filter": "savgol", "window": config.savgol_window,
                               "order": config.savgol_order, "bin_width_ah": width,
                               "unsmoothed_edges": [lead, tail]}, searchable)
