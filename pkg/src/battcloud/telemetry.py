"""Telemetry ingestion, cleaning, charge segmentation and signal windowing.

Sign convention: pack current is positive while charging.

File format: delimiter-separated text with a header row, or line-delimited
JSON records. Column roles are resolved through :class:`SchemaConfig`; cell
voltage and temperature columns are discovered by prefix plus a 1-based index
(``cell_v1``, ``cell_v2``, ... and ``temp1``, ``temp2``, ...).
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np


class TelemetryError(ValueError):
    """Base class for telemetry problems."""


class SchemaError(TelemetryError):
    pass


class EmptyInputError(TelemetryError):
    pass


@dataclass(frozen=True)
class TelemetrySample:
    """One timestamped measurement row from a pack.

    ``flags`` is a bitmask of INVALID fields. Bit 0 is the pack current,
    bit 1 the pack voltage, then one bit per cell voltage followed by one bit
    per temperature sensor. Zero means every field is usable.
    """

    timestamp: float
    pack_current: float
    pack_voltage: float
    cell_voltages: tuple[float, ...] = ()
    temperatures: tuple[float, ...] = ()
    flags: int = 0

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise TelemetryError("timestamp must be finite")

    @property
    def n_fields(self) -> int:
        return 2 + len(self.cell_voltages) + len(self.temperatures)

    def field_ok(self, bit: int) -> bool:
        return not (self.flags >> bit) & 1

    @property
    def current_ok(self) -> bool:
        return self.field_ok(0)

    @property
    def pack_voltage_ok(self) -> bool:
        return self.field_ok(1)

    def cell_ok(self, i: int) -> bool:
        return self.field_ok(2 + i)

    def temp_ok(self, j: int) -> bool:
        return self.field_ok(2 + len(self.cell_voltages) + j)

    @property
    def all_invalid(self) -> bool:
        return self.flags == (1 << self.n_fields) - 1


@dataclass(frozen=True)
class SampleArrays:
    """Column view of a sample list; invalid fields are NaN."""

    time: np.ndarray
    current: np.ndarray
    pack_voltage: np.ndarray
    cell_voltages: np.ndarray  # (n, n_cells)
    temperatures: np.ndarray  # (n, n_sensors)

    @property
    def cell_voltage(self) -> np.ndarray:
        """Mean valid cell voltage per row; falls back to pack voltage / cells."""
        n_cells = self.cell_voltages.shape[1]
        if n_cells == 0:
            return self.pack_voltage.copy()
        with np.errstate(invalid="ignore"):
            counts = np.sum(np.isfinite(self.cell_voltages), axis=1)
            total = np.nansum(self.cell_voltages, axis=1)
            out = np.where(counts > 0, total / np.maximum(counts, 1), self.pack_voltage / n_cells)
        return out

    @property
    def temperature(self) -> np.ndarray:
        """Mean valid temperature per row (NaN when none is valid)."""
        if self.temperatures.shape[1] == 0:
            return np.full(self.time.shape, np.nan)
        counts = np.sum(np.isfinite(self.temperatures), axis=1)
        total = np.nansum(self.temperatures, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, total / np.maximum(counts, 1), np.nan)


def to_arrays(samples: Sequence[TelemetrySample]) -> SampleArrays:
    n = len(samples)
    n_cells = len(samples[0].cell_voltages) if n else 0
    n_temps = len(samples[0].temperatures) if n else 0
    t = np.fromiter((s.timestamp for s in samples), float, n)
    cur = np.fromiter((s.pack_current for s in samples), float, n)
    pv = np.fromiter((s.pack_voltage for s in samples), float, n)
    cv = np.array([s.cell_voltages for s in samples], dtype=float).reshape(n, n_cells)
    tt = np.array([s.temperatures for s in samples], dtype=float).reshape(n, n_temps)
    flags = [s.flags for s in samples]
    if any(flags):
        for r, f in enumerate(flags):
            if not f:
                continue
            if f & 1:
                cur[r] = np.nan
            if f & 2:
                pv[r] = np.nan
            for i in range(n_cells):
                if (f >> (2 + i)) & 1:
                    cv[r, i] = np.nan
            for j in range(n_temps):
                if (f >> (2 + n_cells + j)) & 1:
                    tt[r, j] = np.nan
    return SampleArrays(t, cur, pv, cv, tt)


# --------------------------------------------------------------------------
# ingestion

@dataclass(frozen=True)
class SchemaConfig:
    timestamp: str = "timestamp"
    current: str = "pack_current"
    pack_voltage: str = "pack_voltage"
    cell_prefix: str = "cell_v"
    temp_prefix: str = "temp"
    flags: str = "quality_flags"
    delimiter: str = ","
    time_format: str = "epoch"  # or "iso"
    format: str = "csv"  # or "jsonl"

    @classmethod
    def from_dict(cls, d: dict | None) -> "SchemaConfig":
        return cls(**(d or {}))


def _parse_time(text, time_format: str) -> float:
    if time_format == "epoch":
        return float(text)
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _indexed_columns(header: Sequence[str], prefix: str) -> list[tuple[int, int]]:
    pat = re.compile(re.escape(prefix) + r"_?(\d+)$")
    found = []
    for pos, name in enumerate(header):
        m = pat.match(name)
        if m:
            found.append((int(m.group(1)), pos))
    return sorted(found)


def _open_text(path_or_stream):
    if hasattr(path_or_stream, "read"):
        return path_or_stream, False
    return open(path_or_stream, "r", newline="", encoding="utf-8"), True


def ingest_file(path_or_stream, schema: SchemaConfig | None = None):
    """Parse a telemetry file into samples.

    Returns ``(samples, rejects)`` where ``rejects`` is a Counter of
    rejection reasons. Samples keep file order.
    """
    schema = schema or SchemaConfig()
    fh, owned = _open_text(path_or_stream)
    try:
        if schema.format == "jsonl":
            samples, rejects = _ingest_jsonl(fh, schema)
        elif schema.format == "csv":
            samples, rejects = _ingest_csv(fh, schema)
        else:
            raise SchemaError(f"unknown format {schema.format!r}")
    finally:
        if owned:
            fh.close()
    if not samples:
        raise EmptyInputError(f"no parseable rows ({sum(rejects.values())} rejected)")
    return samples, rejects


def _ingest_csv(fh, schema: SchemaConfig):
    reader = csv.reader(fh, delimiter=schema.delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyInputError("file has no header row") from None
    missing = [c for c in (schema.timestamp, schema.current, schema.pack_voltage) if c not in header]
    if missing:
        raise SchemaError(f"missing mandatory columns: {missing}")
    i_t = header.index(schema.timestamp)
    i_i = header.index(schema.current)
    i_v = header.index(schema.pack_voltage)
    i_f = header.index(schema.flags) if schema.flags in header else None
    cells = [p for _, p in _indexed_columns(header, schema.cell_prefix)]
    temps = [p for _, p in _indexed_columns(header, schema.temp_prefix)]

    samples: list[TelemetrySample] = []
    rejects: Counter = Counter()
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            rejects["column_count"] += 1
            continue
        try:
            s = TelemetrySample(
                timestamp=_parse_time(row[i_t], schema.time_format),
                pack_current=float(row[i_i]),
                pack_voltage=float(row[i_v]),
                cell_voltages=tuple(float(row[p]) for p in cells),
                temperatures=tuple(float(row[p]) for p in temps),
                flags=int(row[i_f]) if i_f is not None and row[i_f].strip() else 0,
            )
        except (ValueError, TypeError):
            rejects["unparseable"] += 1
            continue
        samples.append(s)
    return samples, rejects


def _ingest_jsonl(fh, schema: SchemaConfig):
    samples: list[TelemetrySample] = []
    rejects: Counter = Counter()
    shape = None
    checked = False
    for line in fh:
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            rejects["unparseable"] += 1
            continue
        if not checked:
            missing = [c for c in (schema.timestamp, schema.current, schema.pack_voltage) if c not in rec]
            if missing:
                raise SchemaError(f"missing mandatory fields: {missing}")
            checked = True
        try:
            cells = tuple(float(v) for v in rec.get(schema.cell_prefix, ()))
            temps = tuple(float(v) for v in rec.get(schema.temp_prefix, ()))
            s = TelemetrySample(
                timestamp=_parse_time(rec[schema.timestamp], schema.time_format),
                pack_current=float(rec[schema.current]),
                pack_voltage=float(rec[schema.pack_voltage]),
                cell_voltages=cells,
                temperatures=temps,
                flags=int(rec.get(schema.flags, 0)),
            )
        except (KeyError, ValueError, TypeError):
            rejects["unparseable"] += 1
            continue
        if shape is None:
            shape = (len(cells), len(temps))
        elif shape != (len(cells), len(temps)):
            rejects["column_count"] += 1
            continue
        samples.append(s)
    return samples, rejects


def write_samples(samples: Iterable[TelemetrySample], path_or_stream, schema: SchemaConfig | None = None,
                  n_cells: int | None = None, n_temps: int | None = None) -> None:
    """Write samples in the ingest format; floats use their shortest exact repr."""
    schema = schema or SchemaConfig()
    samples = list(samples)
    if n_cells is None:
        n_cells = len(samples[0].cell_voltages) if samples else 0
    if n_temps is None:
        n_temps = len(samples[0].temperatures) if samples else 0
    owned = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if owned else path_or_stream
    try:
        if schema.format == "jsonl":
            for s in samples:
                rec = {
                    schema.timestamp: s.timestamp,
                    schema.current: s.pack_current,
                    schema.pack_voltage: s.pack_voltage,
                    schema.cell_prefix: list(s.cell_voltages),
                    schema.temp_prefix: list(s.temperatures),
                    schema.flags: s.flags,
                }
                fh.write(json.dumps(rec) + "\n")
            return
        header = [schema.timestamp, schema.current, schema.pack_voltage]
        header += [f"{schema.cell_prefix}{i + 1}" for i in range(n_cells)]
        header += [f"{schema.temp_prefix}{j + 1}" for j in range(n_temps)]
        header.append(schema.flags)
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        w.writerow(header)
        for s in samples:
            if schema.time_format == "iso":
                ts = datetime.fromtimestamp(s.timestamp, tz=timezone.utc).isoformat()
            else:
                ts = repr(float(s.timestamp))
            w.writerow([ts, repr(float(s.pack_current)), repr(float(s.pack_voltage))]
                       + [repr(float(v)) for v in s.cell_voltages]
                       + [repr(float(v)) for v in s.temperatures]
                       + [s.flags])
    finally:
        if owned:
            fh.close()


def write_rejects_report(report: Counter, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "rejects": dict(sorted(report.items()))}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# cleaning

@dataclass(frozen=True)
class LimitsConfig:
    cell_voltage: tuple[float, float] = (2.0, 4.5)
    pack_voltage: tuple[float, float] | None = None  # None: n_cells * cell bounds
    temperature: tuple[float, float] = (-40.0, 85.0)
    current: tuple[float, float] = (-1000.0, 1000.0)

    @classmethod
    def from_dict(cls, d: dict | None) -> "LimitsConfig":
        d = dict(d or {})
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


def _outside(x: float, lo_hi) -> bool:
    return not (math.isfinite(x) and lo_hi[0] <= x <= lo_hi[1])


def clean(samples: Sequence[TelemetrySample], limits: LimitsConfig | None = None):
    """Flag implausible fields and enforce strictly increasing timestamps.

    Returns ``(cleaned, report)``. Surviving rows keep their order; a row with
    every field invalid is dropped, as is any row whose timestamp does not
    advance (the first occurrence of a duplicate wins).
    """
    limits = limits or LimitsConfig()
    out: list[TelemetrySample] = []
    report: Counter = Counter()
    last_t = -math.inf
    for s in samples:
        nc = len(s.cell_voltages)
        pack_bounds = limits.pack_voltage or (
            (nc * limits.cell_voltage[0], nc * limits.cell_voltage[1]) if nc else (-math.inf, math.inf))
        flags = s.flags
        if _outside(s.pack_current, limits.current):
            flags |= 1
        if _outside(s.pack_voltage, pack_bounds):
            flags |= 2
        for i, v in enumerate(s.cell_voltages):
            if _outside(v, limits.cell_voltage):
                flags |= 1 << (2 + i)
        for j, v in enumerate(s.temperatures):
            if _outside(v, limits.temperature):
                flags |= 1 << (2 + nc + j)
        if flags != s.flags:
            report["flagged_rows"] += 1
            report["flagged_fields"] += bin(flags & ~s.flags).count("1")
            s = replace(s, flags=flags)
        if s.all_invalid:
            report["all_invalid"] += 1
            continue
        if s.timestamp <= last_t:
            report["duplicate_timestamp" if s.timestamp == last_t else "out_of_order"] += 1
            continue
        last_t = s.timestamp
        out.append(s)
    return out, report


# --------------------------------------------------------------------------
# charge segmentation

@dataclass(frozen=True)
class GateConfig:
    """Charge detection thresholds.

    Charging opens when the current exceeds ``open_c_rate`` x capacity for at
    least ``dwell_s``; it closes once the current has stayed at or below the
    threshold (or data is missing) for more than ``close_gap_s``.
    """

    capacity_ah: float = 50.0
    open_c_rate: float = 0.02
    dwell_s: float = 60.0
    close_gap_s: float = 300.0
    min_duration_s: float = 0.0
    min_throughput_ah: float = 0.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "GateConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class ChargeSegment:
    samples: tuple[TelemetrySample, ...]
    charge_throughput: float  # Ah
    mean_c_rate: float
    mean_temperature: float
    start_index: int = 0
    end_index: int = 0
    capacity_ah: float = 50.0

    @classmethod
    def from_samples(cls, samples: Sequence[TelemetrySample], capacity_ah: float,
                     start_index: int = 0, end_index: int | None = None) -> "ChargeSegment":
        samples = tuple(samples)
        arr = to_arrays(samples)
        if np.any(np.diff(arr.time) <= 0):
            raise TelemetryError("segment timestamps must be strictly increasing")
        if np.any(~(arr.current >= 0)):
            raise TelemetryError("segment samples must carry valid non-negative current")
        throughput = trapezoid_ah(arr.time, arr.current)
        duration = arr.time[-1] - arr.time[0] if len(samples) > 1 else 0.0
        mean_i = throughput * 3600.0 / duration if duration > 0 else float(arr.current.mean())
        temp = arr.temperature
        mean_t = float(np.nanmean(temp)) if np.any(np.isfinite(temp)) else float("nan")
        return cls(samples, throughput, mean_i / capacity_ah, mean_t, start_index,
                   start_index + len(samples) - 1 if end_index is None else end_index, capacity_ah)

    def arrays(self) -> SampleArrays:
        return to_arrays(self.samples)

    @property
    def duration(self) -> float:
        return self.samples[-1].timestamp - self.samples[0].timestamp


def trapezoid_ah(t: np.ndarray, i: np.ndarray) -> float:
    """Trapezoidal current integral in ampere-hours."""
    if len(t) < 2:
        return 0.0
    return float(np.sum(0.5 * (i[1:] + i[:-1]) * np.diff(t)) / 3600.0)


def segment_charges(samples: Sequence[TelemetrySample], gate: GateConfig | None = None) -> list[ChargeSegment]:
    gate = gate or GateConfig()
    if not samples:
        return []
    arr = to_arrays(samples)
    t, cur = arr.time, arr.current
    thr = gate.open_c_rate * gate.capacity_ah
    with np.errstate(invalid="ignore"):
        charging = cur > thr

    # maximal runs of charging samples
    runs = []
    n = len(t)
    k = 0
    while k < n:
        if not charging[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and charging[j + 1] and t[j + 1] - t[j] <= gate.close_gap_s:
            j += 1
        runs.append([k, j])
        k = j + 1

    merged: list[list[int]] = []
    for r in runs:
        if merged and t[r[0]] - t[merged[-1][1]] <= gate.close_gap_s:
            merged[-1][1] = r[1]
        else:
            merged.append(r)

    segments = []
    for a, b in merged:
        if t[b] - t[a] < max(gate.dwell_s, gate.min_duration_s):
            continue
        keep = [idx for idx in range(a, b + 1) if cur[idx] >= 0]
        seg = ChargeSegment.from_samples([samples[idx] for idx in keep], gate.capacity_ah, a, b)
        if seg.charge_throughput < gate.min_throughput_ah:
            continue
        segments.append(seg)
    return segments


# --------------------------------------------------------------------------
# windowing

@dataclass(frozen=True)
class SignalWindow:
    sensor_id: int
    values: tuple[float, ...]
    dt: float
    origin_timestamp: float
    static: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise TelemetryError("window dt must be positive")

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def resample_uniform(t: np.ndarray, v: np.ndarray, dt: float, t0: float | None = None):
    """Linear interpolation onto ``t0 + k*dt`` covering the valid span of ``v``."""
    ok = np.isfinite(v)
    t, v = t[ok], v[ok]
    if len(t) < 2:
        return np.empty(0), np.empty(0)
    t0 = t[0] if t0 is None else t0
    n = int(math.floor((t[-1] - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(n)
    return grid, np.interp(grid, t, v)


def window_signals(samples: Sequence[TelemetrySample], sensor_selector: Sequence[int] | None = None,
                   window_len: int = 60, stride: int = 15, dt: float | None = None,
                   static_ptp: float = 1.0, channel: str = "temperature") -> list[SignalWindow]:
    """Resample selected sensors onto a shared uniform grid and slice windows.

    Windows are ordered by origin time, then sensor id. A window whose
    peak-to-peak range is below ``static_ptp`` is marked ``static``.
    """
    if window_len < 2 or stride < 1:
        raise TelemetryError("window_len must be >= 2 and stride >= 1")
    if not samples:
        return []
    arr = to_arrays(samples)
    data = arr.temperatures if channel == "temperature" else arr.cell_voltages
    sensors = list(range(data.shape[1])) if sensor_selector is None else list(sensor_selector)
    if dt is None:
        dt = float(np.median(np.diff(arr.time))) if len(arr.time) > 1 else 1.0
    t0 = arr.time[0]
    grids = {}
    for sid in sensors:
        g, v = resample_uniform(arr.time, data[:, sid], dt, t0)
        grids[sid] = (g, v)
    n_common = min((len(g) for g, _ in grids.values()), default=0)
    out: list[SignalWindow] = []
    for start in range(0, n_common - window_len + 1, stride):
        for sid in sensors:
            g, v = grids[sid]
            seg = v[start:start + window_len]
            out.append(SignalWindow(sid, tuple(float(x) for x in seg), dt, float(g[start]),
                                    bool(np.ptp(seg) < static_ptp)))
    return out
