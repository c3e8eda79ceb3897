"""Feature-to-SOH lookup tables calibrated on aged-cell data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import SohError
from .features import DvaFeatureSet

LUT_FORMAT = "battcloud-soh-lut"
LUT_VERSION = 1
_COLUMNS = ("feature", "temperature", "intercept", "slope", "r2", "resid_var", "n",
            "feature_min", "feature_max", "soh_min", "soh_max")


class CalibrationError(SohError):
    pass


class EstimationError(SohError):
    pass


@dataclass(frozen=True)
class LutRow:
    """``SOH = intercept + slope * feature`` fitted at one temperature."""

    feature: str
    temperature: float
    intercept: float
    slope: float
    r2: float
    resid_var: float
    n: int
    feature_min: float
    feature_max: float
    soh_min: float
    soh_max: float

    def soh(self, value: float) -> float:
        return self.intercept + self.slope * value


@dataclass(frozen=True)
class LutConfig:
    r2_threshold: float = 0.8
    min_levels: int = 5
    max_c_rate: float = 0.5
    c_rate_tolerance: float = 0.02
    var_floor: float = 1e-6  # SOH points^2; keeps exact fits from taking infinite weight
    range_margin: float = 0.05  # relative slack on the calibrated feature range
    temperature_margin: float = 3.0  # degC; cells run a little above the calibration ambient

    @classmethod
    def from_dict(cls, d: dict | None) -> "LutConfig":
        return cls(**(d or {}))


def fit_line(x, y):
    """Least-squares ``y = a + b x``; returns (a, b, r2, residual variance)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        return ym, 0.0, 0.0, float(np.var(y))
    b = np.sum((x - xm) * (y - ym)) / sxx
    a = ym - b * xm
    res = y - (a + b * x)
    sst = np.sum((y - ym) ** 2)
    r2 = 1.0 - np.sum(res ** 2) / sst if sst > 0 else 0.0
    dof = max(len(x) - 2, 1)
    return float(a), float(b), float(r2), float(np.sum(res ** 2) / dof)


@dataclass(frozen=True)
class SohEstimate:
    soh: float
    std: float
    confidence: str  # "in-range", "extrapolated", "degraded-by-c-rate"
    contributions: dict  # feature -> (soh, variance)
    temperature: float
    c_rate: float
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {"soh": self.soh, "std": self.std, "confidence": self.confidence,
                "flags": list(self.flags), "temperature": self.temperature, "c_rate": self.c_rate,
                "contributions": {k: {"soh": s, "var": v} for k, (s, v) in sorted(self.contributions.items())}}


class SohLut:
    """Immutable set of per-temperature linear rows, one per retained feature."""

    def __init__(self, rows, config: LutConfig | None = None, nominal_capacity: float = float("nan")):
        self.config = config or LutConfig()
        self.nominal_capacity = float(nominal_capacity)
        self._rows = tuple(sorted(rows, key=lambda r: (r.feature, r.temperature)))
        if not self._rows:
            raise CalibrationError("empty lookup table")
        self.temperatures = tuple(sorted({r.temperature for r in self._rows}))
        self._by = {(r.feature, r.temperature): r for r in self._rows}

    @property
    def rows(self):
        return self._rows

    @property
    def features(self):
        return tuple(sorted({r.feature for r in self._rows}))

    @property
    def temperature_range(self):
        """Temperatures accepted as in-range: the calibration grid plus a margin."""
        m = self.config.temperature_margin
        return self.temperatures[0] - m, self.temperatures[-1] + m

    @property
    def max_c_rate(self):
        return self.config.max_c_rate

    def row(self, feature: str, temperature: float):
        return self._by.get((feature, temperature))

    def _bracket(self, temperature: float):
        ts = self.temperatures
        if temperature <= ts[0]:
            return ts[0], ts[0], 0.0, temperature < ts[0]
        if temperature >= ts[-1]:
            return ts[-1], ts[-1], 0.0, temperature > ts[-1]
        k = int(np.searchsorted(ts, temperature, side="right"))
        lo, hi = ts[k - 1], ts[k]
        return lo, hi, (temperature - lo) / (hi - lo), False

    def lookup(self, feature: str, value: float, temperature: float):
        """SOH and variance for one feature value, or None if the feature is not usable here.

        Between two calibrated temperatures the two rows' estimates are
        blended linearly; outside the grid the nearest row is used.
        Returns ``(soh, var, extrapolated)``.
        """
        lo, hi, w, _ = self._bracket(temperature)
        t_lo, t_hi = self.temperature_range
        outside = not (t_lo <= temperature <= t_hi)
        r0, r1 = self.row(feature, lo), self.row(feature, hi)
        if r0 is None or r1 is None:
            return None
        soh = (1 - w) * r0.soh(value) + w * r1.soh(value)
        var = max((1 - w) * r0.resid_var + w * r1.resid_var, self.config.var_floor)
        f_lo = min(r0.feature_min, r1.feature_min)
        f_hi = max(r0.feature_max, r1.feature_max)
        span = self.config.range_margin * max(f_hi - f_lo, abs(f_hi), 1e-12)
        extrap = outside or not (f_lo - span <= value <= f_hi + span)
        return soh, var, extrap

    # --- persistence ---

    def dumps(self) -> str:
        c = self.config
        lines = [f"# {LUT_FORMAT} v{LUT_VERSION}",
                 f"# nominal_capacity {self.nominal_capacity!r}",
                 f"# r2_threshold {c.r2_threshold!r}",
                 f"# min_levels {c.min_levels!r}",
                 f"# max_c_rate {c.max_c_rate!r}",
                 f"# c_rate_tolerance {c.c_rate_tolerance!r}",
                 f"# var_floor {c.var_floor!r}",
                 f"# range_margin {c.range_margin!r}",
                 f"# temperature_margin {c.temperature_margin!r}",
                 " ".join(_COLUMNS)]
        for r in self._rows:
            lines.append(" ".join([r.feature] + [repr(float(getattr(r, k))) if k != "n" else str(r.n)
                                                 for k in _COLUMNS[1:]]))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "SohLut":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(f"# {LUT_FORMAT} v"):
            raise SohError("not a lookup-table file")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != LUT_VERSION:
            raise SohError(f"unsupported lookup-table version {version}")
        meta, body = {}, []
        for ln in lines[1:]:
            if ln.startswith("#"):
                k, v = ln[1:].split()
                meta[k] = float(v)
            elif ln.strip():
                body.append(ln.split())
        if not body or tuple(body[0]) != _COLUMNS:
            raise SohError("missing or malformed column header")
        rows = []
        for parts in body[1:]:
            if len(parts) != len(_COLUMNS):
                raise SohError(f"bad row: {' '.join(parts)}")
            vals = {k: float(v) for k, v in zip(_COLUMNS[1:], parts[1:])}
            vals["n"] = int(vals["n"])
            rows.append(LutRow(parts[0], **vals))
        nominal = meta.pop("nominal_capacity", float("nan"))
        meta["min_levels"] = int(meta.get("min_levels", 5))
        return cls(rows, LutConfig(**meta), nominal)

    @classmethod
    def load(cls, path) -> "SohLut":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def build_lut(aged_dataset, config: LutConfig | None = None, nominal_capacity: float = float("nan")) -> SohLut:
    """Fit one feature -> SOH line per feature and calibration temperature.

    ``aged_dataset`` holds ``(features, true_soh, temperature)`` triples where
    ``features`` is a :class:`DvaFeatureSet` or a plain ``{id: value}`` dict.
    Rows whose R^2 falls below the threshold are dropped.
    """
    config = config or LutConfig()
    groups: dict = {}
    for feats, soh, temp in aged_dataset:
        vals = feats.values() if isinstance(feats, DvaFeatureSet) else dict(feats)
        for name, v in vals.items():
            if np.isfinite(v):
                groups.setdefault((name, float(temp)), []).append((float(v), float(soh)))
    if not groups:
        raise CalibrationError("no calibration data")
    for temp in {t for _, t in groups}:
        levels = {round(s, 6) for (n, t), pts in groups.items() if t == temp for _, s in pts}
        if len(levels) < config.min_levels:
            raise CalibrationError(f"{len(levels)} SOH levels at {temp} degC, need {config.min_levels}")
    rows = []
    for (name, temp), pts in sorted(groups.items()):
        x, y = np.array(pts).T
        if len(set(np.round(y, 6))) < config.min_levels:
            continue
        a, b, r2, var = fit_line(x, y)
        if abs(r2) < config.r2_threshold or b == 0:
            continue
        rows.append(LutRow(name, temp, a, b, r2, var, len(x), float(x.min()), float(x.max()),
                           float(y.min()), float(y.max())))
    if not rows:
        raise CalibrationError(f"no feature reached R^2 >= {config.r2_threshold}")
    return SohLut(rows, config, nominal_capacity)


def estimate_soh(features, lut: SohLut, temperature: float | None = None,
                 c_rate: float | None = None) -> SohEstimate:
    """Inverse-variance fusion of every LUT feature present in ``features``."""
    if isinstance(features, DvaFeatureSet):
        vals = features.values()
        temperature = features.mean_temperature if temperature is None else temperature
        c_rate = features.mean_c_rate if c_rate is None else c_rate
    else:
        vals = dict(features)
        if temperature is None:
            raise EstimationError("temperature required with plain feature values")
    c_rate = float("nan") if c_rate is None else float(c_rate)
    contrib, extrap = {}, False
    for name in lut.features:
        if name not in vals or not np.isfinite(vals[name]):
            continue
        hit = lut.lookup(name, vals[name], temperature)
        if hit is None:
            continue
        soh, var, ex = hit
        contrib[name] = (soh, var)
        extrap |= ex
    if not contrib:
        raise EstimationError("no usable features for this lookup table")
    w = np.array([1.0 / v for _, v in contrib.values()])
    s = np.array([x for x, _ in contrib.values()])
    soh = float(np.sum(w * s) / np.sum(w))
    std = float(np.sqrt(1.0 / np.sum(w)))
    flags = []
    lo, hi = lut.temperature_range
    if not (lo <= temperature <= hi) or extrap:
        flags.append("extrapolated")
    if np.isfinite(c_rate) and c_rate > lut.config.max_c_rate * (1 + lut.config.c_rate_tolerance):
        flags.append("degraded-by-c-rate")
    confidence = "degraded-by-c-rate" if "degraded-by-c-rate" in flags else (
        "extrapolated" if flags else "in-range")
    return SohEstimate(soh, std, confidence, contrib, float(temperature), c_rate, tuple(flags))
