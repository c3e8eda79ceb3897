"""Peak/valley features of differential curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .curves import DifferentialCurves, SohError


class FeatureMissingError(SohError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    """A named extremum: the ``rank``-th candidate inside a voltage window.

    Ranks count from 1 in order of increasing charge; negative ranks count
    from the end, so ``-1`` is the last candidate in the window.
    """

    name: str
    curve: str = "dv"  # "dv" or "ic"
    kind: str = "peak"  # "peak" or "valley"
    v_window: tuple[float, float] = (0.0, 10.0)
    rank: int = 1
    required: bool = True


@dataclass(frozen=True)
class DistanceSpec:
    name: str
    first: str
    second: str


@dataclass(frozen=True)
class FeatureConfig:
    features: tuple[FeatureSpec, ...]
    distances: tuple[DistanceSpec, ...] = ()
    # prominence thresholds in capacity-normalised units (dv * C_N and ic / C_N)
    dv_prominence: float = 0.2
    ic_prominence: float = 0.2
    min_separation_bins: int = 5

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        feats = tuple(FeatureSpec(**{**f, "v_window": tuple(f.get("v_window", (0.0, 10.0)))})
                      for f in d["features"])
        dists = tuple(DistanceSpec(**x) for x in d.get("distances", ()))
        rest = {k: v for k, v in d.items() if k not in ("features", "distances")}
        return cls(feats, dists, **rest)

    def to_dict(self) -> dict:
        return {
            "features": [dict(f.__dict__, v_window=list(f.v_window)) for f in self.features],
            "distances": [dict(x.__dict__) for x in self.distances],
            "dv_prominence": self.dv_prominence,
            "ic_prominence": self.ic_prominence,
            "min_separation_bins": self.min_separation_bins,
        }


# Default profile for the built-in graphite/NMC cell. Windows are in terminal
# volts and wide enough to follow the peaks across 10-40 degC, C/3-C/2 and
# 0-20 % capacity fade.
NMC_GRAPHITE_FEATURES = FeatureConfig(
    features=(
        FeatureSpec("dv_a1", "dv", "peak", (3.40, 3.70), 1, required=False),
        FeatureSpec("dv_a2", "dv", "peak", (3.65, 3.97), -1),
        FeatureSpec("dv_k", "dv", "peak", (3.98, 4.20), -1),
        FeatureSpec("ic_p2", "ic", "peak", (3.55, 3.90), 1, required=False),
        FeatureSpec("ic_p3", "ic", "peak", (3.85, 4.05), -1, required=False),
    ),
    distances=(
        DistanceSpec("dist_a2_k", "dv_a2", "dv_k"),
        DistanceSpec("dist_a1_a2", "dv_a1", "dv_a2"),
    ),
)


@dataclass(frozen=True)
class Feature:
    name: str
    curve: str
    kind: str
    q: float  # Ah on the curve's charge axis
    v: float  # V
    height: float  # curve value in native units
    prominence: float  # capacity-normalised


@dataclass(frozen=True)
class DvaFeatureSet:
    features: dict
    distances: dict
    mean_temperature: float
    mean_c_rate: float

    def values(self) -> dict:
        """Scalar feature values keyed by LUT feature id."""
        out = {f"{name}.height": f.height for name, f in self.features.items()}
        out.update(self.distances)
        return out


def find_extrema(y: np.ndarray, valid: np.ndarray | None, prominence: float, min_separation: int,
                 kind: str = "peak"):
    """Indices and prominences of local extrema passing both thresholds."""
    y = np.asarray(y, float)
    sig = y if kind == "peak" else -y
    if valid is not None:
        sig = np.where(valid, sig, np.nan)
        # masked bins cannot host or bridge an extremum
        sig = np.where(np.isfinite(sig), sig, np.nanmin(sig) if np.any(np.isfinite(sig)) else 0.0)
    idx, props = find_peaks(sig, prominence=prominence, distance=max(1, min_separation))
    return idx, props["prominences"]


def locate_peaks(axis: np.ndarray, y: np.ndarray, prominence: float, min_separation: int = 1,
                 kind: str = "peak") -> np.ndarray:
    """Axis locations of extrema; shifting ``axis`` shifts the result identically."""
    idx, _ = find_extrema(y, None, prominence, min_separation, kind)
    return np.asarray(axis)[idx]


def extract_features(curves: DifferentialCurves, config: FeatureConfig = NMC_GRAPHITE_FEATURES) -> DvaFeatureSet:
    cn = curves.capacity_ah
    scaled = {"dv": (curves.dv * cn, curves.searchable("dv"), config.dv_prominence),
              "ic": (curves.ic / cn, curves.searchable("ic"), config.ic_prominence)}
    cache = {}
    found: dict[str, Feature] = {}
    for spec in config.features:
        key = (spec.curve, spec.kind)
        if key not in cache:
            y, valid, prom = scaled[spec.curve]
            cache[key] = find_extrema(y, valid, prom, config.min_separation_bins, spec.kind)
        idx, proms = cache[key]
        lo, hi = spec.v_window
        inside = [(i, p) for i, p in zip(idx, proms) if lo <= curves.v_axis[i] <= hi]
        pos = spec.rank - 1 if spec.rank > 0 else spec.rank
        if not inside or not (-len(inside) <= pos < len(inside)):
            if spec.required:
                raise FeatureMissingError(f"feature {spec.name!r} not found in {spec.v_window} V")
            continue
        i, p = inside[pos]
        native = curves.dv if spec.curve == "dv" else curves.ic
        found[spec.name] = Feature(spec.name, spec.curve, spec.kind, float(curves.q_axis[i]),
                                   float(curves.v_axis[i]), float(native[i]), float(p))
    distances = {}
    for d in config.distances:
        if d.first in found and d.second in found:
            distances[d.name] = abs(found[d.second].q - found[d.first].q)
    return DvaFeatureSet(found, distances, curves.mean_temperature, curves.mean_c_rate)
