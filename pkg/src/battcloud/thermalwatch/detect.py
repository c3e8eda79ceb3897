"""Streaming anomaly detection over batches of temperature-sensor windows.

Every batch (one window per sensor, same time slice) is clustered by shape.
A sensor's membership is 0 when it follows the majority shape and 1 when it
does not. An anomaly is raised when memberships change or when a sensor's
SBD to its centroid jumps above its own history.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from ..telemetry import SignalWindow
from .shape import kshape, sbd, shape_extract, znormalize

log = logging.getLogger(__name__)

STATE_FORMAT = "battcloud-thermal-state"
STATE_VERSION = 1


@dataclass(frozen=True)
class WatchConfig:
    k: int = 2
    init_seed: int = 0
    n_init: int = 3
    max_iter: int = 50
    warmup: int = 24  # batches before the reference is frozen
    trailing: int = 48  # batches in the fitting-error median
    min_history: int = 8
    rise_factor: float = 3.0
    rise_abs: float = 0.15
    smooth: int = 5  # moving-average length applied before z-normalization; 1 disables
    static_ptp: float = 1.0  # degC: windows flatter than this carry no shape
    outlier_ptp: float = 1.5  # degC: a moving window inside a static batch must exceed this ...
    outlier_ratio: float = 3.0  # ... and this multiple of the batch median
    merge_sbd: float = 0.1  # clusters whose centroids are closer than this are one shape
    membership_first: bool = True  # evaluate fitting errors only when no membership changed
    # a rise must also stand out from the batch, otherwise it is pack-wide noise
    batch_relative: bool = True

    @classmethod
    def from_dict(cls, d: dict | None) -> "WatchConfig":
        return cls(**(d or {}))


@dataclass
class ClusterSnapshot:
    centroids: list  # list of lists
    memberships: dict  # sensor -> 0 (majority shape) / 1 (off-nominal)

    def to_dict(self):
        return {"centroids": self.centroids, "memberships": {str(k): v for k, v in self.memberships.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["centroids"], {int(k): v for k, v in d["memberships"].items()})


@dataclass
class ShapeClusterState:
    k: int
    centroids: list = field(default_factory=list)
    memberships: dict = field(default_factory=dict)
    fitting_errors: dict = field(default_factory=dict)  # sensor -> recent SBDs
    predecessor: ClusterSnapshot | None = None
    reference: ClusterSnapshot | None = None
    reference_errors: dict = field(default_factory=dict)  # sensor -> frozen median SBD
    batches: int = 0
    triggers: int = 0
    last_origin: float | None = None

    @property
    def frozen(self) -> bool:
        return self.reference is not None

    def to_dict(self) -> dict:
        return {
            "format": STATE_FORMAT, "version": STATE_VERSION, "k": self.k,
            "centroids": self.centroids,
            "memberships": {str(s): m for s, m in sorted(self.memberships.items())},
            "fitting_errors": {str(s): v for s, v in sorted(self.fitting_errors.items())},
            "predecessor": self.predecessor.to_dict() if self.predecessor else None,
            "reference": self.reference.to_dict() if self.reference else None,
            "reference_errors": {str(s): v for s, v in sorted(self.reference_errors.items())},
            "batches": self.batches, "triggers": self.triggers, "last_origin": self.last_origin,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeClusterState":
        if d.get("format") != STATE_FORMAT or d.get("version") != STATE_VERSION:
            raise ValueError("not a supported thermal-watch state snapshot")
        snap = lambda x: ClusterSnapshot.from_dict(x) if x else None  # noqa: E731
        return cls(d["k"], d["centroids"], {int(s): m for s, m in d["memberships"].items()},
                   {int(s): list(v) for s, v in d["fitting_errors"].items()},
                   snap(d["predecessor"]), snap(d["reference"]),
                   {int(s): v for s, v in d["reference_errors"].items()},
                   d["batches"], d["triggers"], d["last_origin"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ShapeClusterState":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class AnomalyVerdict:
    triggered: bool
    criterion: str  # "membership-change", "fitting-error-rise", "none"
    offending_sensors: list
    evidence: dict  # sensor -> dict of numbers and labels
    origin: float
    end: float
    static_batch: bool = False

    def __post_init__(self):
        if self.triggered and not self.offending_sensors:
            raise ValueError("a triggered verdict needs offending sensors")

    def to_dict(self) -> dict:
        return {"triggered": self.triggered, "criterion": self.criterion,
                "sensors": list(self.offending_sensors), "origin": self.origin, "end": self.end,
                "static": self.static_batch,
                "evidence": {str(s): self.evidence[s] for s in sorted(self.evidence)}}


def init_state(config: WatchConfig | None = None) -> ShapeClusterState:
    return ShapeClusterState((config or WatchConfig()).k)


def _prepare(values: np.ndarray, smooth: int) -> np.ndarray:
    if smooth > 1:
        values = uniform_filter1d(values, smooth, mode="nearest")
    return values


def _cluster(shapes: np.ndarray, config: WatchConfig, previous):
    """Best-of-``n_init`` k-shape; clusters with near-identical centroids are merged."""
    m = len(shapes)
    k = min(config.k, m)
    best = None
    for r in range(config.n_init):
        res = kshape(shapes, k, seed=config.init_seed + r, max_iter=config.max_iter)
        if best is None or res.objective < best.objective - 1e-12:
            best = res
    labels = best.labels.copy()
    cents = best.centroids
    # fold every cluster into the largest one when their shapes agree
    sizes = np.bincount(labels, minlength=k)
    major = int(np.argmax(sizes))
    for c in range(k):
        if c != major and sizes[c] and np.any(cents[c]) and np.any(cents[major]):
            if sbd(cents[c], cents[major], normalize=False)[0] < config.merge_sbd:
                labels[labels == c] = major
    sizes = np.bincount(labels, minlength=k)
    major = int(np.argmax(sizes))
    member = (labels != major).astype(int)
    ref = np.asarray(previous) if previous is not None and len(previous) else None
    c_major = shape_extract(shapes[member == 0], ref)
    c_minor = shape_extract(shapes[member == 1]) if member.any() else np.zeros(shapes.shape[1])
    return member, c_major, c_minor


def detect(batch, state: ShapeClusterState, config: WatchConfig | None = None,
           expected_sensors=None):
    """Score one batch and roll the state forward.

    Returns ``(verdict, state)``; the state object is updated in place.
    """
    config = config or WatchConfig()
    batch = sorted(batch, key=lambda w: w.sensor_id)
    if not batch:
        raise ValueError("empty batch")
    origin = float(batch[0].origin_timestamp)
    end = origin + (len(batch[0].values) - 1) * batch[0].dt
    sensors = [w.sensor_id for w in batch]
    expected = set(expected_sensors if expected_sensors is not None else state.memberships)
    missing = sorted(expected - set(sensors))
    if missing:
        log.warning("partial batch at %.0f: sensors %s missing", origin, missing)

    raw = np.array([_prepare(w.array(), config.smooth) for w in batch])
    ptp = np.ptp(raw, axis=1)
    med_ptp = float(np.median(ptp))
    static_batch = med_ptp < config.static_ptp
    member = {}
    errors = {}
    rise_score = {}
    c_major = np.asarray(state.centroids[0]) if state.centroids else None
    centroids = state.centroids
    if static_batch:
        for s, p in zip(sensors, ptp):
            odd = p > max(config.outlier_ptp, config.outlier_ratio * med_ptp)
            member[s] = int(odd)
            rise_score[s] = float(p - med_ptp)
    else:
        flat = ptp < min(config.static_ptp, med_ptp / config.outlier_ratio)
        shapes = []
        idx = []
        for j, (s, x) in enumerate(zip(sensors, raw)):
            if flat[j]:
                member[s] = 1  # stopped moving while the rest of the pack moves
                rise_score[s] = float(med_ptp - ptp[j])
                continue
            shapes.append(znormalize(x)[0])
            idx.append(j)
        shapes = np.array(shapes)
        if len(shapes) >= 2:
            mem, c_major, c_minor = _cluster(shapes, config, c_major)
            centroids = [c_major.tolist(), c_minor.tolist()]
            for j, mm in zip(idx, mem):
                s = sensors[j]
                member[s] = int(mm)
                d_major = sbd(shapes[idx.index(j)], c_major, normalize=False)[0] if np.any(c_major) else 0.0
                rise_score[s] = d_major
                own = c_major if mm == 0 else c_minor
                errors[s] = sbd(shapes[idx.index(j)], own, normalize=False)[0] if np.any(own) else 0.0
        else:
            for j in idx:
                member[sensors[j]] = 0
                rise_score[sensors[j]] = 0.0

    evidence = {}
    changed = []
    warm = state.batches < config.warmup
    if not warm:
        for s in sensors:
            prev = state.predecessor.memberships.get(s) if state.predecessor else None
            ref = state.reference.memberships.get(s) if state.reference else None
            basis = []
            if prev is not None and prev != member[s]:
                basis.append("predecessor")
            if ref is not None and ref != member[s]:
                basis.append("reference")
            if basis:
                changed.append(s)
                evidence[s] = {"membership": member[s], "previous": prev, "reference": ref,
                               "basis": "+".join(basis), "rise": rise_score.get(s, 0.0),
                               "ptp": float(ptp[sensors.index(s)])}
    rising = []
    batch_med = float(np.median(list(errors.values()))) if errors else 0.0
    if not warm and (not changed or not config.membership_first):
        for s, e in errors.items():
            if config.batch_relative and e <= batch_med + config.rise_abs:
                continue
            hist = state.fitting_errors.get(s, [])[-config.trailing:]
            basis = []
            med = float(np.median(hist)) if len(hist) >= config.min_history else None
            if med is not None and e > config.rise_factor * med and e > med + config.rise_abs:
                basis.append("predecessor")
            ref_med = state.reference_errors.get(s)
            if ref_med is not None and e > config.rise_factor * ref_med and e > ref_med + config.rise_abs:
                basis.append("reference")
            if basis:
                rising.append(s)
                base = med if med is not None else ref_med
                ev = evidence.setdefault(s, {})
                ev.update({"sbd": e, "median": base, "delta": e - base, "reference_median": ref_med,
                           "rise_basis": "+".join(basis)})

    if changed:
        criterion = "membership-change"
    elif rising:
        criterion = "fitting-error-rise"
    else:
        criterion = "none"
    offending = isolate(evidence, state) if (changed or rising) else []
    verdict = AnomalyVerdict(bool(offending), criterion, offending, evidence, origin, end, static_batch)
    if verdict.triggered:
        state.triggers += 1

    # roll forward
    state.batches += 1
    state.last_origin = origin
    state.memberships = dict(member)
    state.centroids = centroids if centroids else state.centroids
    state.predecessor = ClusterSnapshot(list(state.centroids), dict(member))
    for s, e in errors.items():
        hist = state.fitting_errors.setdefault(s, [])
        hist.append(float(e))
        del hist[:-config.trailing]
    if state.batches == config.warmup:
        state.reference = ClusterSnapshot(list(state.centroids), dict(member))
    if state.frozen:
        for s, hist in state.fitting_errors.items():
            if s not in state.reference_errors and len(hist) >= config.min_history:
                state.reference_errors[s] = float(np.median(hist))
    return verdict, state


def isolate(evidence: dict, state: ShapeClusterState | None = None) -> list:
    """Sensors that changed membership, then sensors with a fitting-error rise; each group by rise."""
    moved = [s for s, ev in evidence.items() if "membership" in ev]
    risen = [s for s, ev in evidence.items() if "delta" in ev and s not in moved]
    moved.sort(key=lambda s: (-evidence[s].get("rise", 0.0), s))
    risen.sort(key=lambda s: (-evidence[s]["delta"], s))
    return moved + risen


def batches_from_matrix(times, values, window_len: int = 60, stride: int = 15, sensor_ids=None):
    """Yield lists of :class:`SignalWindow`, one per sensor column, over uniformly sampled data."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    dt = float(t[1] - t[0])
    ids = list(range(v.shape[1])) if sensor_ids is None else list(sensor_ids)
    for start in range(0, len(t) - window_len + 1, stride):
        seg = v[start:start + window_len]
        yield [SignalWindow(sid, tuple(seg[:, j].tolist()), dt, float(t[start]))
               for j, sid in enumerate(ids)]


def watch(batches, config: WatchConfig | None = None, state: ShapeClusterState | None = None):
    """Run :func:`detect` over a sequence of batches; returns (verdicts, state)."""
    config = config or WatchConfig()
    state = state or init_state(config)
    verdicts = []
    for b in batches:
        v, state = detect(b, state, config)
        verdicts.append(v)
    return verdicts, state
