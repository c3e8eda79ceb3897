"""Coulomb counting, windowed input features and the feed-forward SOC network."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..telemetry import ChargeSegment, resample_uniform

MODEL_FORMAT = "battcloud-soc-network"
MODEL_VERSION = 1


class SocError(ValueError):
    pass


@dataclass(frozen=True)
class SocEstimate:
    soc: float  # percent
    timestamp: float
    source: str = "network"  # "coulomb" or "network"

    def __post_init__(self):
        if not 0.0 <= self.soc <= 100.0:
            raise SocError(f"SOC {self.soc} outside [0, 100]")


class SocTrace(list):
    """List of estimates that also records how many points were clamped."""

    def __init__(self, items=(), clamp_events: int = 0):
        super().__init__(items)
        self.clamp_events = clamp_events


def coulomb_soc(t, current, capacity_ah: float, z0: float):
    """Unclamped ``z(t) = z0 + (1/C) * integral(i)`` as a fraction, trapezoidal rule."""
    if capacity_ah <= 0:
        raise SocError("capacity must be positive")
    t = np.asarray(t, float)
    i = np.asarray(current, float)
    q = np.concatenate([[0.0], np.cumsum(0.5 * (i[1:] + i[:-1]) * np.diff(t))])
    return z0 + q / (3600.0 * capacity_ah)


def coulomb_count(segment, capacity_ah: float, z0: float) -> SocTrace:
    """Coulomb-counted SOC in percent, one estimate per sample, clamped to [0, 100]."""
    if capacity_ah <= 0:
        raise SocError("capacity must be positive")
    if not 0.0 <= z0 <= 1.0:
        raise SocError("z0 must lie in [0, 1]")
    if isinstance(segment, ChargeSegment):
        arr = segment.arrays()
        t, i = arr.time, arr.current
    else:
        t, i = segment
    z = 100.0 * coulomb_soc(t, i, capacity_ah, z0)
    clamped = (z < 0.0) | (z > 100.0)
    z = np.clip(z, 0.0, 100.0)
    return SocTrace((SocEstimate(float(s), float(ts), "coulomb") for s, ts in zip(z, t)),
                    int(clamped.sum()))


def rate_limit(previous: SocEstimate, candidate: SocEstimate, max_step: float) -> SocEstimate:
    """Move from ``previous`` toward ``candidate`` by at most ``max_step`` percent per second."""
    if max_step <= 0:
        raise SocError("max_step must be positive")
    dt = max(candidate.timestamp - previous.timestamp, 0.0)
    room = max_step * dt
    step = min(max(candidate.soc - previous.soc, -room), room)
    return SocEstimate(min(max(previous.soc + step, 0.0), 100.0), candidate.timestamp, candidate.source)


# --- input features ---

@dataclass(frozen=True)
class WindowConfig:
    """Present plus ``history`` past (V, I, T) triples spaced ``downsample * dt`` seconds apart."""

    history: int = 4
    downsample: int = 3
    dt: float = 10.0

    def __post_init__(self):
        if self.history < 0 or self.downsample < 1 or self.dt <= 0:
            raise SocError("invalid window configuration")

    @property
    def n_inputs(self) -> int:
        return 3 * (self.history + 1)

    @property
    def lag_steps(self) -> int:
        return self.history * self.downsample


@dataclass(frozen=True)
class Normalization:
    mean: tuple
    scale: tuple

    def __post_init__(self):
        if len(self.mean) != len(self.scale):
            raise SocError("mean and scale lengths differ")
        if any(not s > 0 for s in self.scale):
            raise SocError("normalization scales must be positive")

    @classmethod
    def identity(cls, n: int) -> "Normalization":
        return cls((0.0,) * n, (1.0,) * n)

    @classmethod
    def fit(cls, x) -> "Normalization":
        x = np.asarray(x, float)
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(tuple(mean.tolist()), tuple(scale.tolist()))

    def apply(self, x):
        return (np.asarray(x, float) - np.asarray(self.mean)) / np.asarray(self.scale)


def uniform_channels(segment, dt: float):
    """Resample cell voltage, current and temperature of a segment onto one grid."""
    if isinstance(segment, ChargeSegment):
        arr = segment.arrays()
        t, v, i, temp = arr.time, arr.cell_voltage, arr.current, arr.temperature
    else:
        t, v, i, temp = (np.asarray(a, float) for a in segment)
    grid, vv = resample_uniform(t, v, dt, t[0])
    if len(grid) == 0:
        return grid, np.empty((0, 3))
    ok_i, ok_t = np.isfinite(i), np.isfinite(temp)
    ii = np.interp(grid, t[ok_i], i[ok_i]) if ok_i.any() else np.full(len(grid), np.nan)
    tt = np.interp(grid, t[ok_t], temp[ok_t]) if ok_t.any() else np.full(len(grid), np.nan)
    return grid, np.column_stack([vv, ii, tt])


def stack_history(channels: np.ndarray, window: WindowConfig) -> np.ndarray:
    """Rows ``[x(k), x(k-d), ..., x(k-H*d)]`` for every k with a full history."""
    lag = window.lag_steps
    n = len(channels)
    if n <= lag:
        return np.empty((0, window.n_inputs))
    cols = [channels[lag - h * window.downsample: n - h * window.downsample]
            for h in range(window.history + 1)]
    return np.concatenate(cols, axis=1)


def build_features(segment, window: WindowConfig | None = None, normalization: Normalization | None = None):
    """Feature matrix and timestamps for a charge.

    Each row holds present (V, I, T) followed by the ``history`` downsampled
    past values. Rows are raw physical values unless ``normalization`` is
    given; a trained network normalizes internally.
    """
    window = window or WindowConfig()
    grid, ch = uniform_channels(segment, window.dt)
    x = stack_history(ch, window)
    ts = grid[window.lag_steps:] if len(x) else np.empty(0)
    if normalization is not None and len(x):
        x = normalization.apply(x)
    return x, ts


# --- network ---

_ACT = {
    "tanh": (np.tanh, lambda a, z: 1.0 - a * a),
    "sigmoid": (lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)), lambda a, z: a * (1.0 - a)),
    "linear": (lambda z: z, lambda a, z: np.ones_like(z)),
}


@dataclass(frozen=True)
class FullChargeRule:
    """Operational "fully charged": cell voltage high and current tapered off."""

    voltage: float = 4.15
    c_rate: float = 0.05
    capacity_ah: float = 50.0

    def holds(self, voltage, current):
        return (np.asarray(voltage) >= self.voltage) & (np.abs(current) <= self.c_rate * self.capacity_ah)


@dataclass
class SocNetwork:
    layer_sizes: tuple
    activations: tuple  # one per non-input layer
    weights: list  # (out, in) arrays
    biases: list
    normalization: Normalization
    window: WindowConfig = field(default_factory=WindowConfig)
    target_offset: float = 0.0
    target_scale: float = 1.0
    full_charge: FullChargeRule = field(default_factory=FullChargeRule)
    output_clamp: tuple = (0.0, 100.0)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        self.layer_sizes = sizes
        self.activations = tuple(self.activations)
        if len(sizes) < 2 or sizes[-1] != 1:
            raise SocError("need at least an input and a single-output layer")
        if len(self.activations) != len(sizes) - 1 or any(a not in _ACT for a in self.activations):
            raise SocError("one known activation per layer required")
        self.weights = [np.asarray(w, float) for w in self.weights]
        self.biases = [np.asarray(b, float) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise SocError(f"layer {k} shapes inconsistent with layer_sizes")
        if len(self.weights) != len(sizes) - 1:
            raise SocError("wrong number of layers")
        if len(self.normalization.mean) != sizes[0]:
            raise SocError("normalization length differs from input size")
        if not self.target_scale > 0:
            raise SocError("target scale must be positive")

    @classmethod
    def initialize(cls, layer_sizes, rng: np.random.Generator, activations=None, **kw) -> "SocNetwork":
        """Glorot-uniform weights, zero biases."""
        sizes = tuple(layer_sizes)
        if activations is None:
            activations = ("tanh",) * (len(sizes) - 2) + ("linear",)
        ws, bs = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = math.sqrt(6.0 / (n_in + n_out))
            ws.append(rng.uniform(-lim, lim, (n_out, n_in)))
            bs.append(np.zeros(n_out))
        kw.setdefault("normalization", Normalization.identity(sizes[0]))
        return cls(sizes, tuple(activations), ws, bs, **kw)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, float)
        if theta.shape != (self.n_params,):
            raise SocError("parameter vector has the wrong length")
        pos = 0
        for k, w in enumerate(self.weights):
            self.weights[k] = theta[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            nb = self.biases[k].size
            self.biases[k] = theta[pos:pos + nb].copy()
            pos += nb

    def copy(self) -> "SocNetwork":
        return SocNetwork(self.layer_sizes, self.activations, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases], self.normalization, self.window,
                          self.target_offset, self.target_scale, self.full_charge, self.output_clamp)

    def _check(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.layer_sizes[0]:
            raise SocError(f"expected {self.layer_sizes[0]} inputs, got {x.shape[1]}")
        return x

    def _forward(self, xn):
        acts = [xn]
        zs = []
        a = xn
        for w, b, name in zip(self.weights, self.biases, self.activations):
            z = a @ w.T + b
            a = _ACT[name][0](z)
            zs.append(z)
            acts.append(a)
        return acts, zs

    def raw_output(self, x) -> np.ndarray:
        """Network output in the model's normalized target units, no clamp."""
        acts, _ = self._forward(self.normalization.apply(self._check(x)))
        return acts[-1][:, 0]

    def jacobian(self, x) -> np.ndarray:
        """d raw_output / d params, one row per sample, in ``get_params`` order."""
        acts, zs = self._forward(self.normalization.apply(self._check(x)))
        n = acts[0].shape[0]
        delta = _ACT[self.activations[-1]][1](acts[-1], zs[-1])  # (n, 1)
        blocks = []
        for k in range(len(self.weights) - 1, -1, -1):
            gw = (delta[:, :, None] * acts[k][:, None, :]).reshape(n, -1)
            blocks.append(np.concatenate([gw, delta], axis=1))
            if k:
                delta = (delta @ self.weights[k]) * _ACT[self.activations[k - 1]][1](acts[k], zs[k - 1])
        return np.concatenate(blocks[::-1], axis=1)

    def unclamped(self, x) -> np.ndarray:
        """Network output in percent before clamping and the full-charge rule."""
        return self.target_offset + self.target_scale * self.raw_output(x)

    def predict_batch(self, x) -> np.ndarray:
        x = self._check(x)
        soc = np.clip(self.unclamped(x), *self.output_clamp)
        return np.where(self.full_charge.holds(x[:, 0], x[:, 1]), 100.0, soc)

    # --- persistence ---

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION,
            "layer_sizes": list(self.layer_sizes), "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases],
            "normalization": {"mean": list(self.normalization.mean), "scale": list(self.normalization.scale)},
            "window": {"history": self.window.history, "downsample": self.window.downsample,
                       "dt": self.window.dt},
            "target_offset": self.target_offset, "target_scale": self.target_scale,
            "full_charge": {"voltage": self.full_charge.voltage, "c_rate": self.full_charge.c_rate,
                            "capacity_ah": self.full_charge.capacity_ah},
            "output_clamp": list(self.output_clamp),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SocNetwork":
        if d.get("format") != MODEL_FORMAT:
            raise SocError("not a SOC network file")
        if d.get("version") != MODEL_VERSION:
            raise SocError(f"unsupported model version {d.get('version')}")
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), d["weights"], d["biases"],
                   Normalization(tuple(d["normalization"]["mean"]), tuple(d["normalization"]["scale"])),
                   WindowConfig(**d["window"]), d["target_offset"], d["target_scale"],
                   FullChargeRule(**d["full_charge"]), tuple(d["output_clamp"]))

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips exactly
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SocNetwork":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict(network: SocNetwork, feature_vector, timestamp: float = 0.0) -> SocEstimate:
    x = np.asarray(feature_vector, float)
    if x.ndim != 1 or x.shape[0] != network.layer_sizes[0]:
        raise SocError(f"expected a vector of {network.layer_sizes[0]} raw features")
    return SocEstimate(float(network.predict_batch(x[None, :])[0]), float(timestamp), "network")
