"""Half-cell open-circuit potentials.

Both electrodes are parametrised against their lithiation fraction ``s`` in
(0, 1), and every potential decreases monotonically with ``s``. Two-phase
plateaus are modelled as logistic steps; the steep regions near empty and
full come from exponential edge terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

_EPS = 1e-9


@dataclass(frozen=True)
class HalfCellOCP:
    """``U(s) = base + slope*s + sum(h * step(s; c, w)) + lo*exp(-s/wl) - hi*exp(-(1-s)/wh)``."""

    name: str
    base: float
    slope: float = 0.0
    steps: tuple[tuple[float, float, float], ...] = ()  # (height, centre, width)
    low_edge: tuple[float, float] = (0.0, 1.0)  # (height, width)
    high_edge: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.slope > 0:
            raise ValueError("slope must be <= 0 for a decreasing potential")
        for h, _, w in self.steps:
            if h < 0 or w <= 0:
                raise ValueError("step heights must be >= 0 and widths > 0")
        for h, w in (self.low_edge, self.high_edge):
            if h < 0 or w <= 0:
                raise ValueError("edge heights must be >= 0 and widths > 0")

    def __call__(self, s):
        s = np.clip(s, _EPS, 1 - _EPS)
        u = self.base + self.slope * s
        for h, c, w in self.steps:
            u = u + 0.5 * h * (1.0 - np.tanh((s - c) / w))
        hl, wl = self.low_edge
        hh, wh = self.high_edge
        return u + hl * np.exp(-s / wl) - hh * np.exp(-(1.0 - s) / wh)

    def deriv(self, s):
        s = np.clip(s, _EPS, 1 - _EPS)
        d = self.slope + 0.0 * s
        for h, c, w in self.steps:
            d = d - 0.5 * h / w / np.cosh((s - c) / w) ** 2
        hl, wl = self.low_edge
        hh, wh = self.high_edge
        return d - hl / wl * np.exp(-s / wl) - hh / wh * np.exp(-(1.0 - s) / wh)

    def table(self, n: int = 201):
        s = np.linspace(0.0, 1.0, n)
        s[0], s[-1] = 1e-4, 1 - 1e-4
        return s, self(s)

    def to_dict(self) -> dict:
        return {"kind": "parametric", "name": self.name, "base": self.base, "slope": self.slope,
                "steps": [list(x) for x in self.steps], "low_edge": list(self.low_edge),
                "high_edge": list(self.high_edge)}


class TableOCP:
    """Monotone (PCHIP) interpolation of a tabulated half-cell potential."""

    def __init__(self, name: str, stoich, potential):
        s = np.asarray(stoich, float)
        u = np.asarray(potential, float)
        if s.ndim != 1 or s.shape != u.shape or len(s) < 3:
            raise ValueError("need matching 1-D tables with at least 3 points")
        if np.any(np.diff(s) <= 0):
            raise ValueError("stoichiometry must be strictly increasing")
        if np.any(np.diff(u) >= 0):
            raise ValueError("potential must decrease strictly with stoichiometry")
        self.name = name
        self.stoich, self.potential = s, u
        self._f = PchipInterpolator(s, u, extrapolate=True)
        self._df = self._f.derivative()

    def __call__(self, s):
        return self._f(np.clip(s, self.stoich[0], self.stoich[-1]))

    def deriv(self, s):
        return self._df(np.clip(s, self.stoich[0], self.stoich[-1]))

    def table(self, n: int | None = None):
        return self.stoich.copy(), self.potential.copy()

    def to_dict(self) -> dict:
        return {"kind": "table", "name": self.name, "stoich": self.stoich.tolist(),
                "potential": self.potential.tolist()}


def ocp_from_dict(d: dict):
    if d.get("kind") == "table":
        return TableOCP(d["name"], d["stoich"], d["potential"])
    return HalfCellOCP(d["name"], d["base"], d.get("slope", 0.0),
                       tuple(tuple(x) for x in d.get("steps", ())),
                       tuple(d.get("low_edge", (0.0, 1.0))), tuple(d.get("high_edge", (0.0, 1.0))))


# Graphite: two staging transitions (near x = 0.15 and x = 0.35) separate three
# plateaus; the exponential term is the steep delithiated end.
GRAPHITE = HalfCellOCP(
    "graphite", base=0.085, slope=-0.02,
    steps=((0.06, 0.15, 0.02), (0.035, 0.35, 0.02)),
    low_edge=(0.8, 0.02),
)

# NMC-like sloping cathode with one weak phase transition near y = 0.35.
NMC = HalfCellOCP(
    "nmc", base=4.40, slope=-0.95,
    steps=((0.06, 0.35, 0.025),),
    high_edge=(0.6, 0.02),
)

# LFP-like flat cathode with steep ends.
LFP = HalfCellOCP(
    "lfp", base=3.45, slope=-0.04,
    low_edge=(0.6, 0.03), high_edge=(0.8, 0.02),
)

BUILTIN = {"graphite": GRAPHITE, "nmc": NMC, "lfp": LFP}
