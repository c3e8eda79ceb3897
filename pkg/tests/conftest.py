"""Shared, expensive fixtures: a trained SOC network and a calibrated SOH lookup table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from scipy.optimize import brentq

from battcloud.socmodel import LMConfig, WindowConfig, build_features, train
from battcloud.sohdva import build_lut, differential_curves, extract_features
from battcloud.synthcell import CellSimConfig, DegradationState, simulate_charge, true_capacity
from battcloud.telemetry import ChargeSegment, TelemetrySample

CELL = CellSimConfig()
SOC_TEMPS = (-10.0, 0.0, 25.0, 40.0, 50.0)
SOH_TEMPS = (10.0, 25.0, 40.0)
SOH_RATES = (1.0 / 3.0, 0.5)


def severity_for(soh: float) -> float:
    """Degradation severity giving a true SOH_C of ``soh`` percent."""
    return brentq(lambda s: 100.0 * true_capacity(CELL, DegradationState.along_path(s)) / CELL.nominal_capacity
                  - soh, 0.0, 0.5)


def labelled_charge(ambient, c_rate, soc0, seed, window=None, deg=None, **kw):
    """Feature rows of one simulated charge with hidden-truth SOC labels (percent)."""
    sim = simulate_charge(CELL, deg, ambient, c_rate, 2.0, soc0, seed=seed, **kw)
    x, ts = build_features(sim.segment, window or WindowConfig())
    t = np.array([s.timestamp for s in sim.samples])
    return x, 100.0 * np.interp(ts, t, sim.true_soc)


def linear_segment(a, b, current=10.0, capacity=50.0, dt=5.0, q_end=40.0):
    """Constant current charge whose voltage is exactly ``a + b*Q``."""
    n = int(q_end * 3600.0 / current / dt) + 1
    t = np.arange(n) * dt
    q = current * t / 3600.0
    samples = [TelemetrySample(float(tt), current, float(a + b * qq), (float(a + b * qq),), (25.0,))
               for tt, qq in zip(t, q)]
    return ChargeSegment.from_samples(samples, capacity)


def stack(parts):
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


@dataclass
class SocBundle:
    net: object
    report: object
    held_out: dict  # ambient -> (x, y)
    ac: tuple  # (x, y) for the low-current constant-power charges


@pytest.fixture(scope="session")
def soc_bundle() -> SocBundle:
    specs = [(T, rate, soc0) for T in SOC_TEMPS for rate in (0.1, 0.25, 0.5, 0.75, 1.0) for soc0 in (0.0, 0.3)]
    x, y = stack([labelled_charge(T, rate, soc0, seed=k) for k, (T, rate, soc0) in enumerate(specs)])
    net, report = train(x, y, lm=LMConfig(max_iter=150))
    held = {T: stack([labelled_charge(T, rate, 0.1, seed=1000 + int(rate * 100) + int(T)) for rate in (0.35, 0.8)])
            for T in SOC_TEMPS}
    ac = stack([labelled_charge(T, 0.12, 0.1, seed=2000 + int(T), constant_power=True, ripple=0.03)
                for T in (0.0, 25.0, 40.0)])
    return SocBundle(net, report, held, ac)


@dataclass
class SohBundle:
    lut: object
    calibration: list  # (features, soh, ambient)


@pytest.fixture(scope="session")
def soh_bundle() -> SohBundle:
    data = []
    for soh in (100.0, 96.0, 92.0, 88.0, 84.0, 80.0, 77.0):
        deg = DegradationState.along_path(severity_for(soh))
        for T in SOH_TEMPS:
            for rate in SOH_RATES:
                sim = simulate_charge(CELL, deg, T, rate, 1.0, 0.05, seed=int(soh * 7 + T))
                feats = extract_features(differential_curves(sim.segment))
                data.append((feats, 100.0 * sim.true_capacity / CELL.nominal_capacity, T))
    return SohBundle(build_lut(data, nominal_capacity=CELL.nominal_capacity), data)


# --- a small end-to-end CLI pipeline, run with paths relative to the working directory ---

CLI_SCENARIO = {
    "seed": 3,
    "charges": [
        {"name": "soc", "ambient": [0, 25, 40], "c_rate": [0.25, 0.5, 1.0], "soc0": 0.1, "count": 3, "dt": 10},
        {"name": "aged", "ambient": 25, "c_rate": 0.5, "severity": [0.0, 0.05, 0.1, 0.15, 0.2], "soc0": 0.05,
         "count": 5, "dt": 5},
        {"name": "fast", "ambient": 25, "c_rate": 2.0, "soc0": 0.05, "severity": 0.1, "dt": 5},
    ],
    "thermal": [{"name": "pack", "days": 1,
                 "fault": {"kind": "runaway-seed", "onset": 40000, "magnitude": 6, "sensor": 2}}],
}
CLI_REPLAY = {"seed": 5, "thermal": [{"name": "fault", "days": 1,
                                      "fault": {"kind": "runaway-seed", "onset": 40000, "magnitude": 6,
                                                "sensor": 2}}]}
CLI_STEPS = {
    "synth": ["synth", "--scenario", "scen.json", "--out", "fleet"],
    "ingest": ["ingest", "--input", "fleet/telemetry/soc_00.csv", "--out", "ingest"],
    "soc train": ["soc", "train", "--data", "fleet", "--config", "soc.json", "--out", "soc"],
    "soc eval": ["soc", "eval", "--data", "fleet", "--model", "soc/model.json", "--out", "soceval"],
    "soc predict": ["soc", "predict", "--input", "fleet/telemetry/soc_01.csv", "--model", "soc/model.json",
                    "--out", "socpred"],
    "soh gate": ["soh", "gate", "--input", "fleet/telemetry/fast.csv", "--out", "gate"],
    "soh curves": ["soh", "curves", "--input", "fleet/telemetry/aged_00.csv", "--out", "curves"],
    "soh calibrate": ["soh", "calibrate", "--data", "fleet", "--out", "cal"],
    "soh estimate": ["soh", "estimate", "--input", "fleet/telemetry/aged_02.csv", "--lut", "cal/lut.txt",
                     "--out", "est"],
    "soh estimate gated": ["soh", "estimate", "--input", "fleet/telemetry/fast.csv", "--lut", "cal/lut.txt",
                           "--out", "estfast"],
    "thermal watch": ["thermal", "watch", "--input", "fleet/telemetry/pack.csv", "--state", "watch.state",
                      "--out", "watch"],
    "thermal replay": ["thermal", "replay", "--scenario", "replay.json", "--out", "replay"],
    "report": ["report", "--input", ".", "--out", "rpt"],
}


def run_cli_pipeline() -> dict:
    """Run every CLI command in the current directory; returns exit codes by step."""
    import json

    from battcloud.cli import main

    for name, obj in (("scen.json", CLI_SCENARIO), ("replay.json", CLI_REPLAY),
                      ("soc.json", {"lm": {"max_iter": 15}})):
        with open(name, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
    return {step: main(argv) for step, argv in CLI_STEPS.items()}
