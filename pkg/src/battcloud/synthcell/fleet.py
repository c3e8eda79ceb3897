"""Scenario-driven generation of telemetry files plus a separate ground-truth manifest."""

from __future__ import annotations

import json
import os

import numpy as np

from ..telemetry import TelemetrySample, write_samples
from .cell import CellSimConfig, DegradationState, SimulationError, simulate_charge
from .thermal import DutyProfile, FaultSpec, ThermalSimConfig, daily_duty, simulate_thermal

MANIFEST = "manifest.json"
TRUTH_DIR = "ground_truth"
TRUTH = "truth.json"
FLEET_FORMAT = "battcloud-fleet"
FLEET_VERSION = 1


def load_scenario(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _seeds(seed: int, n: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def _degradation(spec: dict) -> DegradationState:
    if "degradation" in spec:
        return DegradationState(**spec["degradation"])
    return DegradationState.along_path(float(spec.get("severity", 0.0)))


def _expand(entries: list) -> list:
    out = []
    for e in entries:
        count = int(e.get("count", 1))
        for k in range(count):
            item = dict(e)
            item["name"] = f"{e['name']}_{k:02d}" if count > 1 else e["name"]
            # per-copy values may be lists indexed by copy number
            for key in ("ambient", "c_rate", "soc0", "severity"):
                if isinstance(item.get(key), list):
                    item[key] = item[key][k % len(item[key])]
            out.append(item)
    return out


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def run_thermal_spec(spec: dict, seed: int):
    """Simulate one thermal scenario entry; returns (config, fault, run)."""
    tconf = ThermalSimConfig.from_dict(spec.get("config"))
    horizon = float(spec.get("days", 1.0)) * 86400.0
    duty = (DutyProfile.constant(float(spec["constant_power"])) if "constant_power" in spec
            else daily_duty(horizon / 86400.0, seed=seed % (2 ** 31)))
    fault = FaultSpec(**spec["fault"]) if spec.get("fault") else FaultSpec()
    run = simulate_thermal(tconf, duty, fault, horizon, float(spec.get("dt", 10.0)), seed=seed,
                           record_every=int(spec.get("record_every", 6)))
    return tconf, fault, run


def thermal_items(scenario: dict):
    """``(spec, seed)`` for every thermal entry, seeded exactly as :func:`emit_fleet` does."""
    charges = _expand(scenario.get("charges", []))
    thermals = _expand(scenario.get("thermal", []))
    seeds = _seeds(int(scenario.get("seed", 0)), len(charges) + len(thermals))
    return list(zip(thermals, seeds[len(charges):]))


def emit_fleet(scenario: dict, output_dir) -> dict:
    """Write every charge and thermal run of ``scenario`` under ``output_dir``.

    Telemetry goes to ``telemetry/*.csv`` and is listed in ``manifest.json``;
    hidden truth (SOC traces, capacities, fault onsets) goes to
    ``ground_truth/`` only. Output is a pure function of the scenario.
    """
    seed = int(scenario.get("seed", 0))
    cell = CellSimConfig.from_dict(scenario.get("cell"))
    charges = _expand(scenario.get("charges", []))
    thermals = _expand(scenario.get("thermal", []))
    names = [c["name"] for c in charges] + [t["name"] for t in thermals]
    if len(set(names)) != len(names):
        raise SimulationError("scenario item names must be unique")
    try:
        os.makedirs(os.path.join(output_dir, "telemetry"), exist_ok=True)
        os.makedirs(os.path.join(output_dir, TRUTH_DIR), exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {output_dir}: {exc}") from exc
    seeds = _seeds(seed, len(charges) + len(thermals))
    files, truth_charges, truth_thermal = [], {}, {}

    for spec, s in zip(charges, seeds):
        deg = _degradation(spec)
        sim = simulate_charge(cell, deg, float(spec.get("ambient", 25.0)), float(spec.get("c_rate", 0.5)),
                              float(spec.get("dt", 2.0)), float(spec.get("soc0", 0.0)),
                              rest_before=float(spec.get("rest_before", 0.0)),
                              rest_after=float(spec.get("rest_after", 0.0)), seed=s,
                              constant_power=bool(spec.get("constant_power", False)),
                              ripple=float(spec.get("ripple", 0.0)))
        rel = f"telemetry/{spec['name']}.csv"
        write_samples(sim.samples, os.path.join(output_dir, rel), n_cells=cell.n_cells,
                      n_temps=cell.n_temp_sensors)
        soc_rel = f"{TRUTH_DIR}/{spec['name']}_soc.csv"
        t = np.array([x.timestamp for x in sim.samples])
        with open(os.path.join(output_dir, soc_rel), "w", encoding="utf-8") as fh:
            fh.write("timestamp,true_soc_percent\n")
            for ts, z in zip(t, 100.0 * sim.true_soc):
                fh.write(f"{float(ts)!r},{float(z)!r}\n")
        files.append({"path": rel, "kind": "charge", "name": spec["name"],
                      "n_cells": cell.n_cells, "n_temps": cell.n_temp_sensors,
                      "nominal_capacity": cell.nominal_capacity})
        truth_charges[rel] = {
            "soc_trace": soc_rel, "true_capacity": sim.true_capacity,
            "soh": 100.0 * sim.true_capacity / cell.nominal_capacity,
            "ambient": float(spec.get("ambient", 25.0)), "c_rate": float(spec.get("c_rate", 0.5)),
            "soc0": float(spec.get("soc0", 0.0)), "degradation": deg.__dict__, "seed": s,
        }

    for spec, s in zip(thermals, seeds[len(charges):]):
        tconf, fault, run = run_thermal_spec(spec, s)
        rel = f"telemetry/{spec['name']}.csv"
        nan = float("nan")
        samples = [TelemetrySample(float(ts), 0.0, nan, (), tuple(float(x) for x in row), flags=0b10)
                   for ts, row in zip(run.time, run.measured)]
        write_samples(samples, os.path.join(output_dir, rel), n_cells=0, n_temps=tconf.n_sensors)
        files.append({"path": rel, "kind": "thermal", "name": spec["name"], "n_cells": 0,
                      "n_temps": tconf.n_sensors})
        truth_thermal[rel] = {
            "fault": fault.to_dict(), "seed": s,
            "crossing_55": run.crossing_time(55.0),
            "fault_sensor_crossing_55": (run.crossing_time(55.0, fault.sensor)
                                         if fault.kind != "none" else None),
            "gains": run.gains.tolist(), "offsets": run.offsets.tolist(),
            "max_true_temperature": float(run.true_temperature.max()),
        }

    manifest = {"format": FLEET_FORMAT, "version": FLEET_VERSION, "seed": seed, "files": files,
                "cell": cell.to_dict()}
    truth = {"format": FLEET_FORMAT + "-truth", "version": FLEET_VERSION,
             "charges": truth_charges, "thermal": truth_thermal}
    _dump(manifest, os.path.join(output_dir, MANIFEST))
    _dump(truth, os.path.join(output_dir, TRUTH_DIR, TRUTH))
    return manifest


def load_manifest(data_dir) -> dict:
    with open(os.path.join(data_dir, MANIFEST), encoding="utf-8") as fh:
        return json.load(fh)


def load_truth(data_dir) -> dict:
    with open(os.path.join(data_dir, TRUTH_DIR, TRUTH), encoding="utf-8") as fh:
        return json.load(fh)


def read_soc_trace(data_dir, rel) -> tuple[np.ndarray, np.ndarray]:
    d = np.loadtxt(os.path.join(data_dir, rel), delimiter=",", skiprows=1, ndmin=2)
    return d[:, 0], d[:, 1]
