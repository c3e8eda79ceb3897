"""Calibrate the DVA/ICA lookup table on an aged fleet and estimate SOH of new charges.

Run: python3 demos/soh_demo.py   (about a minute)
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from battcloud.sohdva import build_lut, differential_curves, estimate_soh, extract_features, gate_segment
from battcloud.synthcell import CellSimConfig, DegradationState, simulate_charge, true_capacity

CELL = CellSimConfig()


def severity_for(soh):
    return brentq(lambda s: 100.0 * true_capacity(CELL, DegradationState.along_path(s)) / CELL.nominal_capacity
                  - soh, 0.0, 0.5)


def main():
    data = []
    for soh in (100.0, 95.0, 90.0, 85.0, 80.0):
        deg = DegradationState.along_path(severity_for(soh))
        for T in (10.0, 25.0, 40.0):
            sim = simulate_charge(CELL, deg, T, 0.5, 1.0, 0.05, seed=int(soh + T))
            data.append((extract_features(differential_curves(sim.segment)), soh, T))
    lut = build_lut(data, nominal_capacity=CELL.nominal_capacity)
    print(lut.dumps())

    rng = np.random.default_rng(1)
    for k in range(6):
        soh = rng.uniform(80.0, 100.0)
        T, rate = rng.choice([15.0, 25.0, 35.0]), (0.25, 0.5, 1.0)[k % 3]
        sim = simulate_charge(CELL, DegradationState.along_path(severity_for(soh)), T, rate, 1.0, 0.1, seed=k)
        gate = gate_segment(sim.segment, lut=lut)
        if not gate:
            print(f"true {soh:5.1f}  {T:4.0f} degC  {rate:.2f} C  -> gated ({gate.reason})")
            continue
        est = estimate_soh(extract_features(differential_curves(sim.segment)), lut)
        print(f"true {soh:5.1f}  {T:4.0f} degC  {rate:.2f} C  -> {est.soh:5.1f} +/- {est.std:.1f} [{est.confidence}]")


if __name__ == "__main__":
    main()
