"""Train the SOC network on simulated charges and compare it with coulomb counting.

Run: python3 demos/soc_demo.py   (a few minutes)
"""

from __future__ import annotations

import numpy as np

from battcloud.socmodel import LMConfig, WindowConfig, build_features, coulomb_soc, evaluate, train
from battcloud.synthcell import CellSimConfig, simulate_charge

CELL = CellSimConfig()


def charge(ambient, rate, soc0, seed):
    sim = simulate_charge(CELL, None, ambient, rate, 2.0, soc0, seed=seed)
    x, ts = build_features(sim.segment, WindowConfig())
    t = np.array([s.timestamp for s in sim.samples])
    return sim, x, 100.0 * np.interp(ts, t, sim.true_soc)


def main():
    parts = [charge(T, r, z, k) for k, (T, r, z) in enumerate(
        (T, r, z) for T in (-10.0, 0.0, 25.0, 40.0, 50.0) for r in (0.1, 0.25, 0.5, 0.75, 1.0) for z in (0.0, 0.3))]
    x = np.vstack([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    net, rep = train(x, y, lm=LMConfig(max_iter=150))
    print(f"trained on {len(y)} rows: test RMSE {rep.rmse_test:.2f} %, max {rep.max_abs_error_test:.2f} %")

    # an unseen charge, and coulomb counting started from a wrong initial SOC
    sim, xh, yh = charge(10.0, 0.35, 0.2, 99)
    print(f"held-out charge at 10 degC (not a training ambient), 0.35 C: RMSE {evaluate(net, xh, yh).rmse_test:.2f} %")
    t = np.array([s.timestamp for s in sim.samples])
    i = np.array([s.pack_current for s in sim.samples])
    wrong = 100.0 * coulomb_soc(t, i, CELL.nominal_capacity, 0.3)
    print(f"coulomb counting from 30 % instead of 20 %: final error {wrong[-1] - 100 * sim.true_soc[-1]:+.1f} %")
    print(f"network final estimate {net.predict_batch(xh)[-1]:.1f} %, truth {100 * sim.true_soc[-1]:.1f} %")


if __name__ == "__main__":
    main()
