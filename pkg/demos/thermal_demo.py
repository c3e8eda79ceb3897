"""Watch a 16-sensor pack develop a runaway seed and compare with a 55 degC threshold.

Run: python3 demos/thermal_demo.py   (a few seconds)
"""

from __future__ import annotations

from battcloud.synthcell import FaultSpec, ThermalSimConfig, daily_duty, simulate_thermal
from battcloud.thermalwatch import batches_from_matrix, watch


def main():
    tc = ThermalSimConfig()
    onset, horizon = 36 * 3600.0, 60 * 3600.0
    sim = simulate_thermal(tc, daily_duty(horizon / 86400.0, seed=1), FaultSpec("runaway-seed", onset, 5.0, 11),
                           horizon=horizon, dt=10.0, seed=2, record_every=6)
    verdicts, state = watch(batches_from_matrix(sim.time, sim.measured))
    first = next(v for v in verdicts if v.triggered)
    c55 = sim.crossing_time(55.0)
    print(f"{len(verdicts)} windows watched, {sum(v.triggered for v in verdicts)} flagged")
    print(f"fault starts at {onset / 3600:.1f} h on sensor 11")
    print(f"first flag at {first.end / 3600:.2f} h: sensors {first.offending_sensors} ({first.criterion})")
    print(f"55 degC crossed at {c55 / 3600:.2f} h, so the warning came {(c55 - first.end) / 60:.0f} min earlier")
    print(f"frozen reference memberships: {state.reference.memberships}")


if __name__ == "__main__":
    main()
