"""Synthetic battery telemetry: charge curves with degradation, lumped thermal dynamics."""

from .cell import (Alignment, CellSimConfig, DegradationState, SimulatedCharge, SimulationError,
                   electrode_alignment, ocv, simulate_charge, true_capacity)
from .ocp import BUILTIN, GRAPHITE, LFP, NMC, HalfCellOCP, TableOCP
from .fleet import (emit_fleet, load_manifest, load_scenario, load_truth, read_soc_trace, run_thermal_spec,
                    thermal_items)
from .thermal import (FAULT_KINDS, DutyProfile, FaultSpec, StepSizeError, ThermalRun, ThermalSimConfig,
                      daily_duty, simulate_thermal)
