from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from battcloud.sohdva import (CalibrationError, DifferentialCurves, DistanceSpec, DvaFeatureSet, EstimationError,
                              FeatureConfig, FeatureMissingError, FeatureSpec, InsufficientDataError, LutConfig,
                              SohGateConfig, SohLut, build_lut, differential_curves, estimate_soh,
                              extract_features, fit_line, gate_segment, locate_peaks, soh_c)
from battcloud.synthcell import CellSimConfig, DegradationState, ocv, simulate_charge
from battcloud.telemetry import ChargeSegment, TelemetrySample

from conftest import CELL, linear_segment, severity_for


def curves_from(dv, q_axis, v_axis, capacity=50.0):
    dv = np.asarray(dv, float)
    valid = np.ones(len(dv), bool)
    return DifferentialCurves(np.asarray(q_axis, float), np.asarray(v_axis, float), 1.0 / dv, dv, valid, valid,
                              float(q_axis[1] - q_axis[0]), capacity, 0.3, 25.0, float(q_axis[-1]))


def synthetic_set(x, T=25.0, name="d"):
    return DvaFeatureSet({}, {name: float(x)}, T, 0.3)


# --- soh_c and gating ---

def test_soh_c_examples():
    assert soh_c(100, 100) == 100.0
    assert soh_c(80, 100) == 80.0
    assert abs(soh_c(41.3, 59.0) - 70.0) < 1e-9
    with pytest.raises(ValueError):
        soh_c(10, 0)


def test_gate_examples():
    third = simulate_charge(CELL, None, 25.0, 1 / 3, 2.0, 0.35, seed=1)
    assert third.segment.charge_throughput > 0.6 * CELL.nominal_capacity - 2.0
    assert gate_segment(third.segment).accepted
    fast = simulate_charge(CELL, None, 25.0, 2.0, 2.0, 0.1, seed=1)
    assert gate_segment(fast.segment).reason == "c-rate"
    quarter = simulate_charge(CELL, None, 25.0, 0.25, 2.0, 0.3, seed=1).segment
    # the first 12 minutes at C/4 carry 5 % of capacity
    short = ChargeSegment.from_samples(quarter.samples[:361], CELL.nominal_capacity)
    assert short.charge_throughput == pytest.approx(0.05 * CELL.nominal_capacity, rel=0.02)
    d = gate_segment(short)
    assert not d and d.reason == "charge-span"
    hot = gate_segment(third.segment, SohGateConfig(temperature_range=(30.0, 40.0)))
    assert hot.reason == "temperature"


# --- differential curves ---

@given(st.floats(3.0, 4.0), st.floats(0.001, 0.05))
@settings(max_examples=25, deadline=None)
def test_linear_voltage_gives_constant_derivatives(a, b):
    c = differential_curves(linear_segment(a, b))
    assert np.all(c.dv_valid) and np.all(c.ic_valid)
    assert np.max(np.abs(c.dv - b)) < 1e-9
    assert np.max(np.abs(c.ic - 1.0 / b)) < 1e-9 * (1.0 / b) ** 2


def test_reciprocal_and_integral_on_simulated_charge():
    sim = simulate_charge(CELL, DegradationState.along_path(0.1), 25.0, 0.5, 1.0, 0.05, seed=5)
    c = differential_curves(sim.segment)
    ok = c.ic_valid & c.dv_valid
    assert np.max(np.abs(c.ic[ok] * c.dv[ok] - 1.0)) < 1e-6
    assert np.all(np.isfinite(c.ic)) and np.all(np.isfinite(c.dv))
    assert len(c.q_axis) == len(c.v_axis) == len(c.ic) == len(c.dv)
    assert trapezoid(c.ic, c.v_axis) == pytest.approx(c.cc_throughput, rel=0.02)
    assert np.all(np.diff(c.q_axis) > 0)


def test_ic_peaks_match_analytic_plateaus():
    quiet = replace(CELL, series_resistance=0.0, rc_pairs=(), branch_resistance=1e-6, noise_voltage=0.0,
                    noise_current=0.0, noise_temperature=0.0)
    sim = simulate_charge(quiet, None, 25.0, 0.02, 20.0, 0.0, seed=0)
    c = differential_curves(sim.segment)
    pk, _ = find_peaks(np.where(c.ic_valid, c.ic, 0.0) / quiet.nominal_capacity, prominence=0.2)
    # oracle: dQ/dV of the open-circuit curve on a fine stoichiometry grid
    z = np.linspace(0.0, 1.0, 200001)
    v = ocv(quiet, None, z)
    ref, _ = find_peaks(np.gradient(z, v) * sim.true_capacity / quiet.nominal_capacity, prominence=0.2)
    assert len(pk) >= 2
    for k in pk:
        bin_volts = max(abs(c.v_axis[k] - c.v_axis[k - 1]), abs(c.v_axis[k + 1] - c.v_axis[k]))
        assert np.min(np.abs(v[ref] - c.v_axis[k])) <= bin_volts


def test_c10_ic_has_several_peaks():
    sim = simulate_charge(CELL, None, 25.0, 0.1, 5.0, 0.0, seed=3)
    c = differential_curves(sim.segment)
    pk, _ = find_peaks(np.where(c.ic_valid, c.ic, 0.0) / CELL.nominal_capacity, prominence=0.2)
    assert len(pk) >= 2


def test_short_segment_is_insufficient():
    with pytest.raises(InsufficientDataError):
        differential_curves(linear_segment(3.6, 0.01, q_end=0.5))


def test_export_two_columns(tmp_path):
    c = differential_curves(linear_segment(3.6, 0.01))
    c.export(tmp_path / "dv.dat", "dv")
    c.export(tmp_path / "ic.dat", "ic")
    d = np.loadtxt(tmp_path / "dv.dat")
    assert d.shape == (int(c.dv_valid.sum()), 2)
    assert np.allclose(np.loadtxt(tmp_path / "ic.dat")[:, 1], 100.0)


# --- peaks and features ---

def test_single_gaussian_one_peak():
    axis = np.linspace(0.0, 10.0, 401)
    y = np.exp(-0.5 * ((axis - 6.3) / 0.3) ** 2)
    loc = locate_peaks(axis, y, prominence=0.2)
    assert len(loc) == 1
    assert abs(loc[0] - 6.3) <= axis[1] - axis[0]


def test_two_gaussians_distance():
    q = np.linspace(0.0, 50.0, 201)
    v = np.linspace(3.5, 4.1, 201)
    for d in (8.0, 15.5, 22.25):
        dv = 0.01 + 0.02 * np.exp(-0.5 * ((q - 10.0) / 1.0) ** 2) + 0.02 * np.exp(-0.5 * ((q - 10.0 - d) / 1.0) ** 2)
        cfg = FeatureConfig((FeatureSpec("p1", "dv", "peak", (0.0, 9.0), 1), FeatureSpec("p2", "dv", "peak",
                                                                                        (0.0, 9.0), 2)),
                            (DistanceSpec("gap", "p1", "p2"),), dv_prominence=0.2)
        f = extract_features(curves_from(dv, q, v), cfg)
        assert abs(f.distances["gap"] - d) <= q[1] - q[0]
        assert all(x.prominence > 0 for x in f.features.values())


def test_missing_required_feature():
    q = np.linspace(0.0, 50.0, 101)
    cfg = FeatureConfig((FeatureSpec("p", "dv", "peak", (0.0, 9.0), 1),))
    with pytest.raises(FeatureMissingError):
        extract_features(curves_from(np.full(101, 0.01), q, np.linspace(3.5, 4.1, 101)), cfg)


@given(st.floats(-100.0, 100.0), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=50, deadline=None)
def test_peak_locations_translate_exactly(delta, seed):
    rng = np.random.default_rng(seed)
    axis = np.sort(rng.uniform(0.0, 10.0, 150))
    y = np.convolve(rng.normal(size=150), np.ones(7) / 7, mode="same")
    base = locate_peaks(axis, y, prominence=0.1, min_separation=3)
    moved = locate_peaks(axis + delta, y, prominence=0.1, min_separation=3)
    assert np.array_equal(moved, base + delta)


def test_peak_distance_shrinks_with_fade():
    dist = []
    for sev in (0.0, 0.05, 0.1, 0.15, 0.2):
        sim = simulate_charge(CELL, DegradationState.along_path(sev), 25.0, 0.1, 5.0, 0.0, seed=9)
        dist.append(extract_features(differential_curves(sim.segment)).distances["dist_a2_k"])
    assert all(b < a for a, b in zip(dist, dist[1:]))


# --- lookup table ---

def test_fit_line_exact():
    x = np.linspace(5.0, 20.0, 9)
    a, b, r2, var = fit_line(x, 61.5 + 1.9 * x)
    assert abs(a - 61.5) < 1e-9 and abs(b - 1.9) < 1e-9
    assert r2 == pytest.approx(1.0, abs=1e-12) and var < 1e-18


def test_lut_exact_linear_relation():
    data = [(synthetic_set(x), 61.5 + 1.9 * x, 25.0) for x in np.linspace(5.0, 20.0, 7)]
    row = build_lut(data).row("d", 25.0)
    assert abs(row.intercept - 61.5) < 1e-9 and abs(row.slope - 1.9) < 1e-9
    assert row.r2 == pytest.approx(1.0, abs=1e-12)


def test_lut_slope_under_one_percent_noise():
    """21 SOH levels x 5 charges per fit; 1 % multiplicative SOH noise."""
    true_slope = 2.0
    soh = np.repeat(np.linspace(80.0, 100.0, 21), 5)
    x = (soh - 60.0) / true_slope
    slopes = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        noisy = soh * (1.0 + 0.01 * rng.normal(size=soh.size))
        slopes.append(build_lut([(synthetic_set(a), b, 25.0) for a, b in zip(x, noisy)]).row("d", 25.0).slope)
    slopes = np.array(slopes)
    assert np.all(np.abs(slopes - true_slope) <= 0.05 * true_slope)


def test_lut_rows_per_temperature_and_interpolation():
    x = np.linspace(5.0, 20.0, 6)
    data = [(synthetic_set(a, 10.0), 60.0 + 2.0 * a, 10.0) for a in x]
    data += [(synthetic_set(a, 40.0), 70.0 + 1.5 * a, 40.0) for a in x]
    lut = build_lut(data)
    assert tuple(lut.temperatures) == (10.0, 40.0)
    r10, r40 = lut.row("d", 10.0), lut.row("d", 40.0)
    assert r10.slope != r40.slope
    est = estimate_soh(synthetic_set(12.0, 25.0), lut)
    assert est.soh == pytest.approx(0.5 * (r10.soh(12.0) + r40.soh(12.0)), abs=1e-9)
    assert est.confidence == "in-range"
    est = estimate_soh(synthetic_set(12.0, 32.5), lut)
    assert est.soh == pytest.approx(0.25 * r10.soh(12.0) + 0.75 * r40.soh(12.0), abs=1e-9)


def test_lut_flags_extrapolation():
    data = [(synthetic_set(a), 60.0 + 2.0 * a, 25.0) for a in np.linspace(5.0, 20.0, 6)]
    lut = build_lut(data)
    assert estimate_soh(synthetic_set(30.0), lut).confidence == "extrapolated"
    assert estimate_soh(synthetic_set(12.0, 45.0), lut).confidence == "extrapolated"
    assert "degraded-by-c-rate" in estimate_soh(synthetic_set(12.0), lut, c_rate=1.0).flags


def test_lut_calibration_errors():
    with pytest.raises(CalibrationError):
        build_lut([(synthetic_set(a), 90.0 + a, 25.0) for a in range(3)])
    rng = np.random.default_rng(0)
    noise = [(synthetic_set(rng.normal()), float(s), 25.0) for s in np.linspace(80, 100, 10)]
    with pytest.raises(CalibrationError):
        build_lut(noise, LutConfig(r2_threshold=0.8))
    lut = build_lut([(synthetic_set(a), 60.0 + 2.0 * a, 25.0) for a in np.linspace(5.0, 20.0, 6)])
    with pytest.raises(EstimationError):
        estimate_soh(synthetic_set(12.0, name="other"), lut)


@given(st.floats(5.0, 20.0), st.floats(5.0, 20.0), st.floats(0.0, 5.0))
@settings(max_examples=60, deadline=None)
def test_estimate_monotone_in_features(a, b, step):
    x = np.linspace(5.0, 20.0, 6)
    rng = np.random.default_rng(1)
    data = [(DvaFeatureSet({}, {"up": u, "down": u}, 25.0, 0.3), 60.0 + 2.0 * u + rng.normal(0, 0.3), 25.0)
            for u in x]
    data = [(DvaFeatureSet({}, {"up": f.distances["up"], "down": 25.0 - f.distances["down"]}, 25.0, 0.3), s, T)
            for f, s, T in data]
    lut = build_lut(data)

    def est(u, d):
        return estimate_soh(DvaFeatureSet({}, {"up": u, "down": d}, 25.0, 0.3), lut).soh

    assert est(a + step, b) >= est(a, b) - 1e-9
    assert est(a, b + step) <= est(a, b) + 1e-9


def test_lut_text_roundtrip(tmp_path, soh_bundle):
    lut = soh_bundle.lut
    lut.save(tmp_path / "lut.txt")
    back = SohLut.load(tmp_path / "lut.txt")
    assert back.rows == lut.rows
    assert back.dumps() == lut.dumps()


# --- calibrated against the simulator ---

def test_calibration_set_reproduced_within_residual(soh_bundle):
    lut = soh_bundle.lut
    for T in lut.temperatures:
        pts = [(f, s) for f, s, t in soh_bundle.calibration if t == T]
        err = np.array([estimate_soh(f, lut, temperature=T).soh - s for f, s in pts])
        resid = max(np.sqrt(r.resid_var) for r in lut.rows if r.temperature == T)
        assert np.sqrt(np.mean(err ** 2)) <= resid


def test_estimate_at_calibration_point(soh_bundle):
    fresh = [(f, s) for f, s, t in soh_bundle.calibration if t == 25.0 and s > 99.0]
    for f, s in fresh:
        e = estimate_soh(f, soh_bundle.lut, temperature=25.0)
        assert abs(e.soh - s) <= 3.0 * e.std + 1e-9
        assert 0.0 < e.soh <= 110.0


def test_estimate_85_at_half_c_and_flag_at_1c(soh_bundle):
    deg = DegradationState.along_path(severity_for(85.0))
    sim = simulate_charge(CELL, deg, 25.0, 0.5, 1.0, 0.05, seed=77)
    assert gate_segment(sim.segment, lut=soh_bundle.lut).accepted
    e = estimate_soh(extract_features(differential_curves(sim.segment)), soh_bundle.lut)
    assert abs(e.soh - 100.0 * sim.true_capacity / CELL.nominal_capacity) <= 5.0
    fast = simulate_charge(CELL, deg, 25.0, 1.0, 1.0, 0.05, seed=78)
    assert gate_segment(fast.segment, lut=soh_bundle.lut).reason == "c-rate"
    e = estimate_soh(extract_features(differential_curves(fast.segment)), soh_bundle.lut)
    assert e.confidence == "degraded-by-c-rate"


def test_default_cell_is_the_fixture_cell():
    assert CELL == CellSimConfig()
