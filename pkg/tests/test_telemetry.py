from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from battcloud import telemetry as tm
from battcloud.synthcell import CellSimConfig, simulate_charge


def _sample(t, i=10.0, v=3.8, temps=(25.0,), flags=0):
    return tm.TelemetrySample(float(t), i, v, (v,), tuple(temps), flags)


def _csv(rows, header="timestamp,pack_current,pack_voltage,cell_v1,temp1"):
    return io.StringIO(header + "\n" + "\n".join(rows) + "\n")


def _charge(t0, minutes, current=10.0, dt=10.0):
    return [_sample(t0 + k * dt, current) for k in range(int(minutes * 60 / dt) + 1)]


def test_ingest_three_rows():
    samples, rejects = tm.ingest_file(_csv(["0,1.0,3.7,3.7,25", "1,1.0,3.7,3.7,25", "2,1.0,3.71,3.71,25"]))
    assert len(samples) == 3
    assert sum(rejects.values()) == 0
    assert samples[2].pack_voltage == 3.71


def test_ingest_counts_corrupt_row():
    rows = [f"{k},1.0,3.7,3.7,25" for k in range(100)]
    rows[37] = "37,abc,3.7,3.7,25"
    samples, rejects = tm.ingest_file(_csv(rows))
    assert len(samples) == 99
    assert sum(rejects.values()) == 1


def test_ingest_missing_column_is_schema_error():
    with pytest.raises(tm.SchemaError):
        tm.ingest_file(_csv(["0,3.7"], header="timestamp,pack_voltage"))


def test_ingest_no_rows_is_empty_input():
    with pytest.raises(tm.EmptyInputError):
        tm.ingest_file(_csv(["x,y,z,w,v"]))


def test_ingest_jsonl_and_iso_time():
    lines = [json.dumps({"timestamp": "2024-01-01T00:00:00+00:00", "pack_current": 2.0, "pack_voltage": 3.9,
                         "cell_v1": 3.9, "temp1": 20.0}),
             json.dumps({"timestamp": "2024-01-01T00:00:10+00:00", "pack_current": 2.0, "pack_voltage": 3.9,
                         "cell_v1": 3.9, "temp1": 20.0})]
    schema = tm.SchemaConfig(format="jsonl", time_format="iso")
    samples, _ = tm.ingest_file(io.StringIO("\n".join(lines)), schema)
    assert samples[1].timestamp - samples[0].timestamp == 10.0
    assert samples[0].timestamp == 1704067200.0


def test_simulated_file_roundtrips_bit_exact(tmp_path):
    sim = simulate_charge(CellSimConfig(n_cells=2, n_temp_sensors=2), None, 25.0, 1.0, 0.5, 0.0, seed=3)
    samples = sim.samples[:10000]
    assert len(samples) >= 5000
    path = tmp_path / "t.csv"
    tm.write_samples(samples, path)
    back, rejects = tm.ingest_file(path)
    assert sum(rejects.values()) == 0
    assert back == list(samples)


def test_clean_flags_out_of_bounds_field():
    s = tm.TelemetrySample(0.0, 1.0, 9.9, (9.9, 3.7), (25.0,))
    out, report = tm.clean([s], tm.LimitsConfig(cell_voltage=(2.0, 4.5)))
    assert len(out) == 1
    assert not out[0].cell_ok(0)
    assert out[0].cell_ok(1) and out[0].current_ok
    assert report["flagged_fields"] >= 1


def test_clean_identity_and_duplicates():
    good = [_sample(k) for k in range(5)]
    out, report = tm.clean(good)
    assert out == good
    out, report = tm.clean(good[:3] + [_sample(2, i=99.0)] + good[3:])
    assert [s.timestamp for s in out] == [0, 1, 2, 3, 4]
    assert out[2].pack_current == 10.0
    assert report["duplicate_timestamp"] == 1


def test_clean_drops_all_invalid_rows_and_masks_values():
    bad = tm.TelemetrySample(1.0, 5000.0, 99.0, (99.0,), (500.0,))
    out, report = tm.clean([_sample(0), bad, _sample(2)])
    assert [s.timestamp for s in out] == [0, 2]
    assert report["all_invalid"] == 1
    arr = tm.to_arrays([tm.TelemetrySample(0.0, 1.0, 3.0, (3.0,), (20.0,), flags=0b1)])
    assert np.isnan(arr.current[0])


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40))
@settings(max_examples=50, deadline=None)
def test_clean_never_reorders(ts):
    samples = [_sample(t) for t in ts]
    out, _ = tm.clean(samples)
    pos = [ts.index(s.timestamp) for s in out]
    assert pos == sorted(pos)
    assert all(b > a for a, b in zip([s.timestamp for s in out], [s.timestamp for s in out][1:]))


def test_segment_discharge_is_empty():
    assert tm.segment_charges(_charge(0, 60, current=-20.0)) == []


def test_segment_two_charges_after_rest():
    a = _charge(0, 30)
    rest = [_sample(a[-1].timestamp + 60 * k, 0.0) for k in range(1, 121)]
    b = _charge(rest[-1].timestamp + 60, 30)
    segs = tm.segment_charges(a + rest + b)
    assert len(segs) == 2
    assert segs[0].end_index < segs[1].start_index


def test_segment_matches_simulator_boundaries():
    sim = simulate_charge(CellSimConfig(), None, 25.0, 0.5, 2.0, 0.1, rest_before=600, rest_after=600, seed=1)
    segs = tm.segment_charges(sim.samples)
    assert len(segs) == 1
    assert abs(segs[0].start_index - sim.charge_start) <= 1
    assert abs(segs[0].end_index - sim.charge_end) <= 1


def test_segment_throughput_and_idempotence():
    sim = simulate_charge(CellSimConfig(), None, 25.0, 0.5, 2.0, 0.2, rest_before=300, rest_after=300, seed=2)
    seg = tm.segment_charges(sim.samples)[0]
    t, i = seg.arrays().time, seg.arrays().current
    # independent oracle: rectangle rule on a twice-finer linear interpolant
    tf = np.linspace(t[0], t[-1], 2 * (len(t) - 1) + 1)
    fi = np.interp(tf, t, i)
    mid = 0.5 * (fi[1:] + fi[:-1])
    rect = float(np.sum(mid * np.diff(tf)) / 3600.0)
    assert seg.charge_throughput == pytest.approx(tm.trapezoid_ah(t, i), rel=1e-9)
    assert seg.charge_throughput == pytest.approx(rect, rel=1e-4)
    again = tm.segment_charges(list(seg.samples))
    assert len(again) == 1 and len(again[0].samples) == len(seg.samples)
    assert again[0].charge_throughput == seg.charge_throughput


def test_window_counts_and_static():
    samples = [_sample(k, temps=(float(k), 25.0)) for k in range(100)]
    ws = tm.window_signals(samples, [0], window_len=10, stride=10, dt=1.0)
    assert len(ws) == 10
    assert [w.origin_timestamp for w in ws] == [10.0 * k for k in range(10)]
    flat = tm.window_signals(samples, [1], window_len=10, stride=10, dt=1.0)
    assert all(w.static for w in flat)
    assert not any(w.static for w in ws)
    assert tm.window_signals(samples, [0], window_len=200, stride=1, dt=1.0) == []


def test_window_irregular_matches_reference_interpolation():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.uniform(0.5, 1.5, 300))
    v = np.sin(t / 20.0) + 0.1 * t
    samples = [_sample(a, temps=(b,)) for a, b in zip(t, v)]
    ws = tm.window_signals(samples, [0], window_len=30, stride=7, dt=1.0)
    for w in ws:
        grid = w.origin_timestamp + np.arange(30) * 1.0
        ref = np.interp(grid, t, v)
        assert np.max(np.abs(w.array() - ref)) < 1e-9
