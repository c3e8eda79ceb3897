"""Command-line entry point: ``battcloud <command> [<action>] [options]``.

Every command writes ``summary.json`` into ``--out``. The summary embeds the
resolved configuration and seed so a run can be repeated byte for byte.
Exit status: 0 success, 2 usage or module error, 3 nothing passed the SOH
gate (or estimation was aborted).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import telemetry as tm
from .socmodel import (FullChargeRule, LMConfig, SocEstimate, SocNetwork, SplitConfig, WindowConfig,
                       build_features, evaluate, rate_limit, train)
from .sohdva import (DiffConfig, FeatureConfig, InsufficientDataError, LutConfig, NMC_GRAPHITE_FEATURES,
                     SohGateConfig, SohLut, build_lut, differential_curves, estimate_soh, extract_features,
                     gate_segment)
from .sohdva.features import FeatureMissingError
from .synthcell import emit_fleet, load_manifest, load_truth, read_soc_trace, run_thermal_spec, thermal_items
from .thermalwatch import ShapeClusterState, WatchConfig, batches_from_matrix, detect, init_state

SUMMARY_FORMAT = "battcloud-summary"
SUMMARY_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_GATED = 0, 2, 3

log = logging.getLogger("battcloud")


class CliError(Exception):
    pass


# --- helpers ---

def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: not valid JSON ({exc})") from exc


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _two_column(path, x, y, header: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for a, b in zip(x, y):
            fh.write(f"{float(a)!r} {float(b)!r}\n")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _config(args, defaults: dict) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = _merge(defaults, _read_json(args.config) if args.config else {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    return cfg


def _summary(args, command: str, cfg: dict, results: dict) -> dict:
    s = {"format": SUMMARY_FORMAT, "version": SUMMARY_VERSION, "command": command,
         "config": cfg, "seed": cfg.get("seed"), "results": results}
    _dump_json(s, os.path.join(args.out, "summary.json"))
    return s


def _load_samples(path, cfg: dict):
    samples, rejects = tm.ingest_file(path, tm.SchemaConfig.from_dict(cfg.get("schema")))
    cleaned, report = tm.clean(samples, tm.LimitsConfig.from_dict(cfg.get("limits")))
    report.update(rejects)
    return cleaned, report


def _segments(path, cfg: dict):
    samples, _ = _load_samples(path, cfg)
    return tm.segment_charges(samples, tm.GateConfig.from_dict(cfg.get("gate")))


def _charge_files(data_dir):
    manifest = load_manifest(data_dir)
    return [f for f in manifest["files"] if f["kind"] == "charge"], manifest


# --- ingest / synth ---

def cmd_ingest(args) -> int:
    cfg = _config(args, {"schema": {}, "limits": {}, "gate": {}})
    samples, report = _load_samples(args.input, cfg)
    segs = tm.segment_charges(samples, tm.GateConfig.from_dict(cfg.get("gate")))
    tm.write_samples(samples, os.path.join(args.out, "clean.csv"))
    tm.write_rejects_report(report, os.path.join(args.out, "rejects.json"))
    seg_info = [{"start_index": s.start_index, "end_index": s.end_index, "throughput_ah": s.charge_throughput,
                 "mean_c_rate": s.mean_c_rate, "mean_temperature": s.mean_temperature,
                 "duration_s": s.duration} for s in segs]
    _summary(args, "ingest", cfg, {"input": args.input, "samples": len(samples),
                                   "rejects": dict(sorted(report.items())), "segments": seg_info})
    return EXIT_OK


def cmd_synth(args) -> int:
    scen = _read_json(args.scenario)
    if args.seed is not None:
        scen["seed"] = args.seed
    manifest = emit_fleet(scen, args.out)
    _summary(args, "synth", scen, {"files": [f["path"] for f in manifest["files"]]})
    return EXIT_OK


# --- soc ---

_SOC_DEFAULTS = {"window": {}, "lm": {}, "split": {}, "full_charge": {}, "gate": {}, "schema": {}, "limits": {}}


def _soc_dataset(data_dir, cfg: dict, window: WindowConfig):
    files, _ = _charge_files(data_dir)
    truth = load_truth(data_dir)
    xs, ys, per_file = [], [], []
    for f in files:
        path = os.path.join(data_dir, f["path"])
        tt, zz = read_soc_trace(data_dir, truth["charges"][f["path"]]["soc_trace"])
        for seg in _segments(path, cfg):
            x, ts = build_features(seg, window)
            if len(x) == 0:
                continue
            y = np.interp(ts, tt, zz)
            xs.append(x)
            ys.append(y)
            per_file.append((f["name"], ts, x, y))
    if not xs:
        raise CliError(f"no usable charge segments under {data_dir}")
    return np.vstack(xs), np.concatenate(ys), per_file


def cmd_soc_train(args) -> int:
    cfg = _config(args, _SOC_DEFAULTS)
    seed = cfg["seed"]
    window = WindowConfig(**cfg["window"])
    lm = LMConfig.from_dict(_merge(cfg["lm"], {"seed": seed}))
    split = SplitConfig(**_merge(cfg["split"], {"seed": seed}))
    x, y, _ = _soc_dataset(args.data, cfg, window)
    net, rep = train(x, y, split, lm, window, FullChargeRule(**cfg["full_charge"]))
    net.save(os.path.join(args.out, "model.json"))
    _dump_json(rep.to_dict(), os.path.join(args.out, "report.json"))
    _summary(args, "soc train", cfg, {"data": args.data, "rows": len(y), "model": "model.json",
                                      "report": rep.to_dict()})
    return EXIT_OK


def cmd_soc_eval(args) -> int:
    cfg = _config(args, _SOC_DEFAULTS)
    net = SocNetwork.load(args.model)
    x, y, per_file = _soc_dataset(args.data, cfg, net.window)
    rep = evaluate(net, x, y)
    files = {}
    for k, (name, ts, xf, yf) in enumerate(per_file):
        pred = net.predict_batch(xf)
        tag = f"{name}_{k:02d}"
        _two_column(os.path.join(args.out, f"{tag}_soc_pred.dat"), ts, pred, "time_s soc_percent")
        _two_column(os.path.join(args.out, f"{tag}_soc_true.dat"), ts, yf, "time_s soc_percent")
        files[tag] = evaluate(net, xf, yf).to_dict()
    _summary(args, "soc eval", cfg, {"data": args.data, "model": args.model, "report": rep.to_dict(),
                                     "files": files})
    return EXIT_OK


def cmd_soc_predict(args) -> int:
    cfg = _config(args, _merge(_SOC_DEFAULTS, {"max_step": None}))
    net = SocNetwork.load(args.model)
    segs = _segments(args.input, cfg)
    out = []
    for k, seg in enumerate(segs):
        x, ts = build_features(seg, net.window)
        if len(x) == 0:
            continue
        soc = net.predict_batch(x)
        if cfg["max_step"]:
            prev = SocEstimate(float(soc[0]), float(ts[0]))
            limited = [prev.soc]
            for s, t in zip(soc[1:], ts[1:]):
                prev = rate_limit(prev, SocEstimate(float(s), float(t)), float(cfg["max_step"]))
                limited.append(prev.soc)
            soc = np.array(limited)
        _two_column(os.path.join(args.out, f"segment_{k:02d}_soc.dat"), ts, soc, "time_s soc_percent")
        out.append({"segment": k, "start": float(ts[0]), "end": float(ts[-1]), "final_soc": float(soc[-1])})
    _summary(args, "soc predict", cfg, {"input": args.input, "model": args.model, "segments": out})
    return EXIT_OK


# --- soh ---

_SOH_DEFAULTS = {"gate": {}, "soh_gate": {}, "diff": {}, "features": None, "lut": {}, "schema": {},
                 "limits": {}}


def _feature_config(cfg) -> FeatureConfig:
    return FeatureConfig.from_dict(cfg["features"]) if cfg.get("features") else NMC_GRAPHITE_FEATURES


def cmd_soh_gate(args) -> int:
    cfg = _config(args, _SOH_DEFAULTS)
    gcfg = SohGateConfig.from_dict(cfg["soh_gate"])
    lut = SohLut.load(args.lut) if args.lut else None
    out = []
    for k, seg in enumerate(_segments(args.input, cfg)):
        d = gate_segment(seg, gcfg, lut)
        out.append({"segment": k, "accepted": d.accepted, "reason": d.reason,
                    "mean_c_rate": seg.mean_c_rate, "throughput_ah": seg.charge_throughput,
                    "mean_temperature": seg.mean_temperature})
    _summary(args, "soh gate", cfg, {"input": args.input, "segments": out})
    return EXIT_OK


def cmd_soh_curves(args) -> int:
    cfg = _config(args, _SOH_DEFAULTS)
    dcfg = DiffConfig.from_dict(cfg["diff"])
    out = []
    for k, seg in enumerate(_segments(args.input, cfg)):
        try:
            c = differential_curves(seg, dcfg)
        except InsufficientDataError as exc:
            out.append({"segment": k, "error": str(exc)})
            continue
        c.export(os.path.join(args.out, f"segment_{k:02d}_dv.dat"), "dv")
        c.export(os.path.join(args.out, f"segment_{k:02d}_ic.dat"), "ic")
        out.append({"segment": k, "bins": len(c.q_axis), "cc_throughput_ah": c.cc_throughput,
                    "mean_c_rate": c.mean_c_rate, "smoothing": c.smoothing_meta})
    _summary(args, "soh curves", cfg, {"input": args.input, "segments": out})
    return EXIT_OK


def cmd_soh_calibrate(args) -> int:
    cfg = _config(args, _SOH_DEFAULTS)
    files, manifest = _charge_files(args.data)
    truth = load_truth(args.data)
    gcfg = SohGateConfig.from_dict(cfg["soh_gate"])
    dcfg = DiffConfig.from_dict(cfg["diff"])
    fcfg = _feature_config(cfg)
    data, skipped = [], []
    for f in files:
        t = truth["charges"][f["path"]]
        for seg in _segments(os.path.join(args.data, f["path"]), cfg):
            d = gate_segment(seg, gcfg)
            if not d:
                skipped.append({"file": f["path"], "reason": d.reason})
                continue
            try:
                feats = extract_features(differential_curves(seg, dcfg), fcfg)
            except (InsufficientDataError, FeatureMissingError) as exc:
                skipped.append({"file": f["path"], "reason": str(exc)})
                continue
            data.append((feats, t["soh"], t["ambient"]))
    lcfg = LutConfig.from_dict(cfg["lut"])
    levels = {}
    for _, soh, temp in data:
        levels.setdefault(temp, set()).add(round(soh, 6))
    thin = sorted(t for t, lv in levels.items() if len(lv) < lcfg.min_levels)
    skipped += [{"temperature": t, "reason": f"{len(levels[t])} SOH levels"} for t in thin]
    data = [d for d in data if d[2] not in thin]
    lut = build_lut(data, lcfg, manifest["cell"]["nominal_capacity"])
    lut.save(os.path.join(args.out, "lut.txt"))
    rows = [r.__dict__ for r in lut.rows]
    _summary(args, "soh calibrate", cfg, {"data": args.data, "segments": len(data), "skipped": skipped,
                                          "lut": "lut.txt", "rows": rows})
    return EXIT_OK


def cmd_soh_estimate(args) -> int:
    cfg = _config(args, _SOH_DEFAULTS)
    lut = SohLut.load(args.lut)
    gcfg = SohGateConfig.from_dict(cfg["soh_gate"])
    dcfg = DiffConfig.from_dict(cfg["diff"])
    fcfg = _feature_config(cfg)
    out = []
    estimated = 0
    for k, seg in enumerate(_segments(args.input, cfg)):
        d = gate_segment(seg, gcfg, lut)
        rec = {"segment": k, "gate": d.reason, "mean_c_rate": seg.mean_c_rate}
        if not d and not args.force:
            rec["status"] = "gated"
            out.append(rec)
            continue
        try:
            feats = extract_features(differential_curves(seg, dcfg), fcfg)
            est = estimate_soh(feats, lut)
        except (InsufficientDataError, FeatureMissingError) as exc:
            rec.update({"status": "aborted", "reason": str(exc)})
            out.append(rec)
            continue
        rec.update({"status": "estimated", "estimate": est.to_dict()})
        estimated += 1
        out.append(rec)
    _summary(args, "soh estimate", cfg, {"input": args.input, "lut": args.lut, "segments": out})
    if not estimated:
        reasons = ", ".join(r.get("reason", r["gate"]) for r in out) or "no charge segments"
        print(f"gated: {reasons}", file=sys.stderr)
        return EXIT_GATED
    return EXIT_OK


# --- thermal ---

_THERMAL_DEFAULTS = {"watch": {}, "window_len": 60, "stride": 15, "schema": {}, "limits": {}}


def _verdict_line(v) -> dict:
    dist = {str(s): ev.get("sbd", ev.get("rise")) for s, ev in sorted(v.evidence.items())}
    return {"origin": v.origin, "end": v.end, "criterion": v.criterion, "sensors": v.offending_sensors,
            "distances": dist, "static": v.static_batch}


def _run_watch(batches, wcfg: WatchConfig, state: ShapeClusterState, fh):
    verdicts = []
    for b in batches:
        if state.last_origin is not None and b[0].origin_timestamp <= state.last_origin:
            continue
        v, state = detect(b, state, wcfg)
        fh.write(json.dumps(_verdict_line(v), sort_keys=True) + "\n")
        verdicts.append(v)
    return verdicts, state


def _timeline(path, verdicts):
    _two_column(path, [v.end for v in verdicts], [len(v.offending_sensors) for v in verdicts],
                "time_s offending_sensors")


def cmd_thermal_watch(args) -> int:
    cfg = _config(args, _THERMAL_DEFAULTS)
    wcfg = WatchConfig.from_dict(_merge({"init_seed": cfg["seed"]}, cfg["watch"]))
    samples, _ = _load_samples(args.input, cfg)
    arr = tm.to_arrays(samples)
    state = ShapeClusterState.load(args.state) if args.state and os.path.exists(args.state) else init_state(wcfg)
    dt = float(np.median(np.diff(arr.time)))
    grid, cols = None, []
    for j in range(arr.temperatures.shape[1]):
        g, v = tm.resample_uniform(arr.time, arr.temperatures[:, j], dt, arr.time[0])
        grid = g if grid is None or len(g) < len(grid) else grid
        cols.append(v)
    n = min(len(c) for c in cols)
    mat = np.column_stack([c[:n] for c in cols])
    with open(os.path.join(args.out, "verdicts.jsonl"), "w", encoding="utf-8") as fh:
        verdicts, state = _run_watch(batches_from_matrix(grid[:n], mat, cfg["window_len"], cfg["stride"]),
                                     wcfg, state, fh)
    if args.state:
        state.save(args.state)
    _timeline(os.path.join(args.out, "timeline.dat"), verdicts)
    trig = [v for v in verdicts if v.triggered]
    _summary(args, "thermal watch", cfg, {
        "input": args.input, "batches": len(verdicts), "triggers": len(trig),
        "first_trigger": _verdict_line(trig[0]) if trig else None})
    return EXIT_OK


def cmd_thermal_replay(args) -> int:
    scen = _read_json(args.scenario)
    if args.seed is not None:
        scen["seed"] = args.seed
    cfg = _config(args, _THERMAL_DEFAULTS)
    cfg.pop("seed")
    wcfg = WatchConfig.from_dict(cfg["watch"])
    runs = {}
    for spec, s in thermal_items(scen):
        _, fault, run = run_thermal_spec(spec, s)
        with open(os.path.join(args.out, f"{spec['name']}_verdicts.jsonl"), "w", encoding="utf-8") as fh:
            verdicts, _ = _run_watch(batches_from_matrix(run.time, run.measured, cfg["window_len"], cfg["stride"]),
                                     wcfg, init_state(wcfg), fh)
        _timeline(os.path.join(args.out, f"{spec['name']}_timeline.dat"), verdicts)
        trig = [v for v in verdicts if v.triggered]
        hit = next((v for v in trig if fault.kind != "none" and v.end >= fault.onset
                    and fault.sensor in v.offending_sensors), None)
        c55 = run.crossing_time(55.0)
        runs[spec["name"]] = {
            "fault": fault.to_dict(), "triggers": len(trig),
            "false_triggers": len([v for v in trig if fault.kind == "none" or v.end < fault.onset]),
            "detection_time": hit.end if hit else None, "crossing_55": c55,
            "lead_minutes": (c55 - hit.end) / 60.0 if hit and c55 is not None else None,
        }
    _summary(args, "thermal replay", {"scenario": scen, **cfg, "seed": int(scen.get("seed", 0))}, {"scenario": args.scenario, "runs": runs})
    return EXIT_OK


# --- report ---

def cmd_report(args) -> int:
    found = {}
    for root, dirs, files in os.walk(args.input):
        dirs.sort()
        if "summary.json" in files:
            s = _read_json(os.path.join(root, "summary.json"))
            if s.get("format") == SUMMARY_FORMAT:
                found[os.path.relpath(root, args.input).replace(os.sep, "/")] = s
    lines = [f"{'run':<30} {'command':<16} seed"]
    for rel, s in sorted(found.items()):
        lines.append(f"{rel:<30} {s['command']:<16} {s.get('seed')}")
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _dump_json({"format": SUMMARY_FORMAT + "-report", "version": SUMMARY_VERSION, "runs": found},
               os.path.join(args.out, "report.json"))
    return EXIT_OK


# --- parser ---

def _common(p, need_input=False):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--out", required=True, help="output directory")
    if need_input:
        p.add_argument("--input", required=True, help="telemetry file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="battcloud", description="Battery telemetry analytics.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, clean and segment a telemetry file")
    _common(p, True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic fleet from a scenario")
    _common(p)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_synth)

    soc = sub.add_parser("soc", help="state-of-charge network").add_subparsers(dest="action", required=True)
    p = soc.add_parser("train")
    _common(p)
    p.add_argument("--data", required=True, help="fleet directory from 'synth'")
    p.set_defaults(func=cmd_soc_train)
    p = soc.add_parser("eval")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_soc_eval)
    p = soc.add_parser("predict")
    _common(p, True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_soc_predict)

    soh = sub.add_parser("soh", help="capacity-fade estimation").add_subparsers(dest="action", required=True)
    p = soh.add_parser("gate")
    _common(p, True)
    p.add_argument("--lut", help="lookup table whose temperature range applies")
    p.set_defaults(func=cmd_soh_gate)
    p = soh.add_parser("curves")
    _common(p, True)
    p.set_defaults(func=cmd_soh_curves)
    p = soh.add_parser("calibrate")
    _common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_soh_calibrate)
    p = soh.add_parser("estimate")
    _common(p, True)
    p.add_argument("--lut", required=True)
    p.add_argument("--force", action="store_true", help="estimate gated segments too (flagged)")
    p.set_defaults(func=cmd_soh_estimate)

    th = sub.add_parser("thermal", help="thermal anomaly detection").add_subparsers(dest="action", required=True)
    p = th.add_parser("watch")
    _common(p, True)
    p.add_argument("--state", help="state snapshot to resume from and update")
    p.set_defaults(func=cmd_thermal_watch)
    p = th.add_parser("replay")
    _common(p)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_thermal_replay)

    p = sub.add_parser("report", help="collect run summaries")
    p.add_argument("--input", required=True, help="directory tree of runs")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        return args.func(args)
    except (ValueError, OSError, KeyError, CliError) as exc:
        module = type(exc).__module__.split(".")[1] if type(exc).__module__.startswith("battcloud.") else "cli"
        print(f"error [{module}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
