"""Scenario configuration, named presets and report emission.

A config is a JSON document with ``pulse``, ``channel``, ``detectors``,
``attack``, ``run`` and ``drift`` sections. Anything omitted falls back to
the defaults below, which describe the 100 MHz, four-detector polarization
receiver; unknown keys are rejected with their path.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import jsonschema
import numpy as np

from .adversary import MismatchReport, two_state_attack, window_mismatch
from .link import RemoteSource, attack_from_json
from .physics import (
    STATES, ChannelModel, GatedDetectorModel, PulseModel, Scenario, circular_distance,
    default_routing, signed_residue,
)
from .syncplan import (
    METHODS, DelayTable, SearchPlan, SyncOutcome, legacy_traversal, optimize_coarse_step,
    run_method, sync_cost,
)


class ConfigError(ValueError):
    pass


_STATE_MAP = {"type": "object", "additionalProperties": False,
              "properties": {s: {"type": "number"} for s in STATES}}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "pulse": {"type": "object", "additionalProperties": False, "properties": {
            "fwhm_ps": _POS_INT,
            "mu": {"type": "number", "minimum": 0},
            "rate_hz": {"type": "number", "exclusiveMinimum": 0},
            "states": _STATE_MAP,
            "arrival_ps": {"type": "integer"},
        }},
        "channel": {"type": "object", "additionalProperties": False, "properties": {
            "loss_db": {"type": "number", "minimum": 0},
            "delay_ps": {"type": "integer"},
        }},
        "detectors": {"type": "array", "minItems": 1, "items": {
            "type": "object", "additionalProperties": False, "properties": {
                "efficiency": {"type": "number", "minimum": 0, "maximum": 1},
                "dark_prob": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "gate_fwhm_ps": _POS_INT,
                "delta_t_ps": {"type": "integer"},
                "routing": _STATE_MAP,
            }}},
        "attack": {"type": "object", "additionalProperties": False, "properties": {
            "state_offsets": {"type": "object", "additionalProperties": False,
                              "properties": {s: {"type": "integer"} for s in STATES}},
            "common_offset": {"type": "integer"},
            "states": {"oneOf": [{"type": "null"}, _STATE_MAP]},
            "active_during": {"enum": ["calibration", "always"]},
        }},
        "run": {"type": "object", "additionalProperties": False, "properties": {
            "seed": _NONNEG_INT,
            "count_mode": {"enum": ["expected", "sampled"]},
            "method": {"enum": list(METHODS)},
            "coarse_step_ps": {"oneOf": [{"type": "null"}, _POS_INT]},
            "precisions": {"type": "object", "additionalProperties": False,
                           "properties": {"fine_ps": _POS_INT}},
            "accumulations": {"type": "object", "additionalProperties": False,
                              "properties": {"coarse_us": _POS_INT, "fine_us": _POS_INT}},
            "legacy_parallel": {"type": "boolean"},
            "nary_stop_factor": _POS_INT,
        }},
        "drift": {"type": "object", "additionalProperties": False, "properties": {
            "days": _POS_INT,
            "common_drift_ps": {"type": "number", "minimum": 0},
            "step_ps": {"oneOf": [{"type": "null"}, {"type": "number", "minimum": 0}]},
            "jitter_ps": {"type": "number", "minimum": 0},
            "seed": _NONNEG_INT,
        }},
    },
}

DEFAULT_DELTAS = (0, 30, 60, 90)

DEFAULTS: dict[str, Any] = {
    "pulse": {"fwhm_ps": 500, "mu": 3.0, "rate_hz": 100_000_000,
              "states": {s: 0.25 for s in STATES}, "arrival_ps": 2050},
    "channel": {"loss_db": 10.3, "delay_ps": 0},
    "attack": {"state_offsets": {s: 0 for s in STATES}, "common_offset": 0,
               "states": None, "active_during": "calibration"},
    "run": {"seed": 0, "count_mode": "expected", "method": "method1", "coarse_step_ps": None,
            "precisions": {"fine_ps": 10}, "accumulations": {"coarse_us": 1000, "fine_us": 5000},
            "legacy_parallel": True, "nary_stop_factor": 2},
    "drift": {"days": 16, "common_drift_ps": 200.0, "step_ps": None, "jitter_ps": 3.0, "seed": 0},
}
DETECTOR_DEFAULTS = {"efficiency": 0.153, "dark_prob": 8.0e-7, "gate_fwhm_ps": 1000}

PRESETS: dict[str, dict] = {
    "method1-paper": {"run": {"method": "method1"}},
    "method2-paper": {"run": {"method": "method2", "coarse_step_ps": 500}},
    "legacy-attack": {
        "run": {"method": "legacy"},
        "attack": {"state_offsets": {"H": 0, "V": 500}, "states": {"H": 0.5, "V": 0.5}},
    },
    "drift-16d": {"drift": {"days": 16, "common_drift_ps": 200.0, "jitter_ps": 3.0}},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(doc: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {err.message}")


def resolve_config(doc: Optional[dict] = None, preset: Optional[str] = None) -> dict:
    """Effective config: defaults, then the preset, then ``doc``."""
    doc = doc or {}
    validate(doc)
    layered = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layered = copy.deepcopy(PRESETS[preset])
    layered = _merge(layered, doc)
    cfg = _merge(DEFAULTS, {k: v for k, v in layered.items() if k != "detectors"})
    dets = layered.get("detectors") or [{"delta_t_ps": d} for d in DEFAULT_DELTAS]
    routing = default_routing(len(dets))
    cfg["detectors"] = [
        _merge({**DETECTOR_DEFAULTS, "delta_t_ps": 0, "routing": dict(zip(STATES, routing[i]))}, d)
        for i, d in enumerate(dets)]
    # Attack state offsets are a full map once resolved; missing ones are zero.
    cfg["attack"]["state_offsets"] = {s: cfg["attack"]["state_offsets"].get(s, 0) for s in STATES}
    validate(cfg)
    return cfg


def load_config(path: Union[str, os.PathLike, None] = None, preset: Optional[str] = None) -> dict:
    doc = {}
    if path is not None:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return resolve_config(doc, preset)


def build_scenario(cfg: dict) -> Scenario:
    pulse = cfg["pulse"]
    detectors = tuple(
        GatedDetectorModel(id=i + 1, efficiency=d["efficiency"], dark_prob=d["dark_prob"],
                           gate_fwhm_ps=d["gate_fwhm_ps"], delta_t_ps=d["delta_t_ps"],
                           routing=d["routing"])
        for i, d in enumerate(cfg["detectors"]))
    try:
        return Scenario(
            pulse=PulseModel(pulse["fwhm_ps"], pulse["mu"], pulse["rate_hz"], pulse["states"]),
            channel=ChannelModel(cfg["channel"]["loss_db"], cfg["channel"]["delay_ps"]),
            detectors=detectors,
            attack=attack_from_json(cfg["attack"]),
            true_arrival=pulse["arrival_ps"],
            seed=cfg["run"]["seed"],
            count_mode=cfg["run"]["count_mode"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_delays(cfg: dict) -> DelayTable:
    deltas = [d["delta_t_ps"] for d in cfg["detectors"]]
    return DelayTable(tuple(x - deltas[0] for x in deltas))


def build_plan(cfg: dict, method: Optional[str] = None) -> SearchPlan:
    """Search plan for ``method``; an unset coarse step is chosen per method.

    ``method1`` takes the step minimising the calibration cost, ``method2``
    the pulse FWHM.
    """
    run = cfg["run"]
    method = method or run["method"]
    step = run["coarse_step_ps"]
    if step is None:
        if method == "method2":
            step = cfg["pulse"]["fwhm_ps"]
        else:
            step, _ = optimize_coarse_step(range(10, 501, 10), **_cost_params(cfg))
    return SearchPlan(
        coarse_step_ps=step,
        coarse_accum_us=run["accumulations"]["coarse_us"],
        fine_precision_ps=run["precisions"]["fine_ps"],
        fine_accum_us=run["accumulations"]["fine_us"],
        fine_method="nary" if method == "method2" else "fixed_step",
        nary_stop_factor=run["nary_stop_factor"],
    )


def _cost_params(cfg: dict) -> dict:
    run = cfg["run"]
    return {
        "n": len(cfg["detectors"]),
        "period": 10**12 // int(cfg["pulse"]["rate_hz"]),
        "precision": run["precisions"]["fine_ps"],
        "coarse_ms": run["accumulations"]["coarse_us"] / 1000.0,
        "fine_ms": run["accumulations"]["fine_us"] / 1000.0,
    }


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


HISTOGRAM_COLUMNS = ("round", "detector_id", "gate_time_ps", "accumulation_us", "count")
WINDOW_COLUMNS = ("detector_id", "window_ps", "delta_t_ps")


@dataclass
class ReportBundle:
    out_dir: Path
    outcome: SyncOutcome
    mismatch: MismatchReport
    summary: dict
    files: dict[str, Path] = field(default_factory=dict)


def summarize(outcome: SyncOutcome, scenario: Scenario, delays: DelayTable) -> tuple[dict, MismatchReport]:
    report = window_mismatch(outcome, delays, scenario.honest())
    honest = scenario.honest()
    truth = honest.true_arrival + honest.channel.delay_ps
    errors = [circular_distance(w, truth + d.delta_t_ps, scenario.period)
              for w, d in zip(outcome.windows, scenario.detectors)]
    summary = {
        "method": outcome.method,
        "t_l": None if outcome.best_coarse is None else outcome.best_coarse[0],
        "n_l": None if outcome.best_coarse is None else outcome.best_coarse[1],
        "t_h": outcome.t_h,
        "n_h": outcome.n_h,
        "simulated_time_ms": outcome.simulated_time_ms,
        "coarse_rounds": outcome.coarse_rounds,
        "fine_rounds": outcome.fine_rounds,
        "windows_ps": list(outcome.windows),
        "true_arrival_ps": truth,
        "max_window_error_ps": max(errors),
        "mismatch": report.as_dict(),
    }
    return summary, report


def run_scenario(cfg: dict, out_dir: Union[str, os.PathLike], source: Optional[str] = None) -> ReportBundle:
    """Run the configured calibration and write the report bundle.

    With ``source`` (an endpoint) the pulse source is a remote link server;
    it is expected to serve the same scenario.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg)
    delays = build_delays(cfg)
    method = cfg["run"]["method"]
    plan = build_plan(cfg, method)
    if source is None:
        outcome = run_method(scenario, plan, delays, method, cfg["run"]["legacy_parallel"])
    else:
        with RemoteSource.connect(source, scenario.period, scenario.n_detectors,
                                  scenario.pulse.fwhm_ps) as remote:
            outcome = run_method(remote, plan, delays, method, cfg["run"]["legacy_parallel"])
    summary, report = summarize(outcome, scenario, delays)

    files = {"histogram": out / "histogram.csv", "windows": out / "windows.csv",
             "summary": out / "summary.json", "config": out / "config.json"}
    _write_csv(files["histogram"], HISTOGRAM_COLUMNS, outcome.probes)
    _write_csv(files["windows"], WINDOW_COLUMNS,
               [(i + 1, w, delays.deltas[i]) for i, w in enumerate(outcome.windows)])
    _dump_json(summary, files["summary"])
    _dump_json(cfg, files["config"])
    return ReportBundle(out, outcome, report, summary, files)


def read_histogram(path: Union[str, os.PathLike]) -> list[tuple[int, ...]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [tuple(int(row[c]) for c in HISTOGRAM_COLUMNS) for row in reader]


def optimize_t(cfg: dict, grid: Optional[Iterable[int]] = None,
               out_dir: Union[str, os.PathLike, None] = None) -> tuple[list[tuple], tuple[int, float]]:
    """Cost table of the coarse step over ``grid`` and its minimiser."""
    grid = sorted(grid if grid is not None else range(10, 501, 10))
    if not grid or grid[0] < 10 or grid[-1] > 500:
        raise ConfigError("coarse-step grid must lie within [10, 500] ps")
    params = _cost_params(cfg)
    rows = []
    for t in grid:
        coarse = -(-params["period"] // (params["n"] * t)) * params["coarse_ms"]
        fine = -(-t // (params["n"] * params["precision"])) * params["fine_ms"]
        rows.append((t, coarse, fine, sync_cost(t, **params)))
    best = optimize_coarse_step(grid, **params)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "optimize_t.csv", ("t_ps", "coarse_ms", "fine_ms", "total_ms"), rows)
        _dump_json({"t_ps": best[0], "total_ms": best[1]}, out / "optimum.json")
    return rows, best


def drift_walk(days: int, amplitude_ps: float, step_ps: float, rng: np.random.Generator) -> np.ndarray:
    """Random walk reflected into ``[-amplitude, amplitude]``, starting at zero."""
    x = np.zeros(days)
    for d in range(1, days):
        v = x[d - 1] + rng.normal(0.0, step_ps)
        if amplitude_ps > 0:
            # Fold back into the band; a reflected walk never leaves it.
            span = 2.0 * amplitude_ps
            v = (v + amplitude_ps) % (2.0 * span)
            v = (span - abs(v - span)) - amplitude_ps
        else:
            v = 0.0
        x[d] = v
    return x


def drift_experiment(days: int = 16, common_drift_ps: float = 200.0, jitter_ps: float = 3.0,
                     seed: int = 0, step_ps: Optional[float] = None, cfg: Optional[dict] = None,
                     out_dir: Union[str, os.PathLike, None] = None) -> list[tuple[int, int, int, int]]:
    """Daily per-detector calibrations under a drifting common delay.

    Each day the pulse arrival follows the reflected walk and every detector's
    path delay gains independent Gaussian jitter; the detectors are then
    calibrated independently by full traversal. Rows are
    ``(day, detector_id, window_ps, delta_vs_ref_ps)``.
    """
    if days < 1:
        raise ValueError("days must be at least 1")
    cfg = cfg or resolve_config()
    base = build_scenario(cfg)
    rng = np.random.default_rng(seed)
    walk = drift_walk(days, common_drift_ps,
                      common_drift_ps / 2.0 if step_ps is None else step_ps, rng)
    precision = cfg["run"]["precisions"]["fine_ps"]
    accumulation = cfg["run"]["accumulations"]["fine_us"]
    rows = []
    for day in range(days):
        jitter = rng.normal(0.0, jitter_ps, base.n_detectors) if jitter_ps > 0 else np.zeros(base.n_detectors)
        detectors = tuple(replace(d, delta_t_ps=d.delta_t_ps + int(round(j)))
                          for d, j in zip(base.detectors, jitter))
        scenario = replace(base, detectors=detectors, seed=base.seed + day,
                           true_arrival=base.true_arrival + int(round(walk[day])))
        outcome = legacy_traversal(scenario, precision, accumulation, parallel_detectors=True)
        ref = outcome.windows[0]
        for i, w in enumerate(outcome.windows):
            rows.append((day + 1, i + 1, w, signed_residue(w - ref, base.period)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "drift.csv", ("day", "detector_id", "window_ps", "delta_vs_ref_ps"), rows)
    return rows


def attack_demo(cfg: dict, t0: int, t1: int, out_dir: Union[str, os.PathLike, None] = None,
                methods: Sequence[str] = ("legacy", "method1", "method2")) -> dict[str, dict]:
    """Calibrate under an H-at-``t0`` / V-at-``t1`` attack with each method."""
    scenario = build_scenario(cfg)
    period = scenario.period
    if not (0 <= t0 < period and 0 <= t1 < period):
        raise ConfigError(f"t0 and t1 must lie in [0, {period})")
    attacked = scenario.with_attack(two_state_attack(scenario, t0, t1))
    delays = build_delays(cfg)
    results = {}
    for method in methods:
        outcome = run_method(attacked, build_plan(cfg, method), delays, method,
                             cfg["run"]["legacy_parallel"])
        summary, _ = summarize(outcome, attacked, delays)
        results[method] = summary
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json({"t0_ps": t0, "t1_ps": t1, "methods": results}, out / "attack_demo.json")
        rows = []
        for method, s in results.items():
            m = s["mismatch"]
            for i, w in enumerate(s["windows_ps"]):
                rows.append((method, i + 1, w, m["window_deviation_ps"][i],
                             m["efficiency_at_window"][i], m["max_pairwise_skew_ps"]))
        _write_csv(out / "attack_demo.csv", ("method", "detector_id", "window_ps", "deviation_ps",
                                             "efficiency", "max_pairwise_skew_ps"), rows)
    return results


def common_offset_sweep(cfg: dict, offsets: Iterable[int], method: str = "method1") -> list[dict]:
    """Calibrate under a pure common-mode delay for each offset."""
    scenario = build_scenario(cfg)
    delays = build_delays(cfg)
    plan = build_plan(cfg, method)
    rows = []
    for offset in offsets:
        attacked = scenario.with_attack(replace(scenario.attack, common_offset=int(offset)))
        outcome = run_method(attacked, plan, delays, method)
        report = window_mismatch(outcome, delays, attacked.honest())
        rows.append({"common_offset_ps": int(offset), "windows_ps": outcome.windows,
                     "efficiency_at_window": report.efficiency_at_window,
                     "mismatch_ratio": report.mismatch_ratio,
                     "max_pairwise_skew_ps": report.max_pairwise_skew})
    return rows
