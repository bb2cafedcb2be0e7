"""Calibration-time shift attacks and the mismatch they leave behind."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .physics import (
    STATES, AttackProfile, GatedDetectorModel, Scenario, arrival_time, circular_distance,
    overlap_factor, signed_residue, wrap,
)
from .syncplan import DelayTable, SyncOutcome

__all__ = ["AttackProfile", "MismatchReport", "make_shift_attack", "window_mismatch",
           "efficiency_curve", "two_state_attack"]


@dataclass(frozen=True)
class MismatchReport:
    window_deviation: tuple[int, ...]
    max_pairwise_skew: int
    efficiency_at_window: tuple[float, ...]
    mismatch_ratio: float

    def as_dict(self) -> dict:
        return {
            "window_deviation_ps": list(self.window_deviation),
            "max_pairwise_skew_ps": self.max_pairwise_skew,
            "efficiency_at_window": list(self.efficiency_at_window),
            "mismatch_ratio": None if math.isinf(self.mismatch_ratio) else self.mismatch_ratio,
        }


def make_shift_attack(offsets: Optional[Mapping[str, int]] = None, common: int = 0,
                      period: Optional[int] = None, states: Optional[Mapping[str, float]] = None,
                      active_during: str = "calibration") -> AttackProfile:
    offsets = dict(offsets or {})
    vec = tuple(int(offsets.get(s, 0)) for s in STATES)
    if set(offsets) - set(STATES):
        raise ValueError(f"unknown states in offsets: {sorted(set(offsets) - set(STATES))}")
    if period is not None:
        vec = tuple(wrap(o, period) for o in vec)
        common = wrap(common, period)
    return AttackProfile(vec, int(common), None if states is None else states, active_during)


def two_state_attack(scenario: Scenario, t0: int, t1: int) -> AttackProfile:
    """Replace the calibration signal with H pulses arriving at ``t0`` and V at ``t1``."""
    honest = scenario.honest()
    h, v = arrival_time("H", honest), arrival_time("V", honest)
    return make_shift_attack({"H": t0 - h, "V": t1 - v}, period=scenario.period,
                             states={"H": 0.5, "V": 0.5})


def _honest_arrival(detector: GatedDetectorModel, honest: Scenario) -> int:
    return arrival_time(detector.dominant_state, honest)


def detector_efficiency(detector: GatedDetectorModel, window: int, honest: Scenario) -> float:
    delta = circular_distance(window - detector.delta_t_ps, _honest_arrival(detector, honest),
                              honest.period)
    return detector.efficiency * overlap_factor(delta, honest.pulse, detector)


def window_mismatch(outcome: SyncOutcome, delays: DelayTable, honest_scenario: Scenario) -> MismatchReport:
    """Skew and efficiency spread of calibrated windows under honest timing.

    Deviations are measured against each detector's true signal window;
    the skew compares window differences with the fixed relative delays.
    """
    if len(outcome.windows) != delays.n or delays.n != honest_scenario.n_detectors:
        raise ValueError("outcome, delay table and scenario disagree on detector count")
    period = honest_scenario.period
    windows = outcome.windows
    deviation = tuple(
        signed_residue(w - d.delta_t_ps - _honest_arrival(d, honest_scenario), period)
        for w, d in zip(windows, honest_scenario.detectors))
    skew = 0
    for i in range(delays.n):
        for j in range(i + 1, delays.n):
            r = signed_residue((windows[i] - windows[j]) - (delays.deltas[i] - delays.deltas[j]), period)
            skew = max(skew, abs(r))
    eff = tuple(detector_efficiency(d, w, honest_scenario)
                for w, d in zip(windows, honest_scenario.detectors))
    lo, hi = min(eff), max(eff)
    ratio = math.inf if lo == 0.0 else hi / lo
    if hi == 0.0:
        ratio = 1.0
    return MismatchReport(deviation, skew, eff, ratio)


def efficiency_curve(detector: GatedDetectorModel, scenario: Scenario,
                     grid_step: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Detection efficiency versus gate time over one period.

    Returns gate times and ``efficiency * overlap`` against the arrival of
    the state most strongly routed to the detector.
    """
    if grid_step < 1:
        raise ValueError("grid_step must be at least 1 ps")
    period = scenario.period
    gates = np.arange(0, period, grid_step, dtype=np.int64)
    arrival = _honest_arrival(detector, scenario)
    d = np.mod(gates - detector.delta_t_ps - arrival, period)
    delta = np.minimum(d, period - d).astype(float)
    var = scenario.pulse.sigma_ps ** 2 + detector.sigma_ps ** 2
    return gates, detector.efficiency * np.exp(-delta ** 2 / (2.0 * var))
