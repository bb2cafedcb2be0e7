"""Coarse/fine calibration of a bank of gated detectors.

Every detector searches its own slice of the period at the same time, with
its fixed relative delay applied to the gate, so one accumulation period
buys N probes. The coarse pass locates the pulse to within one step; the
fine pass either sweeps that step at the hardware precision (``method1``) or
refines it N-arily (``method2``). Windows for all detectors are then derived
from the single best probe plus the relative-delay table, which is what
makes the result immune to per-state arrival shifts.

Probe positions are tracked in the reference frame of detector 1; the gate
actually sent to detector ``i`` is ``ref_time + delta_t[i]``.

``source`` arguments accept either a :class:`~qsync.physics.Scenario` or any
object with ``counts(detector_id, gate_time_ps, accumulation_us)``,
``period`` and ``n_detectors`` attributes, such as a remote link client.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .physics import Scenario, ScenarioSource, circular_distance, wrap

METHODS = ("legacy", "method1", "method2")


@dataclass(frozen=True)
class DelayTable:
    deltas: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(int(d) for d in self.deltas))
        if not self.deltas:
            raise ValueError("delay table needs at least one detector")
        if self.deltas[0] != 0:
            raise ValueError("reference detector must have zero relative delay")

    @property
    def n(self) -> int:
        return len(self.deltas)

    def of(self, detector_id: int) -> int:
        return self.deltas[detector_id - 1]

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "DelayTable":
        return relative_delays([d.delta_t_ps for d in scenario.detectors])


@dataclass(frozen=True)
class SearchPlan:
    coarse_step_ps: int = 120
    coarse_accum_us: int = 1000
    fine_precision_ps: int = 10
    fine_accum_us: int = 5000
    fine_method: str = "fixed_step"
    # N-ary refinement stops once a sub-interval is at most this many precisions wide.
    nary_stop_factor: int = 2

    def __post_init__(self):
        if self.coarse_step_ps <= 0 or self.fine_precision_ps <= 0:
            raise ValueError("search steps must be positive")
        if self.coarse_accum_us <= 0 or self.fine_accum_us <= 0:
            raise ValueError("accumulation times must be positive")
        if self.fine_method not in ("fixed_step", "nary"):
            raise ValueError(f"unknown fine_method {self.fine_method!r}")


class Probe(NamedTuple):
    round: int
    detector_id: int
    gate_time_ps: int
    accumulation_us: int
    count: int


class StageResult(NamedTuple):
    time: int
    detector: int
    probes: list[Probe]


@dataclass(frozen=True)
class SyncOutcome:
    method: str
    windows: tuple[int, ...]
    best_fine: tuple[int, int]
    best_coarse: Optional[tuple[int, int]]
    probes: tuple[Probe, ...]
    simulated_time_ms: float
    coarse_rounds: int = 0
    fine_rounds: int = 0

    @property
    def t_h(self) -> int:
        return self.best_fine[0]

    @property
    def n_h(self) -> int:
        return self.best_fine[1]


def as_source(source):
    if isinstance(source, Scenario):
        return ScenarioSource(source)
    return source


class Session:
    """Round bookkeeping shared by the stages of one calibration run."""

    def __init__(self, source, delays: DelayTable):
        self.source = as_source(source)
        if self.source.n_detectors != delays.n:
            raise ValueError(f"source has {self.source.n_detectors} detectors, delay table {delays.n}")
        self.delays = delays
        self.period = self.source.period
        self.probes: list[Probe] = []
        self.rounds = 0
        self.elapsed_us = 0

    def run_round(self, requests: Iterable[tuple[int, int]], accumulation_us: int) -> list[Probe]:
        """Probe each ``(detector_id, ref_time)`` simultaneously for one accumulation."""
        requests = list(requests)
        detectors = [d for d, _ in requests]
        if len(set(detectors)) != len(detectors):
            raise ValueError("a detector can only be gated once per round")
        out = []
        for det, ref_time in requests:
            gate = wrap(ref_time + self.delays.of(det), self.period)
            out.append(Probe(self.rounds, det, gate, accumulation_us,
                             int(self.source.counts(det, gate, accumulation_us))))
        self.probes.extend(out)
        self.rounds += 1
        self.elapsed_us += accumulation_us
        return out

    def ref_time(self, probe: Probe) -> int:
        return wrap(probe.gate_time_ps - self.delays.of(probe.detector_id), self.period)

    @property
    def simulated_time_ms(self) -> float:
        return self.elapsed_us / 1000.0


def relative_delays(windows: Sequence[int]) -> DelayTable:
    if not windows:
        raise ValueError("need at least one window")
    ref = int(windows[0])
    return DelayTable(tuple(int(w) - ref for w in windows))


def partition_ranges(n: int, rate_hz: float, delays: DelayTable) -> list[tuple[int, int]]:
    """Per-detector coarse search ranges as half-open ``(start, stop)`` gate times.

    ``start`` is reduced onto the period; ``stop - start`` is the slice width,
    so ``stop`` may exceed the period when a range wraps around.
    """
    if n <= 0:
        raise ValueError("need at least one detector")
    if n != delays.n:
        raise ValueError(f"n={n} does not match delay table of {delays.n} detectors")
    period = 10**12 // int(rate_hz)
    if period < n:
        raise ValueError(f"period {period} ps cannot be split into {n} ranges")
    ranges = []
    for i in range(1, n + 1):
        lo, hi = (i - 1) * period // n, i * period // n
        start = wrap(lo + delays.of(i), period)
        ranges.append((start, start + hi - lo))
    return ranges


def best_probe(probes: Sequence[Probe], session: Session) -> tuple[int, int, int]:
    """Maximum-count probe as ``(ref_time, detector_id, count)``.

    Ties go to the smallest reference time, then the smallest detector id.
    """
    if not probes:
        raise ValueError("no probes to choose from")
    best = min(probes, key=lambda p: (-p.count, session.ref_time(p), p.detector_id))
    return session.ref_time(best), best.detector_id, best.count


def _coarse_bins(width: int, step: int) -> list[int]:
    """Offsets of bin centres covering ``[0, width)``; the last bin may be short."""
    centres = []
    for lo in range(0, width, step):
        centres.append(lo + min(step, width - lo) // 2)
    return centres


def coarse_search(source, plan: SearchPlan, delays: DelayTable,
                  session: Optional[Session] = None) -> StageResult:
    """Parallel traversal of each detector's slice at ``coarse_step`` spacing.

    Each detector probes the centre of every step-wide bin of its slice; all
    detectors advance one bin per round. Returns ``(t_l, n_l, probes)`` with
    ``t_l`` in the reference frame.
    """
    session = session or Session(source, delays)
    fwhm = getattr(session.source, "fwhm_ps", None)
    if fwhm is not None and plan.coarse_step_ps > fwhm:
        raise ValueError(f"coarse step {plan.coarse_step_ps} ps exceeds pulse FWHM {fwhm} ps")
    period, n = session.period, delays.n
    schedules = []
    for i in range(1, n + 1):
        lo, hi = (i - 1) * period // n, i * period // n
        if hi <= lo:
            raise ValueError(f"detector {i} has an empty search range")
        schedules.append([lo + c for c in _coarse_bins(hi - lo, plan.coarse_step_ps)])
    probes = []
    for k in range(max(len(s) for s in schedules)):
        req = [(i + 1, s[k]) for i, s in enumerate(schedules) if k < len(s)]
        probes += session.run_round(req, plan.coarse_accum_us)
    t_l, n_l, _ = best_probe(probes, session)
    return StageResult(t_l, n_l, probes)


def fine_search_fixed(t_l: int, n_l: int, source, plan: SearchPlan, delays: DelayTable,
                      session: Optional[Session] = None) -> StageResult:
    """Sweep one coarse step around ``t_l`` at the fine precision.

    The interval ``[t_l - t/2, t_l + t/2)`` is cut into N contiguous pieces,
    one per detector, each swept with ``ceil(t / (N * precision))`` probes.
    """
    session = session or Session(source, delays)
    t, prec, n = plan.coarse_step_ps, plan.fine_precision_ps, delays.n
    lo = t_l - t // 2
    per_detector = math.ceil(t / (n * prec))
    probes = []
    for j in range(per_detector):
        req = [(k + 1, wrap(lo + (k * t) // n + j * prec, session.period)) for k in range(n)]
        probes += session.run_round(req, plan.fine_accum_us)
    t_h, n_h, _ = best_probe(probes, session)
    return StageResult(t_h, n_h, probes)


def fine_search_nary(t_l: int, n_l: int, source, plan: SearchPlan, delays: DelayTable,
                     session: Optional[Session] = None) -> StageResult:
    """N-ary interval refinement starting from ``[t_l - step, t_l + step)``.

    Every round probes the midpoints of N equal sub-intervals, one detector
    each, and keeps the sub-interval of the best probe. The round whose
    sub-intervals are no wider than ``nary_stop_factor * precision`` is the
    last; its best probe is ``t_h``.
    """
    n = delays.n
    if n < 2:
        raise ValueError("N-ary refinement needs at least two detectors")
    session = session or Session(source, delays)
    lo, width = float(t_l - plan.coarse_step_ps), 2.0 * plan.coarse_step_ps
    stop = plan.nary_stop_factor * plan.fine_precision_ps
    probes = []
    while True:
        sub = width / n
        req = [(k + 1, wrap(int(math.floor(lo + (k + 0.5) * sub + 0.5)), session.period))
               for k in range(n)]
        round_probes = session.run_round(req, plan.fine_accum_us)
        probes += round_probes
        best_t, best_n, _ = best_probe(round_probes, session)
        if sub <= stop:
            return StageResult(best_t, best_n, probes)
        lo, width = lo + (best_n - 1) * sub, sub


def assign_windows(t_h: int, n_h: int, delays: DelayTable, period: int) -> tuple[int, ...]:
    """Signal windows of every detector from the gate time ``t_h`` found on ``n_h``."""
    if not 1 <= n_h <= delays.n:
        raise ValueError(f"detector {n_h} outside 1..{delays.n}")
    return tuple(wrap(t_h if m == n_h else t_h + delays.of(m) - delays.of(n_h), period)
                 for m in range(1, delays.n + 1))


def sync_cost(t: int, n: int = 4, period: int = 10000, precision: int = 10,
              coarse_ms: float = 1.0, fine_ms: float = 5.0) -> float:
    """Calibration time in ms for coarse step ``t`` with ``n`` parallel detectors."""
    if t <= 0:
        raise ValueError("coarse step must be positive")
    return -(-period // (n * t)) * coarse_ms + -(-t // (n * precision)) * fine_ms


def optimize_coarse_step(grid: Iterable[int] = range(10, 501, 10), **cost_params) -> tuple[int, float]:
    """Grid minimiser of :func:`sync_cost`; ties resolve to the smaller step."""
    grid = sorted(int(t) for t in grid)
    if not grid:
        raise ValueError("empty grid")
    costs = [(sync_cost(t, **cost_params), t) for t in grid]
    cost, t = min(costs)
    return t, cost


def legacy_traversal(source, precision_ps: int, accumulation_us: int,
                     parallel_detectors: bool = True, delays: Optional[DelayTable] = None,
                     session: Optional[Session] = None) -> SyncOutcome:
    """Independent full-period scan per detector, each keeping its own peak."""
    if session is None:
        source = as_source(source)
        session = Session(source, delays or DelayTable((0,) * source.n_detectors))
    period, n = session.period, session.delays.n
    gates = list(range(0, period, precision_ps))
    per_detector: dict[int, list[Probe]] = {d: [] for d in range(1, n + 1)}
    # Probes are issued in the detector's own frame, so undo the delay that run_round adds.
    if parallel_detectors:
        for g in gates:
            for p in session.run_round([(d, g - session.delays.of(d)) for d in range(1, n + 1)],
                                       accumulation_us):
                per_detector[p.detector_id].append(p)
    else:
        for d in range(1, n + 1):
            for g in gates:
                per_detector[d] += session.run_round([(d, g - session.delays.of(d))], accumulation_us)
    windows = []
    for d in range(1, n + 1):
        best = min(per_detector[d], key=lambda p: (-p.count, p.gate_time_ps))
        windows.append(best.gate_time_ps)
    t_h, n_h, _ = best_probe(session.probes, session)
    return SyncOutcome("legacy", tuple(windows), (t_h, n_h), None, tuple(session.probes),
                       session.simulated_time_ms, 0, session.rounds)


def run_method(source, plan: SearchPlan, delays: DelayTable, method: str,
               parallel_detectors: bool = True) -> SyncOutcome:
    """Full calibration with the given method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    session = Session(source, delays)
    if method == "legacy":
        return legacy_traversal(session.source, plan.fine_precision_ps, plan.fine_accum_us,
                                parallel_detectors, session=session)
    t_l, n_l, _ = coarse_search(session.source, plan, delays, session)
    coarse_rounds = session.rounds
    fine = fine_search_fixed if method == "method1" else fine_search_nary
    t_h, n_h, _ = fine(t_l, n_l, session.source, plan, delays, session)
    windows = assign_windows(t_h + delays.of(n_h), n_h, delays, session.period)
    return SyncOutcome(method, windows, (t_h, n_h), (t_l, n_l), tuple(session.probes),
                       session.simulated_time_ms, coarse_rounds, session.rounds - coarse_rounds)


def window_error(outcome: SyncOutcome, scenario: Scenario) -> int:
    """Largest circular distance between a recovered window and the honest one."""
    period = scenario.period
    honest = scenario.true_arrival + scenario.channel.delay_ps
    return max(circular_distance(w, honest + d.delta_t_ps, period)
               for w, d in zip(outcome.windows, scenario.detectors))
