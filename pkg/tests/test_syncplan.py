import math

import pytest
from hypothesis import given, settings, strategies as st

from qsync.physics import AttackProfile, PulseModel, Scenario, circular_distance, detector_bank
from qsync.syncplan import (
    DelayTable, Probe, SearchPlan, Session, assign_windows, best_probe, coarse_search,
    fine_search_fixed, fine_search_nary, legacy_traversal, optimize_coarse_step,
    partition_ranges, relative_delays, run_method, sync_cost,
)

from conftest import oracle_count

P = 10_000
DELTAS = DelayTable((0, 30, 60, 90))
PLAN1 = SearchPlan(coarse_step_ps=120)
PLAN2 = SearchPlan(coarse_step_ps=500, fine_method="nary")


def scenario(arrival=2050, deltas=(0, 30, 60, 90), **kw):
    return Scenario(detectors=detector_bank(deltas), true_arrival=arrival, **kw)


def oracle_argmax(sc, candidates, duration_us):
    """Brute-force best (ref_time, detector) with smallest-time-then-id tie break."""
    scored = []
    for det, ref in candidates:
        gate = (ref + sc.detectors[det - 1].delta_t_ps) % P
        scored.append((-oracle_count(sc, det, gate, duration_us), ref % P, det))
    _, ref, det = min(scored)
    return ref, det


class TestRelativeDelays:
    def test_fig3_centres(self):
        assert relative_delays([2050, 2080, 2110, 2140]).deltas == (0, 30, 60, 90)

    def test_single(self):
        assert relative_delays([1234]).deltas == (0,)

    def test_negative(self):
        assert relative_delays([100, 50]).deltas == (0, -50)


class TestPartition:
    def test_reference_ranges(self):
        assert partition_ranges(4, 1e8, DelayTable((0, 0, 0, 0))) == [
            (0, 2500), (2500, 5000), (5000, 7500), (7500, 10000)]

    def test_single_detector(self):
        assert partition_ranges(1, 1e8, DelayTable((0,))) == [(0, 10000)]

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            partition_ranges(0, 1e8, DelayTable((0,)))

    @given(st.lists(st.integers(-3000, 3000), min_size=0, max_size=7))
    def test_tiling_after_delay_subtraction(self, tail):
        delays = DelayTable((0, *tail))
        ranges = partition_ranges(delays.n, 1e8, delays)
        for g in range(0, P, 10):
            hits = 0
            for i, (start, stop) in enumerate(ranges):
                lo = start - delays.deltas[i]
                if (g - lo) % P < stop - start:
                    hits += 1
            assert hits == 1


class TestCoarse:
    def test_matches_brute_force_argmax(self):
        for arrival, step in [(2050, 500), (2050, 120), (7777, 120), (9990, 300), (4, 60)]:
            sc = scenario(arrival)
            plan = SearchPlan(coarse_step_ps=step)
            t_l, n_l, probes = coarse_search(sc, plan, DELTAS)
            candidates = []
            for i in range(4):
                lo, hi = i * 2500, (i + 1) * 2500
                for k in range(math.ceil((hi - lo) / step)):
                    candidates.append((i + 1, lo + k * step + min(step, hi - lo - k * step) // 2))
            assert (t_l, n_l) == oracle_argmax(sc, candidates, 1000)
            assert len(probes) == len(candidates)

    def test_worked_example(self):
        t_l, n_l, _ = coarse_search(scenario(2050), SearchPlan(coarse_step_ps=500), DELTAS)
        assert n_l == 1 and abs(t_l - 2050) <= 250

    @pytest.mark.parametrize("arrival", range(0, 2500, 50))
    def test_peak_detector_is_spd1_in_first_slice(self, arrival):
        _, n_l, _ = coarse_search(scenario(arrival), PLAN2, DELTAS)
        assert n_l == 1

    def test_dark_tie_break(self):
        sc = scenario(pulse=PulseModel(mu=0.0))
        t_l, n_l, probes = coarse_search(sc, PLAN1, DELTAS)
        assert {p.count for p in probes} == {0}
        assert (t_l, n_l) == (60, 1)

    def test_step_above_fwhm_rejected(self):
        with pytest.raises(ValueError):
            coarse_search(scenario(), SearchPlan(coarse_step_ps=600), DELTAS)

    def test_rounds_are_parallel(self):
        session = Session(scenario(), DELTAS)
        coarse_search(session.source, PLAN1, DELTAS, session)
        assert session.rounds == 21 and session.simulated_time_ms == 21.0


class TestFineFixed:
    def test_round_count_and_fig3_ranges(self):
        session = Session(scenario(2050), DELTAS)
        t_h, n_h, probes = fine_search_fixed(2100, 1, session.source, PLAN1, DELTAS, session)
        assert session.rounds == 3 and session.simulated_time_ms == 15.0
        ref_spans = {}
        for p in probes:
            ref = session.ref_time(p)
            lo, hi = ref_spans.get(p.detector_id, (ref, ref))
            ref_spans[p.detector_id] = (min(lo, ref), max(hi, ref))
        assert ref_spans == {1: (2040, 2060), 2: (2070, 2090), 3: (2100, 2120), 4: (2130, 2150)}
        gate_spans = {d: (min(p.gate_time_ps for p in probes if p.detector_id == d),
                          max(p.gate_time_ps for p in probes if p.detector_id == d)) for d in range(1, 5)}
        assert gate_spans == {1: (2040, 2060), 2: (2100, 2120), 3: (2160, 2180), 4: (2220, 2240)}
        assert abs(t_h - 2050) <= 5

    @pytest.mark.parametrize("arrival", [0, 1234, 2050, 5003, 9995])
    def test_matches_fine_grid_argmax(self, arrival):
        sc = scenario(arrival)
        t_l, n_l, _ = coarse_search(sc, PLAN1, DELTAS)
        t_h, n_h, _ = fine_search_fixed(t_l, n_l, sc, PLAN1, DELTAS)
        candidates = [(k + 1, t_l - 60 + 30 * k + 10 * j) for k in range(4) for j in range(3)]
        assert (t_h, n_h) == oracle_argmax(sc, candidates, 5000)


class TestFineNary:
    def test_round_structure(self):
        session = Session(scenario(2050), DELTAS)
        t_h, n_h, probes = fine_search_nary(2250, 1, session.source, PLAN2, DELTAS, session)
        assert session.rounds == 3
        spacings = []
        for r in range(3):
            refs = sorted(session.ref_time(p) for p in probes if p.round == r)
            assert len(refs) == 4
            spacings.append(refs[1] - refs[0])
        # 1000 ps window split 4 ways per round: 250, 62.5, 15.625 ps
        assert spacings[0] == 250 and spacings[1] in (62, 63) and spacings[2] in (15, 16)
        assert abs(t_h - 2050) <= 20

    @pytest.mark.parametrize("arrival", [0, 777, 2050, 4999, 9960])
    def test_close_to_exhaustive_argmax(self, arrival):
        sc = scenario(arrival)
        t_l, n_l, _ = coarse_search(sc, PLAN2, DELTAS)
        t_h, _, _ = fine_search_nary(t_l, n_l, sc, PLAN2, DELTAS)
        exhaustive, _ = oracle_argmax(sc, [(1, g) for g in range(0, P, 10)], 5000)
        assert circular_distance(t_h, exhaustive, P) <= 20

    def test_needs_two_detectors(self):
        sc = Scenario(detectors=detector_bank((0,)), true_arrival=100)
        with pytest.raises(ValueError):
            fine_search_nary(100, 1, sc, PLAN2, DelayTable((0,)))


class TestAssign:
    def test_from_reference(self):
        assert assign_windows(2050, 1, DELTAS, P) == (2050, 2080, 2110, 2140)

    def test_from_other_detector(self):
        assert assign_windows(2110, 3, DELTAS, P) == (2050, 2080, 2110, 2140)

    def test_single(self):
        assert assign_windows(777, 1, DelayTable((0,)), P) == (777,)

    def test_wraps(self):
        assert assign_windows(9980, 1, DELTAS, P) == (9980, 10, 40, 70)


class TestCost:
    def test_default_optimum(self):
        assert sync_cost(120) == 36
        assert optimize_coarse_step() == (120, 36)

    def test_endpoints(self):
        assert sync_cost(10) == 255
        assert sync_cost(500) == 70

    def test_tie_at_160(self):
        assert sync_cost(160) == 36
        assert optimize_coarse_step([160, 120]) == (120, 36)

    def test_single_point(self):
        # ceil(10000 / 400) = 25 coarse rounds, ceil(100 / 40) = 3 fine rounds
        assert optimize_coarse_step([100]) == (100, 40)

    def test_one_detector(self):
        costs = {t: sync_cost(t, n=1) for t in range(10, 501, 10)}
        best = min(costs.values())
        assert optimize_coarse_step(n=1) == (min(t for t, c in costs.items() if c == best), best)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            sync_cost(0)


class TestLegacy:
    def test_concurrent_time(self):
        out = legacy_traversal(scenario(), 10, 5000, True, DELTAS)
        assert out.simulated_time_ms == 5000
        assert out.windows == (2050, 2080, 2110, 2140)

    def test_sequential_time(self):
        out = legacy_traversal(scenario(), 10, 5000, False, DELTAS)
        assert out.simulated_time_ms == 20000

    def test_attack_separates_windows(self):
        sc = scenario(2050).with_attack(AttackProfile(state_offset={"H": -50, "V": 450},
                                                      states={"H": 0.5, "V": 0.5}))
        out = legacy_traversal(sc, 10, 5000, True, DELTAS)
        assert abs(out.windows[0] - 2000) <= 5
        assert abs(out.windows[1] - 30 - 2500) <= 5


class TestRunMethod:
    def test_method1(self, reference_scenario):
        out = run_method(reference_scenario, PLAN1, DELTAS, "method1")
        assert out.simulated_time_ms == 36 and out.coarse_rounds == 21 and out.fine_rounds == 3

    def test_method2(self, reference_scenario):
        out = run_method(reference_scenario, PLAN2, DELTAS, "method2")
        assert out.simulated_time_ms == 20 and out.fine_rounds == 3

    def test_legacy(self, reference_scenario):
        assert run_method(reference_scenario, PLAN1, DELTAS, "legacy").simulated_time_ms == 5000

    def test_mismatched_detector_count(self, reference_scenario):
        with pytest.raises(ValueError):
            run_method(reference_scenario, PLAN1, DelayTable((0, 1)), "method1")

    def test_unknown_method(self, reference_scenario):
        with pytest.raises(ValueError):
            run_method(reference_scenario, PLAN1, DELTAS, "method3")


attacks = st.builds(
    AttackProfile,
    state_offset=st.tuples(*[st.integers(-P, P)] * 4),
    common_offset=st.integers(-P, P),
)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, P - 1), st.lists(st.integers(-400, 400), min_size=3, max_size=3),
       attacks, st.sampled_from(["method1", "method2"]))
def test_window_difference_invariant(arrival, tail, attack, method):
    deltas = (0, *tail)
    sc = scenario(arrival, deltas).with_attack(attack)
    table = DelayTable(deltas)
    out = run_method(sc, PLAN1 if method == "method1" else PLAN2, table, method)
    for i in range(4):
        for j in range(4):
            assert (out.windows[i] - out.windows[j]) % P == (deltas[i] - deltas[j]) % P


@given(st.lists(st.tuples(st.integers(1, 4), st.integers(0, P - 1), st.integers(0, 10**6)),
                min_size=1, max_size=40),
       st.floats(1e-3, 1e3))
def test_argmax_scale_invariance(entries, c):
    session = Session(scenario(), DELTAS)
    probes = [Probe(0, d, g, 1000, n) for d, g, n in entries]
    scaled = [p._replace(count=p.count * c) for p in probes]
    assert best_probe(probes, session)[:2] == best_probe(scaled, session)[:2]


@pytest.mark.parametrize("t", range(10, 501, 10))
def test_cost_identity(t, reference_scenario):
    out = run_method(reference_scenario, SearchPlan(coarse_step_ps=t), DELTAS, "method1")
    assert out.simulated_time_ms == sync_cost(t)


def test_speedup_bound(reference_scenario):
    legacy = legacy_traversal(reference_scenario, 10, 5000, False, DELTAS)
    for plan, method in [(PLAN1, "method1"), (PLAN2, "method2")]:
        assert run_method(reference_scenario, plan, DELTAS, method).simulated_time_ms <= legacy.simulated_time_ms / 4


@pytest.mark.parametrize("delta", [0, 100, 333, 2000, 5000, 9999])
@pytest.mark.parametrize("method", ["method1", "method2"])
def test_common_shift_immunity(delta, method):
    base = scenario(2050)
    plan = PLAN1 if method == "method1" else PLAN2
    honest = run_method(base, plan, DELTAS, method)
    shifted = run_method(base.with_attack(AttackProfile(common_offset=delta)), plan, DELTAS, method)
    shifts = [(s - h) % P for s, h in zip(shifted.windows, honest.windows)]
    assert len(set(shifts)) == 1
    assert circular_distance(shifts[0], delta, P) <= 2 * plan.fine_precision_ps
