import math

import pytest

from qsync.physics import Scenario, detector_bank

_RESULTS = []


def oracle_mean_probability(scenario, detector_id, gate_time):
    """Closed-form click probability averaged over states, written out longhand."""
    det = scenario.detectors[detector_id - 1]
    P = scenario.period
    c = 2.0 * math.sqrt(2.0 * math.log(2.0))
    var = (scenario.pulse.fwhm_ps / c) ** 2 + (det.gate_fwhm_ps / c) ** 2
    trans = 10.0 ** (-scenario.channel.loss_db / 10.0)
    weights = scenario.attack.states or scenario.pulse.state_distribution
    total = 0.0
    for k, w in enumerate(weights):
        arrival = (scenario.true_arrival + scenario.channel.delay_ps + scenario.attack.common_offset
                   + scenario.attack.state_offset[k]) % P
        d = abs((gate_time - det.delta_t_ps - arrival) % P)
        d = min(d, P - d)
        g = math.exp(-d * d / (2 * var))
        total += w * (1 - (1 - det.dark_prob) * math.exp(-scenario.pulse.mu * trans * det.routing[k]
                                                         * det.efficiency * g))
    return total


def oracle_count(scenario, detector_id, gate_time, duration_us):
    n = round(scenario.pulse.rate_hz * duration_us / 1e6)
    return math.floor(n * oracle_mean_probability(scenario, detector_id, gate_time) + 0.5)


@pytest.fixture
def reference_scenario():
    return Scenario(detectors=detector_bank((0, 30, 60, 90)), true_arrival=2050)


def record_acceptance(number, name, passed, detail=""):
    _RESULTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
