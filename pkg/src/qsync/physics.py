"""Statistical model of the calibration light path and the gated detectors.

All times are integer picoseconds. Positions on the pulse period are reduced
modulo ``P = 10**12 / f``; durations (accumulation times) are integer
microseconds so that they match the wire format and the report CSVs.

The detection model is deliberately simple: a Gaussian pulse seen through a
Gaussian gate, so the click probability of a detector is a smooth unimodal
function of the gate position. Routing fractions split the coherent pulse
before detection, hence they scale the mean photon number inside the
exponent rather than the click probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

STATES = ("H", "V", "D", "A")
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

StateVector = tuple[float, float, float, float]


def wrap(t: int, period: int) -> int:
    """Reduce a time position onto ``[0, period)``."""
    return int(t) % period


def signed_residue(t: int, period: int) -> int:
    """Representative of ``t mod period`` in ``[-period/2, period/2)``."""
    r = int(t) % period
    return r - period if r >= period - period // 2 else r


def circular_distance(a: int, b: int, period: int) -> int:
    d = (int(a) - int(b)) % period
    return min(d, period - d)


def _state_vector(values: Union[Mapping[str, float], Sequence[float]], name: str) -> StateVector:
    if isinstance(values, Mapping):
        unknown = set(values) - set(STATES)
        if unknown:
            raise ValueError(f"{name}: unknown polarization state(s) {sorted(unknown)}")
        return tuple(float(values.get(s, 0.0)) for s in STATES)  # type: ignore[return-value]
    vec = tuple(float(v) for v in values)
    if len(vec) != len(STATES):
        raise ValueError(f"{name}: expected {len(STATES)} entries, got {len(vec)}")
    return vec  # type: ignore[return-value]


def state_index(state: str) -> int:
    try:
        return STATES.index(state)
    except ValueError:
        raise ValueError(f"unknown polarization state {state!r}") from None


@dataclass(frozen=True)
class PulseModel:
    fwhm_ps: int = 500
    mu: float = 3.0
    rate_hz: float = 1.0e8
    state_distribution: StateVector = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "state_distribution",
                           _state_vector(self.state_distribution, "state_distribution"))
        if self.fwhm_ps <= 0:
            raise ValueError("fwhm_ps must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        check_distribution(self.state_distribution, "state_distribution")
        rate = float(self.rate_hz)
        if rate <= 0 or rate != int(rate) or 10**12 % int(rate):
            raise ValueError(f"rate_hz={self.rate_hz} does not give an integer ps period")

    @property
    def period(self) -> int:
        return 10**12 // int(self.rate_hz)

    @property
    def sigma_ps(self) -> float:
        return self.fwhm_ps * FWHM_TO_SIGMA


def check_distribution(dist: Sequence[float], name: str) -> None:
    if any(p < 0 for p in dist) or abs(sum(dist) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a probability vector, got {dist}")


@dataclass(frozen=True)
class ChannelModel:
    loss_db: float = 10.3
    delay_ps: int = 0

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError("loss_db must be non-negative")

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


@dataclass(frozen=True)
class GatedDetectorModel:
    """One gated SPD of the receiver bank.

    ``routing`` gives, for each of H, V, D, A, the probability that a pulse
    in that state is steered to this detector. ``delta_t_ps`` is the fixed
    offset of this detector's signal window relative to detector 1.
    """

    id: int
    efficiency: float = 0.153
    dark_prob: float = 8.0e-7
    gate_fwhm_ps: int = 1000
    delta_t_ps: int = 0
    routing: StateVector = (0.5, 0.0, 0.25, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "routing", _state_vector(self.routing, "routing"))
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if not 0.0 <= self.dark_prob < 1.0:
            raise ValueError("dark_prob must lie in [0, 1)")
        if self.gate_fwhm_ps <= 0:
            raise ValueError("gate_fwhm_ps must be positive")
        if any(not 0.0 <= r <= 1.0 for r in self.routing):
            raise ValueError("routing entries must lie in [0, 1]")

    @property
    def sigma_ps(self) -> float:
        return self.gate_fwhm_ps * FWHM_TO_SIGMA

    @property
    def dominant_state(self) -> str:
        """State most strongly routed here; first such state on ties."""
        return STATES[int(np.argmax(self.routing))]


# Passive 50/50 basis choice followed by a polarizing splitter per basis.
BB84_ROUTING: tuple[StateVector, ...] = (
    (0.5, 0.0, 0.25, 0.25),
    (0.0, 0.5, 0.25, 0.25),
    (0.25, 0.25, 0.5, 0.0),
    (0.25, 0.25, 0.0, 0.5),
)


def default_routing(n: int) -> tuple[StateVector, ...]:
    if n == 4:
        return BB84_ROUTING
    share = 1.0 / n
    return tuple((share,) * 4 for _ in range(n))


def detector_bank(delta_t_ps: Sequence[int] = (0, 0, 0, 0), **kwargs) -> tuple[GatedDetectorModel, ...]:
    """Identical detectors with the given relative delays and default routing."""
    routing = default_routing(len(delta_t_ps))
    return tuple(GatedDetectorModel(id=i + 1, delta_t_ps=int(d), routing=routing[i], **kwargs)
                 for i, d in enumerate(delta_t_ps))


@dataclass(frozen=True)
class AttackProfile:
    """Arrival-time manipulation applied to the calibration pulses.

    ``states`` optionally replaces the calibration state pattern, modelling
    an adversary that substitutes its own synchronization signal.
    """

    state_offset: StateVector = (0, 0, 0, 0)
    common_offset: int = 0
    states: Optional[StateVector] = None
    active_during: str = "calibration"

    def __post_init__(self):
        offsets = _state_vector(self.state_offset, "state_offset")
        object.__setattr__(self, "state_offset", tuple(int(o) for o in offsets))
        object.__setattr__(self, "common_offset", int(self.common_offset))
        if self.states is not None:
            states = _state_vector(self.states, "states")
            check_distribution(states, "attack states")
            object.__setattr__(self, "states", states)
        if self.active_during not in ("calibration", "always"):
            raise ValueError(f"active_during must be 'calibration' or 'always', got {self.active_during!r}")

    @property
    def is_honest(self) -> bool:
        return self.states is None and self.common_offset == 0 and not any(self.state_offset)

    def offset_of(self, state: str) -> int:
        return self.state_offset[state_index(state)]


HONEST = AttackProfile()


@dataclass(frozen=True)
class Scenario:
    pulse: PulseModel = field(default_factory=PulseModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    detectors: tuple[GatedDetectorModel, ...] = field(default_factory=detector_bank)
    attack: AttackProfile = HONEST
    true_arrival: int = 0
    seed: int = 0
    count_mode: str = "expected"

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if not self.detectors:
            raise ValueError("scenario needs at least one detector")
        ids = [d.id for d in self.detectors]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"detector ids must be 1..N in order, got {ids}")
        for k in range(len(STATES)):
            if sum(d.routing[k] for d in self.detectors) > 1.0 + 1e-12:
                raise ValueError(f"routing for state {STATES[k]} sums above 1")
        if self.count_mode not in ("expected", "sampled"):
            raise ValueError(f"count_mode must be 'expected' or 'sampled', got {self.count_mode!r}")

    @property
    def period(self) -> int:
        return self.pulse.period

    @property
    def n_detectors(self) -> int:
        return len(self.detectors)

    def detector(self, detector_id: int) -> GatedDetectorModel:
        if not 1 <= detector_id <= len(self.detectors):
            raise IndexError(f"detector id {detector_id} outside 1..{len(self.detectors)}")
        return self.detectors[detector_id - 1]

    @property
    def calibration_states(self) -> StateVector:
        if self.attack.states is not None:
            return self.attack.states
        return self.pulse.state_distribution

    def with_attack(self, attack: AttackProfile) -> "Scenario":
        return replace(self, attack=attack)

    def honest(self) -> "Scenario":
        """The scenario seen after calibration, once a calibration-only attack stops."""
        if self.attack.active_during == "always":
            return self
        return replace(self, attack=HONEST)


def arrival_time(state: str, scenario: Scenario) -> int:
    t = (scenario.true_arrival + scenario.channel.delay_ps
         + scenario.attack.common_offset + scenario.attack.offset_of(state))
    return wrap(t, scenario.period)


def overlap_factor(delta: float, pulse: PulseModel, detector: GatedDetectorModel,
                   period: Optional[int] = None) -> float:
    """Relative response of a gate offset by ``delta`` ps from the pulse.

    With ``period`` the offset is first folded to the circular distance.
    """
    if period is not None:
        d = abs(delta) % period
        delta = min(d, period - d)
    var = pulse.sigma_ps ** 2 + detector.sigma_ps ** 2
    return math.exp(-(delta * delta) / (2.0 * var))


def click_probability(detector: GatedDetectorModel, state: str, gate_time: int, scenario: Scenario) -> float:
    period = scenario.period
    # The detector's own delay means its gate at g samples the pulse train at g - delta_t.
    delta = circular_distance(gate_time - detector.delta_t_ps, arrival_time(state, scenario), period)
    g = overlap_factor(delta, scenario.pulse, detector)
    mean_detected = (scenario.pulse.mu * scenario.channel.transmittance
                     * detector.routing[state_index(state)] * detector.efficiency * g)
    return 1.0 - (1.0 - detector.dark_prob) * math.exp(-mean_detected)


def mean_click_probability(detector: GatedDetectorModel, gate_time: int, scenario: Scenario) -> float:
    """Click probability per gate, averaged over the calibration state mix."""
    return sum(w * click_probability(detector, s, gate_time, scenario)
               for s, w in zip(STATES, scenario.calibration_states) if w > 0.0)


def pulses_in(duration_us: int, pulse: PulseModel) -> int:
    return int(round(pulse.rate_hz * duration_us * 1e-6))


def accumulate_counts(detector: GatedDetectorModel, gate_time: int, duration_us: int,
                      scenario: Scenario, rng: Optional[np.random.Generator] = None) -> int:
    """Clicks registered by ``detector`` gated at ``gate_time`` for ``duration_us``.

    Expected mode returns the rounded mean. Sampled mode draws from
    ``Binomial(n, p)`` with numpy's exact sampler; when ``rng`` is omitted a
    fresh generator seeded from the scenario is used, so repeated calls
    return the same draw.
    """
    if duration_us <= 0:
        raise ValueError(f"accumulation must be positive, got {duration_us} us")
    n = pulses_in(duration_us, scenario.pulse)
    p = mean_click_probability(detector, wrap(gate_time, scenario.period), scenario)
    if scenario.count_mode == "expected":
        return int(math.floor(n * p + 0.5))
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    return int(rng.binomial(n, p))


class ScenarioSource:
    """In-process pulse source answering gate queries from the physics model.

    Each instance owns its random stream, so two sources built from the same
    scenario produce identical sampled sequences.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.period = scenario.period
        self.n_detectors = scenario.n_detectors
        self.fwhm_ps = scenario.pulse.fwhm_ps
        self.rng = np.random.default_rng(scenario.seed)

    def counts(self, detector_id: int, gate_time_ps: int, accumulation_us: int) -> int:
        return accumulate_counts(self.scenario.detector(detector_id), gate_time_ps,
                                 accumulation_us, self.scenario, self.rng)

    def close(self) -> None:
        pass
