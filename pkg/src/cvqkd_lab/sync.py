"""Bob's control plane: timing lock, packet-start detection, polarization hill-climb.

Everything here runs on the bias-corrected (clone-differenced) control path, so
vacuum noise per quadrature is doubled relative to the key path.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import POL_DRIFT_AXES, polarization_unitary
from .transmitter import ID_BITS, PATTERN_BITS, PAYLOAD_SYMBOLS, V_POL
from .units import DetectorConstants

PACKET_PERIODS = 1 + PATTERN_BITS + ID_BITS + PAYLOAD_SYMBOLS + PATTERN_BITS
PERIOD_NS = 1000


class LockStatus(enum.Enum):
    SEARCHING = "searching"
    LOCKED = "locked"


@dataclass(frozen=True)
class LockState:
    status: LockStatus = LockStatus.SEARCHING
    bin_phase_ns: int = 0
    misses: int = 0
    z_threshold: float = 0.0
    miss_budget: int = 8

    def __post_init__(self):
        if not 0 <= self.bin_phase_ns < PERIOD_NS:
            raise ValueError("bin phase must lie in [0, 1000) ns")

    @property
    def locked(self) -> bool:
        return self.status is LockStatus.LOCKED


def lock_step(state: LockState, z: float, early_late: int = 0) -> LockState:
    """Advance the lock state machine by one period.

    ``z`` is the control-path reference-bin Z at the current LO timing;
    ``early_late`` is the sign of (Z sampled late - Z sampled early), telling
    which way the reference pulse has slipped. Locked corrections are clipped
    to one nanosecond per period.
    """
    seen = z >= state.z_threshold
    if state.status is LockStatus.SEARCHING:
        if seen:
            return replace(state, status=LockStatus.LOCKED, misses=0)
        return state
    if not seen:
        misses = state.misses + 1
        if misses > state.miss_budget:
            return replace(state, status=LockStatus.SEARCHING, misses=0)
        return replace(state, misses=misses)
    step = int(np.clip(early_late, -1, 1))
    return replace(state, misses=0, bin_phase_ns=(state.bin_phase_ns + step) % PERIOD_NS)


@dataclass(frozen=True)
class Event:
    time_ns: int
    event: str
    detail: str = ""


def events_csv(events) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_ns", "event", "detail"])
    for e in events:
        writer.writerow([e.time_ns, e.event, e.detail])
    return buf.getvalue()


def overlap_fraction(offset_ns, width_ns: float = 12.0):
    """Fraction of reference power seen by an LO pulse displaced by ``offset_ns``."""
    return np.maximum(0.0, 1.0 - np.abs(offset_ns) / width_ns) ** 2


def control_z(mean_z_signal, rng: np.random.Generator, nu_e: float, noiseless: bool = False):
    """Clone-differenced Z samples in SNU for reference pulses of signal Z ``mean_z_signal``.

    Each quadrature carries twice the single-bin vacuum plus electrical noise.
    """
    amp = np.sqrt(np.asarray(mean_z_signal, dtype=np.float64))
    if noiseless:
        return amp ** 2
    sd = np.sqrt(2 * (1 + nu_e))
    x = amp + sd * rng.standard_normal(amp.shape)
    p = sd * rng.standard_normal(amp.shape)
    return x * x + p * p


@dataclass(frozen=True)
class TimingParams:
    clock_offset_ppm: float = 20.0
    reference_photons: float = 1000.0
    t: float = 10 ** -0.8
    detector: DetectorConstants = field(default_factory=DetectorConstants)
    pulse_width_ns: float = 12.0
    early_late_ns: float = 3.0
    deadband: float = 0.0
    threshold_fraction: float = 0.25
    miss_budget: int = 8
    noiseless: bool = False

    @property
    def peak_z(self) -> float:
        """Signal part of the reference Z at perfect overlap (SNU)."""
        return 2 * self.detector.eta * self.t * self.reference_photons

    @property
    def nominal_z(self) -> float:
        return self.peak_z + (0.0 if self.noiseless else 4 * (1 + self.detector.nu_e))

    @property
    def drift_ns_per_period(self) -> float:
        return self.clock_offset_ppm * 1e-6 * PERIOD_NS


@dataclass(frozen=True)
class TimingTrace:
    bin_phase_ns: np.ndarray
    locked: np.ndarray
    offset_ns: np.ndarray
    events: tuple
    true_lock_period: int | None

    @property
    def lo_times_ns(self) -> np.ndarray:
        """LO emission time of every simulated period (Bob never stops emitting)."""
        k = np.arange(self.bin_phase_ns.size)
        return k * PERIOD_NS + self.bin_phase_ns

    def max_slew_ns(self) -> int:
        if self.bin_phase_ns.size < 2:
            return 0
        d = np.diff(self.bin_phase_ns)
        d = (d + PERIOD_NS // 2) % PERIOD_NS - PERIOD_NS // 2
        return int(np.max(np.abs(d)))


def _wrap_ns(d):
    return (np.asarray(d) + PERIOD_NS / 2) % PERIOD_NS - PERIOD_NS / 2


def simulate_timing(periods: int, params: TimingParams, rng: np.random.Generator,
                    alice_phase_ns: float = 500.0, start: LockState | None = None,
                    blocked=None, chunk: int = 65536, hold_periods: int | None = None) -> TimingTrace:
    """Run the lock loop against a drifting reference for ``periods`` periods.

    While searching Bob's timing is frozen, so whole chunks are evaluated at
    once; once locked the loop runs period by period. ``blocked`` is an optional
    boolean mask of periods in which the reference never arrives. With
    ``hold_periods`` set, the run ends that many periods after the first lock
    on the true reference pulse.
    """
    state = start or LockState()
    state = replace(state, z_threshold=params.threshold_fraction * params.nominal_z,
                    miss_budget=params.miss_budget)
    nu = params.detector.nu_e
    w = params.pulse_width_ns
    drift = params.drift_ns_per_period
    blocked = np.zeros(periods, dtype=bool) if blocked is None else np.asarray(blocked, dtype=bool)

    phase = np.empty(periods, dtype=np.int64)
    locked = np.zeros(periods, dtype=bool)
    offset = np.empty(periods)
    events = []
    true_lock = None

    def arrival(k):
        return alice_phase_ns + drift * np.asarray(k)

    k = 0
    while k < periods:
        if not state.locked:
            end = min(periods, k + chunk)
            ks = np.arange(k, end)
            d = _wrap_ns(arrival(ks) - state.bin_phase_ns)
            z = control_z(params.peak_z * overlap_fraction(d, w) * ~blocked[k:end], rng, nu, params.noiseless)
            hits = np.flatnonzero(z >= state.z_threshold)
            stop = end if hits.size == 0 else k + int(hits[0])
            phase[k:stop] = state.bin_phase_ns
            offset[k:stop] = d[: stop - k]
            k = stop
            if hits.size == 0:
                continue
        # locked, or about to lock on period k
        d = float(_wrap_ns(arrival(k) - state.bin_phase_ns))
        scale = 0.0 if blocked[k] else params.peak_z
        e = params.early_late_ns
        z3 = control_z(scale * overlap_fraction(np.array([d, d - e, d + e]), w), rng, nu, params.noiseless)
        diff = z3[1] - z3[2]  # LO late sees pulse arriving later
        err = 0 if abs(diff) <= params.deadband * state.z_threshold else int(np.sign(diff))
        phase[k] = state.bin_phase_ns
        offset[k] = d
        before = state.status
        state = lock_step(state, float(z3[0]), err)
        locked[k] = state.locked
        t_ns = k * PERIOD_NS + phase[k]
        if before is LockStatus.SEARCHING and state.locked:
            events.append(Event(int(t_ns), "lock", f"bin_phase_ns={phase[k]}"))
            if true_lock is None and abs(d) < w:
                true_lock = k
                if hold_periods is not None:
                    periods = min(periods, k + 1 + hold_periods)
        elif before is LockStatus.LOCKED and not state.locked:
            events.append(Event(int(t_ns), "unlock", f"misses>{state.miss_budget}"))
        k += 1
    return TimingTrace(phase[:periods], locked[:periods], offset[:periods], tuple(events), true_lock)


@dataclass(frozen=True)
class PacketStart:
    frame_index: int
    ratio: float


def detect_packet_start(photons, factor: float = 2.0, window: int = 256,
                        packet_length: int = PACKET_PERIODS) -> list:
    """Find bright marker pulses in a stream of per-frame reference photon estimates.

    A frame triggers when it reaches ``factor`` times the mean of the previous
    ``window`` frames. The ``packet_length - 1`` frames after a trigger belong to
    that packet and are not searched.
    """
    n = np.asarray(photons, dtype=np.float64)
    if n.size <= window:
        return []
    csum = np.concatenate([[0.0], np.cumsum(n)])
    idx = np.arange(window, n.size)
    mean = (csum[idx] - csum[idx - window]) / window
    candidates = idx[(mean > 0) & (n[idx] >= factor * mean)]
    out = []
    busy_until = -1
    for i in candidates:
        if i <= busy_until:
            continue
        m = (csum[i] - csum[i - window]) / window
        out.append(PacketStart(int(i), float(n[i] / m)))
        busy_until = i + packet_length - 1
    return out


def packet_sections(start: PacketStart) -> dict:
    """Frame-index ranges for each section of a detected packet."""
    i = start.frame_index
    spans = {}
    for name, length in (("marker", 1), ("header", PATTERN_BITS), ("id", ID_BITS),
                         ("payload", PAYLOAD_SYMBOLS), ("footer", PATTERN_BITS)):
        spans[name] = range(i, i + length)
        i += length
    return spans


# fiber-squeezer axes: z, x, z, x
_AXES = ("z", "x", "z", "x")


def _rotation(axis: str, angle):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if axis == "z":
        return np.array([[np.exp(-0.5j * angle), 0], [0, np.exp(0.5j * angle)]])
    return np.array([[c, -1j * s], [-1j * s, c]])


def controller_unitary(voltages, gain: float = 1.0) -> np.ndarray:
    u = np.eye(2, dtype=np.complex128)
    for axis, v in zip(_AXES, voltages):
        u = _rotation(axis, gain * v) @ u
    return u


def alignment(fiber_angles, voltages, gain: float = 1.0) -> float:
    """Fraction of the reference (V) power landing on Bob's V-polarized LO."""
    u = controller_unitary(voltages, gain) @ polarization_unitary(fiber_angles)
    return float(abs(u[V_POL, V_POL]) ** 2)


@dataclass(frozen=True)
class PolController:
    actuators: tuple = (0.0, 0.0, 0.0, 0.0)
    step: float = 0.05
    z_mean: float = 0.0
    cycles: int = 0
    cycle_count_target: int = 64
    next_actuator: int = 0
    directions: tuple = (1, 1, 1, 1)
    gain: float = 1.0


def accept_step(z_new: float, z_prev: float, cycles_new: int, cycles_prev: int, target: int) -> bool:
    """Keep a perturbation only if mean Z did not drop and the cycle count did not move away from target."""
    return z_new >= z_prev and abs(cycles_new - target) <= abs(cycles_prev - target)


class PolLink:
    """Reference-pulse Z measurements for the polarization loop at a given fiber state."""

    def __init__(self, peak_z: float, nu_e: float, z_threshold: float, rng: np.random.Generator,
                 window: int = 64):
        self.peak_z = peak_z
        self.nu_e = nu_e
        self.z_threshold = z_threshold
        self.rng = rng
        self.window = window
        self.fiber_angles = (0.0, 0.0, 0.0)

    def measure(self, voltages, gain: float = 1.0, frames: int | None = None):
        """Mean control-path Z and the count of frames whose Z crossed the lock threshold."""
        n = frames or self.window
        frac = alignment(self.fiber_angles, voltages, gain)
        z = control_z(np.full(n, self.peak_z * frac), self.rng, self.nu_e)
        return float(z.mean()), int(np.count_nonzero(z >= self.z_threshold))


def pol_baseline(ctrl: PolController, link: PolLink) -> PolController:
    z, cycles = link.measure(ctrl.actuators, ctrl.gain)
    return replace(ctrl, z_mean=z, cycles=cycles, cycle_count_target=link.window)


def pol_step(ctrl: PolController, link: PolLink, log: list | None = None, time_ns: int = 0) -> PolController:
    """Perturb one actuator and keep the move if the acceptance predicate holds."""
    i = ctrl.next_actuator
    trial = list(ctrl.actuators)
    trial[i] += ctrl.directions[i] * ctrl.step
    z, cycles = link.measure(trial, ctrl.gain)
    nxt = (i + 1) % len(ctrl.actuators)
    if accept_step(z, ctrl.z_mean, cycles, ctrl.cycles, ctrl.cycle_count_target):
        if log is not None:
            log.append(Event(time_ns, "pol_step_accept", f"actuator={i} z={z:.4f}"))
        return replace(ctrl, actuators=tuple(trial), z_mean=z, cycles=cycles, next_actuator=nxt)
    if log is not None:
        log.append(Event(time_ns, "pol_step_reject", f"actuator={i} z={z:.4f}"))
    dirs = list(ctrl.directions)
    dirs[i] = -dirs[i]
    return replace(ctrl, directions=tuple(dirs), next_actuator=nxt)


@dataclass(frozen=True)
class PolScenario:
    hours: float = 24.0
    sample_minutes: float = 5.0
    drift_rate: float = 4e-5
    walk_std: float = 2e-4
    steps_per_sample: int = 24
    report_frames: int = 4096
    reference_photons: float = 1000.0
    t: float = 10 ** -0.8
    detector: DetectorConstants = field(default_factory=DetectorConstants)
    step: float = 0.05
    window: int = 64


@dataclass(frozen=True)
class PolTrace:
    hours: np.ndarray
    photons: np.ndarray
    corrected: bool
    events: tuple

    @property
    def nominal(self) -> float:
        return float(self.photons[0])

    def mean_ratio(self) -> float:
        return float(self.photons.mean() / self.nominal)

    def short_term_variance(self) -> float:
        """Variance of successive differences / 2; insensitive to the slow drift."""
        return float(np.var(np.diff(self.photons)) / 2)


def run_polarization(scenario: PolScenario, corrected: bool, rng: np.random.Generator) -> PolTrace:
    """Reference photon number every few minutes over a slowly drifting fiber."""
    sc = scenario
    det = sc.detector
    peak = 2 * det.eta * sc.t * sc.reference_photons
    nominal = peak + 4 * (1 + det.nu_e)
    link = PolLink(peak, det.nu_e, 0.25 * nominal, rng, sc.window)
    samples = int(round(sc.hours * 60 / sc.sample_minutes)) + 1
    dt = sc.sample_minutes * 60
    angles = np.zeros(3)
    ctrl = PolController(step=sc.step)
    events = []
    photons = np.empty(samples)
    for s in range(samples):
        if s:
            angles = angles + sc.drift_rate * dt * POL_DRIFT_AXES + rng.normal(0.0, sc.walk_std * np.sqrt(dt), 3)
        link.fiber_angles = tuple(angles)
        t_ns = int(s * dt * 1e9)
        if corrected:
            ctrl = pol_baseline(ctrl, link)
            for _ in range(sc.steps_per_sample):
                ctrl = pol_step(ctrl, link, events, t_ns)
        z, _ = link.measure(ctrl.actuators, ctrl.gain, sc.report_frames)
        # control-path Z: subtract the doubled vacuum floor, convert like photon_number
        photons[s] = (z - 4 * (1 + det.nu_e)) / (2 * det.eta * sc.t)
    hours = np.arange(samples) * sc.sample_minutes / 60
    return PolTrace(hours, photons, corrected, tuple(events))
