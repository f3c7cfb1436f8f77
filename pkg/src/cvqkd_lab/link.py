"""End-to-end packet simulation: Alice -> fiber -> Bob's front-end -> recovery -> estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .estimation import EstimationResult, estimate_packet
from .receiver import BiasModel, LoSchedule, PulseFrame, capture_frames, subtract_dark_mean
from .recovery import DEFAULT_THRESHOLD, PacketRecovery, recover_packet
from .rng import SeededPseudorandom, gaussian_pairs
from .sync import detect_packet_start
from .transmitter import (
    CLONE_SIGNAL,
    DEFAULT_PATTERN,
    H_POL,
    PATTERN_BITS,
    REFERENCE,
    SIGNAL,
    V_POL,
    EncodingScale,
    Role,
    TxPulseSpec,
    build_packet,
    carve_pulses,
    modulate,
)
from .units import CalibrationError, DetectorConstants, QuadSample, Units

# LO polarization used to measure each bin
BIN_POLARIZATION = np.array([H_POL, V_POL, H_POL, V_POL])


@dataclass(frozen=True)
class LinkConfig:
    v_a: float = 25.0
    digital_sigma: float = 100.0
    extinction_db: float = 30.0
    counts_per_snu: float = 64.0
    bias_x: float = 7.0
    bias_p: float = -3.0
    bias_ramp: float = 0.0
    corr_threshold: float = DEFAULT_THRESHOLD
    residual_phase_budget: bool = True
    trusted_calibration: bool = False
    vacuum_noise: bool = True
    dark_frames: int = 100_000
    packet_gap_s: float = 0.0
    detect_marker: bool = True
    idle_frames: int = 256
    tx: TxPulseSpec = field(default_factory=TxPulseSpec)
    channel: ch.ChannelParams = field(default_factory=ch.ChannelParams)
    detector: DetectorConstants = field(default_factory=DetectorConstants)
    lo: LoSchedule = field(default_factory=LoSchedule)
    pattern: tuple = tuple(int(b) for b in DEFAULT_PATTERN)

    @property
    def t(self) -> float:
        return self.channel.t

    @property
    def eta(self) -> float:
        return self.detector.eta

    @property
    def digital_variance(self) -> float:
        return self.digital_sigma ** 2

    @property
    def scale(self) -> EncodingScale:
        return EncodingScale.for_variance(self.v_a, self.digital_variance)

    @property
    def bias(self) -> BiasModel:
        return BiasModel.linear(self.bias_x, self.bias_p, self.bias_ramp, self.bias_ramp, self.lo.lo_nominal)

    def noise_snu(self) -> float:
        """Per-quadrature vacuum plus electrical noise in SNU at the configured LO power."""
        return 1.0 + self.detector.nu_e * self.lo.lo_nominal / self.lo.lo_power

    def reference_phase_variance(self, overlap: float = 1.0) -> float:
        """Small-noise variance of the carrier phase read from one reference pulse."""
        signal = 2 * self.eta * self.t * self.tx.reference_photons * overlap
        return self.noise_snu() / signal

    def delta_phase_variance(self, jitter: float | None = None) -> float:
        """Variance of the per-packet delta estimate from header and footer."""
        if jitter is None:
            jitter = self.injected_jitter_variance()
        signal = 2 * self.eta * self.t * self.tx.header_photons
        per_symbol = self.noise_snu() / signal + jitter + self.reference_phase_variance()
        return per_symbol / (2 * PATTERN_BITS)

    def injected_jitter_variance(self) -> float:
        """Signal/reference jitter so that the total residual phase variance matches the target.

        residual = jitter + reference noise + delta error, where the delta error
        itself averages jitter and reference noise over the framing symbols.
        """
        target = self.channel.phase_variance
        if not self.residual_phase_budget:
            return target
        n = 2 * PATTERN_BITS
        header = self.noise_snu() / (2 * self.eta * self.t * self.tx.header_photons)
        v_ref = self.reference_phase_variance()
        jitter = (target - v_ref * (1 + 1 / n) - header / n) / (1 + 1 / n)
        return max(jitter, 0.0)


@dataclass(frozen=True)
class PacketOutcome:
    packet_id: int
    digital_x: np.ndarray
    digital_p: np.ndarray
    x_a: np.ndarray
    p_a: np.ndarray
    recovery: PacketRecovery
    payload: np.ndarray
    payload_valid: np.ndarray
    true_delta: float
    shot_variance: float
    nu_e_hat: float
    frame: PulseFrame
    marker_detected: bool = True

    @property
    def accepted(self) -> bool:
        return self.marker_detected and self.recovery.accepted

    def estimate(self, config: LinkConfig) -> EstimationResult:
        ok = self.payload_valid
        return estimate_packet(self.digital_x[ok], self.digital_p[ok], self.payload.real[ok],
                               self.payload.imag[ok], config.digital_variance, config.t, config.eta,
                               self.nu_e_hat)


class Link:
    """One simulated link with its own entropy source, noise stream and channel state."""

    def __init__(self, config: LinkConfig, seed: int | np.random.SeedSequence):
        self.config = config
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        qrng_seed, noise_seed = ss.spawn(2)
        self.qrng = SeededPseudorandom(qrng_seed)
        self.noise = np.random.Generator(np.random.PCG64(noise_seed))
        self.state = ch.ChannelState(
            carrier_phase=float(self.noise.uniform(-np.pi, np.pi)),
            delta=float(self.noise.uniform(-np.pi, np.pi)),
        )
        self.z_elec = self._calibrate_dark() if not config.trusted_calibration else None
        self._next_id = 0

    def _calibrate_dark(self) -> float:
        cfg = self.config
        dark = replace(cfg.lo, lo_power=0.0)
        frames = capture_frames(None, dark, cfg.detector, cfg.bias, np.zeros(cfg.dark_frames),
                                self.noise, cfg.counts_per_snu)
        x, p = frames.x[:, CLONE_SIGNAL], frames.p[:, CLONE_SIGNAL]
        return float(np.var(x, ddof=1) + np.var(p, ddof=1))

    def _measure(self, incoming, period_start):
        cfg = self.config
        if cfg.vacuum_noise:
            return capture_frames(incoming, cfg.lo, cfg.detector, cfg.bias, period_start,
                                  self.noise, cfg.counts_per_snu)
        times = cfg.lo.bin_times(period_start)
        a, b = cfg.bias(times, cfg.lo.lo_power)
        sig = np.sqrt(cfg.eta / 2) * 2 * incoming * cfg.lo.gain * cfg.counts_per_snu
        return PulseFrame(sig.real + a, sig.imag + b, cfg.lo.lo_power)

    def _shot_variance(self, frame: PulseFrame) -> float:
        cfg = self.config
        if cfg.trusted_calibration:
            return (cfg.counts_per_snu * cfg.lo.gain) ** 2
        x, p = frame.x[:, CLONE_SIGNAL], frame.p[:, CLONE_SIGNAL]
        z_shot = float(np.var(x, ddof=1) + np.var(p, ddof=1)) - self.z_elec
        if z_shot <= 0:
            raise CalibrationError("clone-bin variance does not exceed electrical noise")
        return z_shot / 2

    def _find_marker(self, idle_amp, arriving_ref, t0) -> bool:
        """Measure idle periods then the packet's first period; the marker must trigger exactly there."""
        cfg = self.config
        m = cfg.idle_frames
        amps = np.zeros((m + 1, 4), dtype=np.complex128)
        amps[:m, REFERENCE] = idle_amp
        amps[m, REFERENCE] = arriving_ref
        starts = t0 + (np.arange(m + 1) - m) * ch.PERIOD_S
        # stored single-bin values: the clone difference would double the noise
        data = subtract_dark_mean(self._measure(amps, starts))
        z = data.x[:, REFERENCE] ** 2 + data.p[:, REFERENCE] ** 2
        hits = detect_packet_start(z, window=m)
        return any(h.frame_index == m for h in hits)

    def run_packet(self) -> PacketOutcome:
        cfg = self.config
        packet_id = self._next_id
        self._next_id += 1

        digital = gaussian_pairs(self.qrng, 8192, cfg.digital_sigma)
        k = cfg.scale.k
        x_a, p_a = k * digital.x, k * digital.p
        packet = build_packet(x_a, p_a, packet_id, cfg.tx, np.array(cfg.pattern))
        n = len(packet)

        signal_amp = modulate(packet, cfg.tx)
        if cfg.channel.excess_noise:
            extra = self.noise.normal(0.0, math.sqrt(cfg.channel.excess_noise) / 2, size=(2, n))
            signal_amp = signal_amp + np.where(packet.roles == Role.PAYLOAD, extra[0] + 1j * extra[1], 0)
        amps = carve_pulses(packet, cfg.extinction_db, cfg.tx, signal_amp)

        phi = ch.carrier_walk(n, cfg.channel, self.state.carrier_phase, self.noise)
        jitter_var = cfg.injected_jitter_variance()
        jitter = self.noise.normal(0.0, math.sqrt(jitter_var), size=n) if jitter_var > 0 else 0.0
        true_delta = self.state.delta
        rotated = ch.apply_phases(amps, phi[:, None], true_delta, np.asarray(jitter)[..., None] if np.ndim(jitter) else 0.0)
        u = ch.polarization_unitary(self.state.pol_angles)
        arriving = math.sqrt(cfg.t) * np.einsum("ij,...j->...i", u, rotated)
        incoming = np.take_along_axis(arriving, np.broadcast_to(BIN_POLARIZATION[None, :, None], (n, 4, 1)), -1)[..., 0]

        period_start = self.state.time_s + np.arange(n) * ch.PERIOD_S
        raw = self._measure(incoming, period_start)
        marker = True
        if cfg.detect_marker:
            idle = math.sqrt(cfg.t * cfg.tx.reference_photons) * abs(u[V_POL, V_POL])
            marker = self._find_marker(idle, incoming[0, REFERENCE], period_start[0])
        shot_var = self._shot_variance(raw)
        nu_e_hat = cfg.detector.nu_e if cfg.trusted_calibration else self.z_elec / (2 * shot_var)
        snu = 1 / math.sqrt(shot_var)
        keyed = subtract_dark_mean(raw)
        sig = QuadSample(keyed.x[:, SIGNAL] * snu, keyed.p[:, SIGNAL] * snu, Units.SHOT_NOISE_UNITS)
        ref = QuadSample(keyed.x[:, REFERENCE] * snu, keyed.p[:, REFERENCE] * snu, Units.SHOT_NOISE_UNITS)
        rec = recover_packet(sig, ref, packet.roles, packet.pattern, cfg.corr_threshold)

        payload_idx = packet.section(Role.PAYLOAD)
        payload = rec.symbols.as_complex()[payload_idx]
        valid = rec.valid[payload_idx] & np.isfinite(payload)

        duration = n * ch.PERIOD_S + cfg.packet_gap_s
        self.state = replace(ch.advance(self.state, duration, replace(cfg.channel, carrier_walk_std=0.0), self.noise),
                             carrier_phase=float(phi[-1]))
        return PacketOutcome(packet_id, digital.x, digital.p, x_a, p_a, rec, payload, valid,
                             true_delta, shot_var, nu_e_hat, raw, marker)

    def run(self, packets: int) -> list:
        return [self.run_packet() for _ in range(packets)]
