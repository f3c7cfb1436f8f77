"""Alice's side: Sagnac phase-amplitude modulator, packet framing, pulse carving.

Coherent amplitudes are plain complex numbers (or complex arrays) with
``|alpha|**2`` the mean photon number. Quadratures follow X = 2 Re(alpha),
P = 2 Im(alpha), so the vacuum has unit variance per quadrature.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import max_len_seq

PAYLOAD_SYMBOLS = 8192
PATTERN_BITS = 64
ID_BITS = 64

# bin order inside one 1 us period; polarization order (signal path, reference path)
SIGNAL, REFERENCE, CLONE_SIGNAL, CLONE_REFERENCE = range(4)
H_POL, V_POL = 0, 1


def _default_pattern() -> np.ndarray:
    seq, _ = max_len_seq(6, state=np.ones(6, dtype=np.int8))
    return np.concatenate([seq, [0]]).astype(np.uint8)


DEFAULT_PATTERN = _default_pattern()


class EncodingError(ValueError):
    pass


class FramingError(ValueError):
    pass


class Role(enum.IntEnum):
    MARKER = 0
    HEADER = 1
    ID = 2
    PAYLOAD = 3
    FOOTER = 4


@dataclass(frozen=True)
class SagnacDrive:
    phi_cw: float | np.ndarray
    phi_ccw: float | np.ndarray


@dataclass(frozen=True)
class EncodingScale:
    """Maps digital encoding values to SNU: ``X_A = k * digital``."""

    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")

    @classmethod
    def for_variance(cls, v_a: float, digital_variance: float) -> "EncodingScale":
        return cls(float(np.sqrt(v_a / digital_variance)))

    def modulation_variance(self, digital_variance: float) -> float:
        return self.k ** 2 * digital_variance


@dataclass(frozen=True)
class TxPulseSpec:
    signal_photons: float = 1.0
    reference_photons: float = 1000.0
    header_photons: float = 100.0
    marker_factor: float = 4.0
    modulator_input_photons: float = 400.0
    pulse_width_ns: float = 12.0
    period_ns: float = 1000.0
    signal_reference_gap_ns: float = 100.0

    def __post_init__(self):
        photons = (self.signal_photons, self.reference_photons, self.header_photons, self.modulator_input_photons)
        if min(photons) < 0:
            raise ValueError("photon numbers must be non-negative")
        if not self.signal_reference_gap_ns < self.period_ns:
            raise ValueError("signal/reference gap must be shorter than the period")
        if self.marker_factor < 2:
            raise ValueError("packet marker must be at least twice the reference brightness")


def wrap_angle(a):
    """Normalize to [-pi, pi); values already in range are returned untouched."""
    a = np.asarray(a, dtype=np.float64)
    inside = (a >= -np.pi) & (a < np.pi)
    return np.where(inside, a, (a + np.pi) % (2 * np.pi) - np.pi)


def sagnac_output(alpha_in, drive: SagnacDrive):
    half_sum = (np.asarray(drive.phi_cw) + drive.phi_ccw) / 2
    half_diff = (np.asarray(drive.phi_cw) - drive.phi_ccw) / 2
    return np.exp(1j * half_sum) * np.sin(half_diff) * alpha_in


def drive_for_target(x_a, p_a, alpha_in) -> SagnacDrive:
    """Invert the modulator: drive phases that put ``(x_a, p_a)`` at the output."""
    x_a = np.asarray(x_a, dtype=np.float64)
    p_a = np.asarray(p_a, dtype=np.float64)
    target = (x_a + 1j * p_a) / 2
    reach = np.abs(alpha_in)
    if reach == 0:
        raise EncodingError("modulator input is dark")
    ratio = np.abs(target) / reach
    if np.any(ratio > 1 + 1e-12):
        raise EncodingError(
            f"requested amplitude {np.max(np.abs(target)):.4g} exceeds modulator input {reach:.4g}"
        )
    diff = 2 * np.arcsin(np.minimum(ratio, 1.0))
    mean = np.angle(target) - np.angle(alpha_in)
    dark = target == 0
    phi_cw = np.where(dark, 0.0, wrap_angle(mean + diff / 2))
    phi_ccw = np.where(dark, 0.0, wrap_angle(mean - diff / 2))
    if phi_cw.ndim == 0:
        return SagnacDrive(float(phi_cw), float(phi_ccw))
    return SagnacDrive(phi_cw, phi_ccw)


def _bits_of(value: int, width: int) -> np.ndarray:
    if not 0 <= value < (1 << width):
        raise FramingError(f"packet id {value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def binary_phase_symbols(bits, photons: float) -> np.ndarray:
    """Bit 0 -> phase 0, bit 1 -> phase pi, as X quadratures at the given photon number."""
    amplitude = 2 * np.sqrt(photons)
    return np.where(np.asarray(bits) == 0, amplitude, -amplitude).astype(np.float64)


@dataclass(frozen=True)
class Packet:
    """Per-period transmit plan. One row per 1 us period."""

    packet_id: int
    roles: np.ndarray
    x_a: np.ndarray
    p_a: np.ndarray
    reference_photons: np.ndarray
    pattern: np.ndarray = field(repr=False)

    def __len__(self):
        return self.roles.size

    def section(self, role: Role) -> np.ndarray:
        return np.flatnonzero(self.roles == role)

    @property
    def signal_photons(self) -> np.ndarray:
        return (self.x_a ** 2 + self.p_a ** 2) / 4

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_index", "role", "x_a", "p_a", "photons"])
        names = {r.value: r.name.lower() for r in Role}
        photons = np.where(self.roles == Role.MARKER, self.reference_photons, self.signal_photons)
        for i in range(len(self)):
            writer.writerow([i, names[int(self.roles[i])], repr(float(self.x_a[i])),
                             repr(float(self.p_a[i])), repr(float(photons[i]))])
        return buf.getvalue()


def build_packet(x_payload, p_payload, packet_id: int, spec: TxPulseSpec = TxPulseSpec(),
                 pattern=DEFAULT_PATTERN) -> Packet:
    """Assemble marker, header, ID, payload and footer.

    The payload quadratures are Alice's SNU values ``X_A = k * digital``.
    """
    x_payload = np.asarray(x_payload, dtype=np.float64)
    p_payload = np.asarray(p_payload, dtype=np.float64)
    if x_payload.shape != (PAYLOAD_SYMBOLS,) or p_payload.shape != (PAYLOAD_SYMBOLS,):
        raise FramingError(f"payload must hold exactly {PAYLOAD_SYMBOLS} symbols per quadrature")
    pattern = np.asarray(pattern, dtype=np.uint8)
    if pattern.shape != (PATTERN_BITS,):
        raise FramingError(f"header pattern must be {PATTERN_BITS} bits")

    framing = binary_phase_symbols(pattern, spec.header_photons)
    id_syms = binary_phase_symbols(_bits_of(packet_id, ID_BITS), spec.header_photons)
    x_a = np.concatenate([[0.0], framing, id_syms, x_payload, framing])
    p_a = np.concatenate([np.zeros(1 + PATTERN_BITS + ID_BITS), p_payload, np.zeros(PATTERN_BITS)])
    roles = np.concatenate([
        [Role.MARKER],
        np.full(PATTERN_BITS, Role.HEADER),
        np.full(ID_BITS, Role.ID),
        np.full(PAYLOAD_SYMBOLS, Role.PAYLOAD),
        np.full(PATTERN_BITS, Role.FOOTER),
    ]).astype(np.uint8)
    ref = np.full(roles.size, spec.reference_photons)
    ref[0] = spec.marker_factor * spec.reference_photons
    return Packet(packet_id, roles, x_a, p_a, ref, pattern.copy())


def modulate(packet: Packet, spec: TxPulseSpec = TxPulseSpec()) -> np.ndarray:
    """Signal-bin amplitudes produced by driving the Sagnac modulator."""
    alpha_in = np.sqrt(spec.modulator_input_photons) + 0j
    drive = drive_for_target(packet.x_a, packet.p_a, alpha_in)
    return sagnac_output(alpha_in, drive)


def _leak(db: float) -> float:
    return 0.0 if np.isinf(db) else float(np.sqrt(10 ** (-db / 10)))


def carve_pulses(packet: Packet, extinction_db: float, spec: TxPulseSpec = TxPulseSpec(),
                 signal_amplitudes=None, sagnac_null_db: float = np.inf) -> np.ndarray:
    """Complex amplitudes per period, bin and polarization: shape (periods, 4, 2).

    The intensity modulator leaks ``10**(-extinction_db/10)`` of each path's
    peak power into the bins where that path is nominally off. On the signal
    path that light then meets the undriven Sagnac modulator, which sits at
    its null and attenuates it by a further ``sagnac_null_db``.
    """
    if not extinction_db > 0:
        raise ValueError("extinction ratio must be positive (dB)")
    if signal_amplitudes is None:
        signal_amplitudes = modulate(packet, spec)
    leak = _leak(extinction_db)
    ref_amp = np.sqrt(packet.reference_photons) + 0j
    sig_leak = leak * _leak(sagnac_null_db) * np.sqrt(spec.modulator_input_photons)

    out = np.empty((len(packet), 4, 2), dtype=np.complex128)
    out[:, :, H_POL] = sig_leak
    out[:, :, V_POL] = leak * ref_amp[:, None]
    out[:, SIGNAL, H_POL] = signal_amplitudes
    out[:, REFERENCE, V_POL] = ref_amp
    return out
