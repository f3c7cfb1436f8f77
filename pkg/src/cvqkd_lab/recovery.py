"""Two-stage carrier recovery.

Stage one removes the fast carrier phase using the reference pulse of the same
period. What remains is a per-packet rotation ``delta`` between the signal and
reference paths, found by correlating the header and footer against the known
binary-phase pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transmitter import Role
from .units import QuadSample, Units

DEFAULT_THRESHOLD = 0.5


class RecoveryError(ValueError):
    pass


@dataclass(frozen=True)
class RecoveredSymbol:
    x_s_prime: np.ndarray
    p_s_prime: np.ndarray
    phi_used: np.ndarray
    quality: np.ndarray

    def as_complex(self) -> np.ndarray:
        return self.x_s_prime + 1j * self.p_s_prime


@dataclass(frozen=True)
class DeltaEstimate:
    delta: float
    corr_header: float
    corr_footer: float
    delta_header: float
    delta_footer: float
    accepted: bool


def extract_phi(ref: QuadSample):
    """Carrier phase of the reference pulse, ``-arctan(P_R / X_R)`` in four quadrants.

    A reference sitting exactly at the origin carries no phase and yields NaN,
    which marks that symbol pair invalid.
    """
    x = np.asarray(ref.x, dtype=np.float64)
    p = np.asarray(ref.p, dtype=np.float64)
    phi = np.arctan2(-p, x)
    return np.where((x == 0) & (p == 0), np.nan, phi)


def rotate_to_bob_basis(signal: QuadSample, phi) -> QuadSample:
    x = np.asarray(signal.x, dtype=np.float64)
    p = np.asarray(signal.p, dtype=np.float64)
    c, s = np.cos(phi), np.sin(phi)
    return QuadSample(x * c - p * s, x * s + p * c, signal.units)


def _signs(pattern) -> np.ndarray:
    return np.where(np.asarray(pattern) == 0, 1.0, -1.0)


def _as_complex(symbols) -> np.ndarray:
    if isinstance(symbols, RecoveredSymbol):
        return symbols.as_complex()
    if isinstance(symbols, QuadSample):
        return symbols.as_complex()
    return np.asarray(symbols, dtype=np.complex128)


def _correlation(y, s, rotation):
    """Signed correlation of rotated symbols with the +-1 pattern; 1.0 when noiseless."""
    power = np.sum(np.abs(y) ** 2)
    if power == 0:
        return 0.0
    return float(np.real(rotation * np.sum(s * y)) / np.sqrt(y.size * power))


def determine_delta(header_syms, footer_syms, pattern, threshold: float = DEFAULT_THRESHOLD) -> DeltaEstimate:
    """Estimate the residual signal/reference rotation from framing symbols.

    The joint estimate is ``-arg(sum s_k y_k)`` over header and footer with
    pattern signs ``s_k``. Each section's correlation is measured against the
    joint rotation; the packet is rejected if either falls below ``threshold``.
    """
    h = _as_complex(header_syms)
    f = _as_complex(footer_syms)
    s = _signs(pattern)
    if h.shape != s.shape or f.shape != s.shape:
        raise RecoveryError("header/footer length must match the pattern")
    sum_h = np.sum(s * h)
    sum_f = np.sum(s * f)
    delta = float(-np.angle(sum_h + sum_f))
    rot = np.exp(1j * delta)
    corr_h = _correlation(h, s, rot)
    corr_f = _correlation(f, s, rot)
    return DeltaEstimate(
        delta=delta,
        corr_header=corr_h,
        corr_footer=corr_f,
        delta_header=float(-np.angle(sum_h)),
        delta_footer=float(-np.angle(sum_f)),
        accepted=bool(corr_h >= threshold and corr_f >= threshold),
    )


@dataclass(frozen=True)
class PacketRecovery:
    symbols: RecoveredSymbol
    delta: DeltaEstimate
    valid: np.ndarray

    @property
    def accepted(self) -> bool:
        return self.delta.accepted


def recover_packet(signal: QuadSample, reference: QuadSample, roles, pattern,
                   threshold: float = DEFAULT_THRESHOLD) -> PacketRecovery:
    """Run both recovery stages over one packet's worth of SNU samples."""
    if signal.units is not Units.SHOT_NOISE_UNITS or reference.units is not Units.SHOT_NOISE_UNITS:
        raise RecoveryError("recovery runs on shot-noise-unit samples")
    roles = np.asarray(roles)
    phi = extract_phi(reference)
    valid = np.isfinite(phi)
    first = rotate_to_bob_basis(signal, np.where(valid, phi, 0.0))
    y = first.as_complex()

    header = roles == Role.HEADER
    footer = roles == Role.FOOTER
    if not (valid[header].all() and valid[footer].all()):
        est = DeltaEstimate(float("nan"), 0.0, 0.0, float("nan"), float("nan"), False)
        return PacketRecovery(RecoveredSymbol(first.x, first.p, phi, np.zeros_like(phi)), est, valid)

    est = determine_delta(y[header], y[footer], pattern, threshold)
    final = y * np.exp(1j * est.delta)
    quality = np.asarray(reference.x) ** 2 + np.asarray(reference.p) ** 2
    symbols = RecoveredSymbol(final.real, final.imag, phi, quality)
    return PacketRecovery(symbols, est, valid)
