"""Quadrature samples, shot-noise units and Z / photon-number arithmetic.

All protocol math downstream of the receiver runs in shot-noise units (SNU),
where the vacuum variance of one quadrature is 1. Raw ADC counts only exist at
the receiver boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class CalibrationError(ValueError):
    """Raised when shot-noise calibration data cannot define a unit system."""


class Units(enum.Enum):
    ADC_COUNTS = "adc_counts"
    SHOT_NOISE_UNITS = "snu"


@dataclass(frozen=True)
class QuadSample:
    """One heterodyne measurement (or a batch of them, when x/p are arrays)."""

    x: float | np.ndarray
    p: float | np.ndarray
    units: Units = Units.SHOT_NOISE_UNITS

    def __post_init__(self):
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.p))):
            raise ValueError("quadrature values must be finite")

    @property
    def z(self):
        return z_value(self)

    def as_complex(self):
        return np.asarray(self.x) + 1j * np.asarray(self.p)


@dataclass(frozen=True)
class ZValue:
    z: float
    z_shot: float
    z_elec: float

    def photons(self, eta: float) -> float:
        return photon_number(self.z, self.z_shot, self.z_elec, eta)


@dataclass(frozen=True)
class DetectorConstants:
    """Receiver efficiencies and electrical noise (SNU at nominal LO power)."""

    eta_det: float = 0.5
    t_bob: float = 0.84
    nu_e: float = 0.175

    def __post_init__(self):
        if not 0 < self.eta_det <= 1 or not 0 < self.t_bob <= 1:
            raise ValueError("eta_det and t_bob must lie in (0, 1]")
        if self.nu_e < 0:
            raise ValueError("nu_e must be non-negative")

    @property
    def eta(self) -> float:
        return self.eta_det * self.t_bob


def _check_calibration(shot_variance, elec_variance):
    if not shot_variance > 0:
        raise CalibrationError(f"shot-noise variance must be positive, got {shot_variance!r}")
    if elec_variance < 0:
        raise CalibrationError(f"electrical variance must be non-negative, got {elec_variance!r}")


def to_snu(sample: QuadSample, shot_variance: float, elec_variance: float = 0.0) -> QuadSample:
    """Convert ADC counts to SNU.

    ``shot_variance`` is the per-quadrature shot-noise variance in counts², i.e.
    the measured vacuum variance with the electrical contribution removed.
    """
    if sample.units is not Units.ADC_COUNTS:
        raise ValueError("sample is already in shot-noise units")
    _check_calibration(shot_variance, elec_variance)
    scale = np.sqrt(shot_variance)
    return QuadSample(np.asarray(sample.x) / scale, np.asarray(sample.p) / scale, Units.SHOT_NOISE_UNITS)


def from_snu(sample: QuadSample, shot_variance: float, elec_variance: float = 0.0) -> QuadSample:
    if sample.units is not Units.SHOT_NOISE_UNITS:
        raise ValueError("sample is not in shot-noise units")
    _check_calibration(shot_variance, elec_variance)
    scale = np.sqrt(shot_variance)
    return QuadSample(np.asarray(sample.x) * scale, np.asarray(sample.p) * scale, Units.ADC_COUNTS)


def z_value(sample: QuadSample):
    return np.asarray(sample.x) ** 2 + np.asarray(sample.p) ** 2


def photon_number(z_mean, z_shot, z_elec, eta):
    """Arriving photon number from a mean Z value.

    Detected photons are ``(Z - Z_shot - Z_elec) / Z_shot``; the arriving
    number is twice that divided by the detector efficiency. Under the
    X = 2 Re(alpha) quadrature convention used throughout this package the
    result is twice ``|alpha|**2`` of the incoming pulse (see README).
    """
    if np.any(np.asarray(z_shot) <= 0):
        raise CalibrationError("z_shot must be positive")
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    n_det = (np.asarray(z_mean) - z_shot - z_elec) / z_shot
    return 2.0 * n_det / eta
