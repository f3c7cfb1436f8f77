"""Bob's pulsed heterodyne front-end and clone-LO bias handling.

Every 1 us period has four LO bins: signal (0 ns), reference (100 ns) and two
clones 500 ns away. Clone bins never overlap Alice's light, so they carry only
the detector bias and vacuum noise. The clone used to correct a parent bin is
the one 500 ns *earlier*, i.e. the previous period's clone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .transmitter import CLONE_REFERENCE, CLONE_SIGNAL, REFERENCE, SIGNAL
from .units import CalibrationError, DetectorConstants, QuadSample, Units

BIN_NAMES = ("signal", "reference", "clone_signal", "clone_reference")
CLONE_OFFSET_NS = 500.0


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class LoSchedule:
    period_ns: float = 1000.0
    bin_offsets_ns: tuple = (0.0, 100.0, 500.0, 600.0)
    lo_power: float = 1.0
    lo_nominal: float = 1.0
    slew_limit_ns: float = 1.0

    def __post_init__(self):
        if self.lo_power < 0:
            raise ValueError("LO power must be non-negative")
        offs = self.bin_offsets_ns
        if offs[CLONE_SIGNAL] - offs[SIGNAL] != CLONE_OFFSET_NS or offs[CLONE_REFERENCE] - offs[REFERENCE] != CLONE_OFFSET_NS:
            raise ValueError("clone bins must sit 500 ns after their parents")

    @property
    def gain(self) -> float:
        """Heterodyne amplitude gain relative to nominal LO power."""
        return float(np.sqrt(self.lo_power / self.lo_nominal))

    def bin_times(self, period_start_s):
        """Sample time of each bin; clones are taken 500 ns *before* their parent."""
        t0 = np.asarray(period_start_s, dtype=np.float64)[..., None]
        offs = np.array(self.bin_offsets_ns) * 1e-9
        offs[CLONE_SIGNAL] -= self.period_ns * 1e-9
        offs[CLONE_REFERENCE] -= self.period_ns * 1e-9
        return t0 + offs


@dataclass(frozen=True)
class BiasModel:
    """Detector offsets in ADC counts as functions of (time [s], LO power)."""

    alpha_fn: Callable
    beta_fn: Callable

    @classmethod
    def linear(cls, offset_x=0.0, offset_p=0.0, ramp_x=0.0, ramp_p=0.0, lo_nominal=1.0) -> "BiasModel":
        # offsets scale with LO power (imperfect common-mode rejection)
        return cls(
            lambda t, lo: (offset_x + ramp_x * np.asarray(t)) * (lo / lo_nominal),
            lambda t, lo: (offset_p + ramp_p * np.asarray(t)) * (lo / lo_nominal),
        )

    @classmethod
    def zero(cls) -> "BiasModel":
        return cls.linear()

    def __call__(self, t, lo_power):
        return self.alpha_fn(t, lo_power), self.beta_fn(t, lo_power)


def measure_bin(incoming, lo_power: float, detector: DetectorConstants, bias: BiasModel, t,
                noise: np.random.Generator, counts_per_snu: float = 64.0,
                lo_nominal: float = 1.0) -> QuadSample:
    """Heterodyne one bin (or an array of bins) and return ADC counts.

    ``incoming`` is the complex amplitude already projected on the LO
    polarization; ``None`` or 0 means vacuum.
    """
    incoming = np.zeros(np.shape(t), dtype=np.complex128) if incoming is None else np.asarray(incoming, dtype=np.complex128)
    shape = np.broadcast(incoming, np.asarray(t)).shape
    g = np.sqrt(lo_power / lo_nominal)
    signal = np.sqrt(detector.eta / 2) * 2 * incoming
    shot = noise.standard_normal((2,) + shape)
    elec = noise.standard_normal((2,) + shape) * np.sqrt(detector.nu_e)
    a, b = bias(t, lo_power)
    x = counts_per_snu * (g * (signal.real + shot[0]) + elec[0]) + a
    p = counts_per_snu * (g * (signal.imag + shot[1]) + elec[1]) + b
    return QuadSample(x, p, Units.ADC_COUNTS)


@dataclass(frozen=True)
class PulseFrame:
    """A batch of periods: ``x``/``p`` have shape (frames, 4) in bin order."""

    x: np.ndarray
    p: np.ndarray
    lo_power: float = 1.0
    units: Units = Units.ADC_COUNTS
    bias_corrected: bool = False
    control_path_only: bool = False

    def __post_init__(self):
        if np.shape(self.x) != np.shape(self.p):
            raise FrameError("x and p must have the same shape")

    @property
    def n_frames(self) -> int:
        return int(np.shape(self.x)[0])

    def bin(self, index: int) -> QuadSample:
        return QuadSample(self.x[:, index], self.p[:, index], self.units)

    def z(self) -> np.ndarray:
        return self.x ** 2 + self.p ** 2

    def to_csv(self) -> str:
        """Frame capture: one row per (frame, bin)."""
        corrected = bias_correct(self) if not self.bias_corrected else self
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame_index", "bin", "x_adc", "p_adc", "corrected_x", "corrected_p", "z"])
        for i in range(self.n_frames):
            for b, name in enumerate(BIN_NAMES):
                if b in (SIGNAL, REFERENCE):
                    cx, cp = float(corrected.x[i, b]), float(corrected.p[i, b])
                    writer.writerow([i, name, repr(float(self.x[i, b])), repr(float(self.p[i, b])),
                                     repr(cx), repr(cp), repr(cx * cx + cp * cp)])
                else:
                    x, p = float(self.x[i, b]), float(self.p[i, b])
                    writer.writerow([i, name, repr(x), repr(p), "", "", repr(x * x + p * p)])
        return buf.getvalue()


def bias_correct(frame: PulseFrame) -> PulseFrame:
    """Subtract each parent bin's clone (taken 500 ns earlier).

    The difference doubles the vacuum noise, so the result is flagged for the
    control path (triggering, polarization) only.
    """
    x = np.asarray(frame.x, dtype=np.float64)
    p = np.asarray(frame.p, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise FrameError("frame must carry all four bins")
    if not (np.all(np.isfinite(x[:, 2:])) and np.all(np.isfinite(p[:, 2:]))):
        raise FrameError("clone bin missing")
    x = x.copy()
    p = p.copy()
    x[:, SIGNAL] -= x[:, CLONE_SIGNAL]
    x[:, REFERENCE] -= x[:, CLONE_REFERENCE]
    p[:, SIGNAL] -= p[:, CLONE_SIGNAL]
    p[:, REFERENCE] -= p[:, CLONE_REFERENCE]
    return replace(frame, x=x, p=p, bias_corrected=True, control_path_only=True)


def subtract_dark_mean(frame: PulseFrame) -> PulseFrame:
    """Key-path bias removal: subtract the batch mean of each clone bin from its parent.

    Unlike :func:`bias_correct` this adds only ``1/n_frames`` of extra noise.
    """
    x = np.array(frame.x, dtype=np.float64, copy=True)
    p = np.array(frame.p, dtype=np.float64, copy=True)
    for parent, clone in ((SIGNAL, CLONE_SIGNAL), (REFERENCE, CLONE_REFERENCE)):
        x[:, parent] -= x[:, clone].mean()
        p[:, parent] -= p[:, clone].mean()
    return replace(frame, x=x, p=p, bias_corrected=True, control_path_only=False)


class ShotNoiseCalibration(NamedTuple):
    z_shot: float
    z_elec: float

    @property
    def shot_variance(self) -> float:
        """Per-quadrature shot-noise variance (counts²)."""
        return self.z_shot / 2

    @property
    def elec_variance(self) -> float:
        return self.z_elec / 2

    def nu_e(self) -> float:
        """Electrical noise in SNU."""
        if self.z_shot <= 0:
            raise CalibrationError("no shot noise measured")
        return self.z_elec / self.z_shot


def _vacuum_z(frames: PulseFrame) -> float:
    x = frames.x[:, CLONE_SIGNAL]
    p = frames.p[:, CLONE_SIGNAL]
    return float(np.var(x, ddof=1) + np.var(p, ddof=1))


def shot_noise_calibration(frames: PulseFrame, dark_frames: PulseFrame | None = None,
                           min_frames: int = 1000) -> ShotNoiseCalibration:
    """Shot and electrical Z contributions measured in the clone-signal bin.

    ``dark_frames`` are taken with the LO off and give the electrical noise;
    the shot-noise value is the measured vacuum variance minus that.
    """
    if frames.n_frames < min_frames:
        raise CalibrationError(f"need at least {min_frames} frames, got {frames.n_frames}")
    total = _vacuum_z(frames)
    if frames.lo_power == 0:
        return ShotNoiseCalibration(0.0, total)
    if dark_frames is None:
        raise CalibrationError("electrical-noise (LO off) frames are required")
    if dark_frames.n_frames < min_frames:
        raise CalibrationError(f"need at least {min_frames} dark frames, got {dark_frames.n_frames}")
    elec = _vacuum_z(dark_frames)
    return ShotNoiseCalibration(total - elec, elec)


def capture_frames(incoming, lo: LoSchedule, detector: DetectorConstants, bias: BiasModel,
                   period_start_s, noise: np.random.Generator, counts_per_snu: float = 64.0) -> PulseFrame:
    """Measure all four bins for a batch of periods.

    ``incoming`` has shape (frames, 4) and holds each bin's amplitude already
    projected on that bin's LO polarization (``None`` for vacuum everywhere).
    """
    times = lo.bin_times(period_start_s)
    if incoming is None:
        incoming = np.zeros(times.shape, dtype=np.complex128)
    sample = measure_bin(incoming, lo.lo_power, detector, bias, times, noise, counts_per_snu, lo.lo_nominal)
    return PulseFrame(np.asarray(sample.x), np.asarray(sample.p), lo.lo_power)


def fit_line(x: Sequence[float], y: Sequence[float]):
    """Least-squares line: returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(slope), float(intercept), float(1 - np.sum(resid ** 2) / ss_tot)
