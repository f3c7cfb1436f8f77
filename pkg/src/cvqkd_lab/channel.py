"""Fiber link: loss, carrier phase, signal/reference offset, polarization drift, clock skew."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .transmitter import H_POL, V_POL, wrap_angle

PERIOD_S = 1e-6
# relative weights of the deterministic drift on the three birefringence angles
POL_DRIFT_AXES = np.array([1.0, -0.6, 0.8])


def transmission(loss_db: float) -> float:
    return 10 ** (-loss_db / 10)


@dataclass(frozen=True)
class ChannelParams:
    distance_km: float = 10.4
    atten_db_per_km: float = 0.2
    fixed_loss_db: float = 5.92
    phase_variance: float = 0.034
    carrier_walk_std: float = 0.05
    delta_drift_rate: float = 0.1
    delta_walk_std: float = 0.01
    pol_drift_rate: float = 0.0
    pol_walk_std: float = 0.0
    clock_offset_ppm: float = 0.0
    excess_noise: float = 0.0

    def __post_init__(self):
        for name in ("distance_km", "atten_db_per_km", "fixed_loss_db", "phase_variance",
                     "carrier_walk_std", "delta_walk_std", "pol_walk_std", "excess_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def loss_db(self) -> float:
        return self.atten_db_per_km * self.distance_km + self.fixed_loss_db

    @property
    def t(self) -> float:
        return transmission(self.loss_db)


@dataclass(frozen=True)
class ChannelState:
    carrier_phase: float = 0.0
    delta: float = 0.0
    pol_angles: tuple = (0.0, 0.0, 0.0)
    clock_skew_ns: float = 0.0
    time_s: float = 0.0


def polarization_unitary(angles) -> np.ndarray:
    """Rz(a) Ry(b) Rz(c) acting on (H, V) amplitudes; broadcasts over leading axes."""
    a, b, c = (np.asarray(v, dtype=np.float64) for v in angles)
    shape = np.broadcast(a, b, c).shape
    u = np.empty(shape + (2, 2), dtype=np.complex128)
    cb, sb = np.cos(b / 2), np.sin(b / 2)
    u[..., 0, 0] = np.exp(-0.5j * (a + c)) * cb
    u[..., 0, 1] = -np.exp(-0.5j * (a - c)) * sb
    u[..., 1, 0] = np.exp(0.5j * (a - c)) * sb
    u[..., 1, 1] = np.exp(0.5j * (a + c)) * cb
    return u


def apply_phases(pulse, carrier_phase, delta, jitter=0.0):
    """Rotate the reference path by the carrier phase and the signal path by carrier + delta + jitter."""
    out = np.array(pulse, dtype=np.complex128, copy=True)
    out[..., V_POL] *= np.exp(-1j * np.asarray(carrier_phase))
    out[..., H_POL] *= np.exp(-1j * (np.asarray(carrier_phase) + delta + jitter))
    return out


def transmit(pulse, state: ChannelState, params: ChannelParams, jitter=0.0):
    """Propagate a two-polarization amplitude ``(..., 2)`` through the fiber."""
    rotated = apply_phases(pulse, state.carrier_phase, state.delta, jitter)
    u = polarization_unitary(state.pol_angles)
    return np.sqrt(params.t) * np.einsum("ij,...j->...i", u, rotated)


def advance(state: ChannelState, dt: float, params: ChannelParams,
            noise: np.random.Generator) -> ChannelState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    carrier = state.carrier_phase
    if params.carrier_walk_std:
        carrier = carrier + noise.normal(0.0, params.carrier_walk_std * np.sqrt(dt / PERIOD_S))
    delta = state.delta + params.delta_drift_rate * dt
    if params.delta_walk_std:
        delta = delta + noise.normal(0.0, params.delta_walk_std * np.sqrt(dt))
    pol = np.asarray(state.pol_angles) + params.pol_drift_rate * dt * POL_DRIFT_AXES
    if params.pol_walk_std:
        pol = pol + noise.normal(0.0, params.pol_walk_std * np.sqrt(dt), size=3)
    return replace(
        state,
        carrier_phase=float(wrap_angle(carrier)),
        delta=float(wrap_angle(delta)),
        pol_angles=tuple(float(v) for v in wrap_angle(pol)),
        clock_skew_ns=state.clock_skew_ns + params.clock_offset_ppm * 1e-6 * dt * 1e9,
        time_s=state.time_s + dt,
    )


def carrier_walk(n_periods: int, params: ChannelParams, start: float,
                 noise: np.random.Generator) -> np.ndarray:
    """Carrier phase for each of ``n_periods`` consecutive periods (vectorized random walk)."""
    steps = noise.normal(0.0, params.carrier_walk_std, size=n_periods) if params.carrier_walk_std else np.zeros(n_periods)
    steps[0] = 0.0
    return start + np.cumsum(steps)
