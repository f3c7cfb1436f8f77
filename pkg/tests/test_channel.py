import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvqkd_lab.channel import (
    ChannelParams,
    ChannelState,
    advance,
    apply_phases,
    carrier_walk,
    polarization_unitary,
    transmit,
)
from cvqkd_lab.transmitter import H_POL, V_POL

pol = st.tuples(*[st.floats(-4, 4, allow_nan=False)] * 3)
amp = st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False)


def lossless(**kw):
    return ChannelParams(distance_km=0.0, fixed_loss_db=0.0, **kw)


def test_identity_channel():
    pulse = np.array([1.0 + 2j, -3j])
    assert np.allclose(transmit(pulse, ChannelState(), lossless()), pulse)


def test_loopback_loss():
    assert ChannelParams().loss_db == pytest.approx(8.0)
    assert ChannelParams().t == pytest.approx(0.1585, abs=1e-4)


def test_point_to_point_reference():
    p = ChannelParams(distance_km=0.0, fixed_loss_db=3.2)
    out = transmit(np.array([0, math.sqrt(1000)]), ChannelState(), p)
    assert abs(out[V_POL]) ** 2 == pytest.approx(478.63, abs=0.01)


@given(st.floats(0, 100), st.floats(0, 100))
def test_loss_composes(d1, d2):
    a = ChannelParams(distance_km=d1, fixed_loss_db=0).t * ChannelParams(distance_km=d2, fixed_loss_db=0).t
    b = ChannelParams(distance_km=d1 + d2, fixed_loss_db=0).t
    assert a == pytest.approx(b, rel=1e-12)


def test_negative_parameters_rejected():
    with pytest.raises(ValueError):
        ChannelParams(distance_km=-1)
    with pytest.raises(ValueError):
        ChannelParams(phase_variance=-0.1)


@given(amp, amp, st.floats(-10, 10), st.floats(-10, 10), pol)
def test_phase_and_polarization_preserve_photons(h, v, phi, delta, angles):
    state = ChannelState(carrier_phase=phi, delta=delta, pol_angles=angles)
    out = transmit(np.array([h, v]), state, lossless())
    assert np.sum(np.abs(out) ** 2) == pytest.approx(abs(h) ** 2 + abs(v) ** 2, rel=1e-12, abs=1e-9)


def test_signal_path_sees_delta():
    out = apply_phases(np.array([1.0, 1.0]), 0.3, 0.7, 0.05)
    assert np.angle(out[V_POL]) == pytest.approx(-0.3)
    assert np.angle(out[H_POL]) == pytest.approx(-(0.3 + 0.7 + 0.05))


@given(pol)
def test_polarization_unitary_is_unitary(angles):
    u = polarization_unitary(angles)
    assert np.allclose(u @ u.conj().T, np.eye(2), atol=1e-12)


def test_frozen_channel_only_advances_clock(rng):
    p = lossless(carrier_walk_std=0, delta_drift_rate=0, delta_walk_std=0, clock_offset_ppm=20.0)
    s0 = ChannelState(carrier_phase=0.4, delta=-1.0, pol_angles=(0.1, 0.2, 0.3))
    s1 = advance(s0, 1.0, p, rng)
    assert (s1.carrier_phase, s1.delta, s1.pol_angles) == (0.4, -1.0, (0.1, 0.2, 0.3))
    assert s1.clock_skew_ns == pytest.approx(20_000.0)
    assert s1.time_s == 1.0


def test_advance_requires_positive_dt(rng):
    with pytest.raises(ValueError):
        advance(ChannelState(), 0.0, ChannelParams(), rng)


def test_delta_nearly_constant_over_a_packet(rng):
    p = ChannelParams()
    drift = [abs(advance(ChannelState(), 10e-3, p, rng).delta) for _ in range(2000)]
    assert np.quantile(drift, 0.99) < 0.01


def test_angles_are_wrapped(rng):
    p = lossless(delta_drift_rate=100.0, pol_drift_rate=100.0)
    s = advance(ChannelState(), 1.0, p, rng)
    for a in (s.carrier_phase, s.delta, *s.pol_angles):
        assert -math.pi <= a < math.pi


def test_carrier_walk_statistics(rng):
    p = ChannelParams(carrier_walk_std=0.05)
    phi = carrier_walk(100_000, p, 1.0, rng)
    assert phi[0] == 1.0
    assert np.std(np.diff(phi)) == pytest.approx(0.05, rel=0.02)
