import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqkd_lab.transmitter import (
    CLONE_SIGNAL,
    DEFAULT_PATTERN,
    H_POL,
    PAYLOAD_SYMBOLS,
    REFERENCE,
    SIGNAL,
    V_POL,
    EncodingError,
    EncodingScale,
    FramingError,
    Role,
    SagnacDrive,
    TxPulseSpec,
    binary_phase_symbols,
    build_packet,
    carve_pulses,
    drive_for_target,
    modulate,
    sagnac_output,
    wrap_angle,
)
from cvqkd_lab.rng import SeededPseudorandom, gaussian_pairs

angles = st.floats(-10, 10, allow_nan=False)


def payload(seed=0, sigma=100.0, k=0.05):
    pairs = gaussian_pairs(SeededPseudorandom(seed), PAYLOAD_SYMBOLS, sigma)
    return k * pairs.x, k * pairs.p


def test_sagnac_examples():
    assert sagnac_output(1.0, SagnacDrive(0.3, 0.3)) == 0
    assert sagnac_output(2.0, SagnacDrive(math.pi, 0.0)) == pytest.approx(2j)
    assert sagnac_output(1.0, SagnacDrive(math.pi / 2, -math.pi / 2)) == pytest.approx(1.0)


@given(angles, angles, st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False))
def test_sagnac_energy_bound(a, b, alpha):
    out = sagnac_output(alpha, SagnacDrive(a, b))
    assert abs(out) <= abs(alpha) * (1 + 1e-12) + 1e-12
    if abs(abs(wrap_angle(a - b)) - math.pi) < 1e-9:
        assert abs(out) == pytest.approx(abs(alpha))


@given(angles, angles, angles)
def test_common_shift_only_rotates(a, b, c):
    base = sagnac_output(1.0, SagnacDrive(a, b))
    shifted = sagnac_output(1.0, SagnacDrive(a + c, b + c))
    assert abs(shifted) == pytest.approx(abs(base), abs=1e-12)
    assert shifted == pytest.approx(base * np.exp(1j * c), abs=1e-9)


def test_drive_round_trip_many_targets(rng):
    alpha_in = 20.0 * np.exp(0.4j)
    r = 2 * abs(alpha_in) * np.sqrt(rng.uniform(0, 1, 10_000))
    th = rng.uniform(-np.pi, np.pi, 10_000)
    x, p = r * np.cos(th), r * np.sin(th)
    drive = drive_for_target(x, p, alpha_in)
    assert np.all(drive.phi_cw >= -np.pi) and np.all(drive.phi_cw < np.pi)
    out = sagnac_output(alpha_in, drive)
    assert np.max(np.abs(2 * out - (x + 1j * p))) < 1e-9 * 2 * abs(alpha_in)


def test_drive_for_dark_target():
    d = drive_for_target(0.0, 0.0, 5.0)
    assert (d.phi_cw, d.phi_ccw) == (0.0, 0.0)


def test_unreachable_target_rejected():
    with pytest.raises(EncodingError):
        drive_for_target(2 * 5.0 + 0.1, 0.0, 5.0)
    with pytest.raises(EncodingError):
        drive_for_target(0.1, 0.0, 0.0)


def test_encoding_scale():
    s = EncodingScale.for_variance(25.0, 100.0 ** 2)
    assert s.k == pytest.approx(0.05)
    assert s.modulation_variance(100.0 ** 2) == pytest.approx(25.0)
    with pytest.raises(ValueError):
        EncodingScale(0.0)


def test_header_bits_map_to_binary_phase():
    syms = binary_phase_symbols([0, 1], 100.0)
    assert list(syms) == [20.0, -20.0]
    # amplitude sqrt(100): |alpha|^2 = (X/2)^2 = 100 photons
    assert (syms[0] / 2) ** 2 == pytest.approx(100.0)


def test_packet_layout():
    x, p = payload()
    pkt = build_packet(x, p, packet_id=0xDEADBEEF)
    assert len(pkt) == 1 + 64 + 64 + 8192 + 64
    assert pkt.roles[0] == Role.MARKER and pkt.reference_photons[0] >= 2 * pkt.reference_photons[1]
    assert len(pkt.section(Role.HEADER)) == 64 and len(pkt.section(Role.FOOTER)) == 64
    header = pkt.x_a[pkt.section(Role.HEADER)]
    assert np.array_equal(header < 0, DEFAULT_PATTERN == 1)
    assert np.array_equal(pkt.x_a[pkt.section(Role.FOOTER)], header)
    ids = pkt.x_a[pkt.section(Role.ID)] < 0
    assert int("".join("1" if b else "0" for b in ids), 2) == 0xDEADBEEF
    assert np.all(pkt.p_a[pkt.roles != Role.PAYLOAD] == 0)


def test_default_pattern_is_balanced_msequence():
    assert DEFAULT_PATTERN.shape == (64,)
    # the 63-chip m-sequence has 32 ones; the padding bit is 0
    assert DEFAULT_PATTERN.sum() == 32


def test_packet_is_deterministic():
    x, p = payload(3)
    a = build_packet(x, p, 7).to_csv()
    b = build_packet(x.copy(), p.copy(), 7).to_csv()
    assert a == b
    assert a.splitlines()[0] == "bin_index,role,x_a,p_a,photons"
    assert a.splitlines()[1].startswith("0,marker,")


def test_wrong_payload_length_rejected():
    with pytest.raises(FramingError):
        build_packet(np.zeros(100), np.zeros(100), 1)
    x, p = payload()
    with pytest.raises(FramingError):
        build_packet(x, p, 1, pattern=np.zeros(32, dtype=np.uint8))
    with pytest.raises(FramingError):
        build_packet(x, p, -1)


def test_invalid_pulse_spec():
    with pytest.raises(ValueError):
        TxPulseSpec(signal_photons=-1)
    with pytest.raises(ValueError):
        TxPulseSpec(signal_reference_gap_ns=1000.0)
    with pytest.raises(ValueError):
        TxPulseSpec(marker_factor=1.5)


def test_leakage_30db():
    x, p = payload()
    pkt = build_packet(x, p, 1)
    amps = carve_pulses(pkt, 30.0)
    leak = abs(amps[5, SIGNAL, V_POL]) ** 2
    assert leak == pytest.approx(1.0)  # 1000-photon reference, 30 dB
    assert abs(amps[5, REFERENCE, V_POL]) ** 2 == pytest.approx(1000.0)
    # signal-path leakage is held off by the undriven Sagnac loop
    assert np.all(amps[:, CLONE_SIGNAL, H_POL] == 0)
    finite = carve_pulses(pkt, 30.0, sagnac_null_db=20.0)
    assert abs(finite[5, CLONE_SIGNAL, H_POL]) ** 2 == pytest.approx(400.0 * 1e-3 * 1e-2)


def test_infinite_extinction_is_dark():
    x, p = payload()
    amps = carve_pulses(build_packet(x, p, 1), np.inf)
    assert np.all(amps[:, SIGNAL, V_POL] == 0)
    assert np.all(amps[:, CLONE_SIGNAL] == 0)


def test_extinction_must_be_positive():
    x, p = payload()
    with pytest.raises(ValueError):
        carve_pulses(build_packet(x, p, 1), 0.0)


def test_reference_carries_no_encoding():
    x, p = payload()
    pkt = build_packet(x, p, 1)
    amps = carve_pulses(pkt, 30.0)
    assert np.all(np.angle(amps[1:, REFERENCE, V_POL]) == 0)
    assert np.allclose(2 * amps[:, SIGNAL, H_POL], pkt.x_a + 1j * pkt.p_a, atol=1e-9)
    assert np.allclose(modulate(pkt), amps[:, SIGNAL, H_POL])


def test_leakage_excess_variance_is_small():
    # 1 photon of reference leakage sits in V; a 1-degree polarization error
    # projects a fraction sin^2 onto the H-polarized signal LO
    eta, t = 0.42, 10 ** -0.8
    mix = math.sin(math.radians(1)) ** 2
    excess = eta / 2 * 4 * t * 1.0 * mix
    assert excess < 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_payload_variance_matches_scale(seed):
    sigma, v_a = 100.0, 25.0
    k = EncodingScale.for_variance(v_a, sigma ** 2).k
    x, _ = payload(seed, sigma, k)
    assert np.var(x) == pytest.approx(v_a, rel=0.1)


def test_payload_variance_over_100_packets():
    k = EncodingScale.for_variance(25.0, 1e4).k
    src = SeededPseudorandom(11)
    pairs = gaussian_pairs(src, PAYLOAD_SYMBOLS * 100, 100.0)
    assert np.var(k * pairs.x) == pytest.approx(25.0, rel=0.02)
    assert np.var(k * pairs.p) == pytest.approx(25.0, rel=0.02)
