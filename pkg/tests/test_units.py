import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cvqkd_lab.units import (
    CalibrationError,
    DetectorConstants,
    QuadSample,
    Units,
    ZValue,
    from_snu,
    photon_number,
    to_snu,
    z_value,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def adc(x, p=None):
    return QuadSample(np.asarray(x), np.zeros_like(x) if p is None else np.asarray(p), Units.ADC_COUNTS)


def test_pure_shot_noise_converts_to_unit_variance(rng):
    s = 37.0
    x = rng.normal(0, math.sqrt(s), 100_000)
    out = to_snu(adc(x, x[::-1]), s)
    assert out.units is Units.SHOT_NOISE_UNITS
    assert np.var(out.x) == pytest.approx(1.0, rel=0.02)


def test_four_times_shot_variance_reads_four(rng):
    s = 12.5
    x = rng.normal(0, math.sqrt(4 * s), 100_000)
    assert np.var(to_snu(adc(x), s).x) == pytest.approx(4.0, rel=0.02)


@pytest.mark.parametrize("shot", [0.0, -1.0])
def test_nonpositive_shot_variance_rejected(shot):
    with pytest.raises(CalibrationError):
        to_snu(adc(np.ones(3)), shot)


def test_negative_electrical_variance_rejected():
    with pytest.raises(CalibrationError):
        to_snu(adc(np.ones(3)), 1.0, -0.1)


def test_unit_mismatch_rejected():
    with pytest.raises(ValueError):
        to_snu(QuadSample(1.0, 1.0, Units.SHOT_NOISE_UNITS), 1.0)
    with pytest.raises(ValueError):
        from_snu(adc(np.ones(2)), 1.0)


@given(finite, finite, st.floats(1e-6, 1e6))
def test_snu_round_trip(x, p, shot):
    back = from_snu(to_snu(QuadSample(x, p, Units.ADC_COUNTS), shot), shot)
    assert float(back.x) == pytest.approx(x, rel=1e-9, abs=1e-9)
    assert float(back.p) == pytest.approx(p, rel=1e-9, abs=1e-9)


def test_quad_sample_must_be_finite():
    with pytest.raises(ValueError):
        QuadSample(float("nan"), 0.0)
    with pytest.raises(ValueError):
        QuadSample(np.array([1.0, np.inf]), np.zeros(2))


def test_z_value_examples():
    assert z_value(QuadSample(3.0, 4.0)) == 25.0
    assert z_value(QuadSample(0.0, 0.0)) == 0.0
    assert QuadSample(3.0, 4.0).z == 25.0


def test_vacuum_z_mean_is_two(rng):
    s = QuadSample(rng.standard_normal(100_000), rng.standard_normal(100_000))
    assert np.mean(z_value(s)) == pytest.approx(2.0, rel=0.03)


@given(finite, finite, st.floats(-10, 10))
def test_z_is_rotation_invariant(x, p, angle):
    c, s = math.cos(angle), math.sin(angle)
    z0 = z_value(QuadSample(x, p))
    z1 = z_value(QuadSample(c * x - s * p, s * x + c * p))
    assert z1 == pytest.approx(z0, rel=1e-12, abs=1e-12)


def test_photon_number_examples():
    assert photon_number(2.5, 2.0, 0.5, 0.42) == 0.0
    assert photon_number(502.0, 2.0, 0.0, 0.5) == pytest.approx(1000.0)
    assert ZValue(502.0, 2.0, 0.0).photons(0.5) == pytest.approx(1000.0)


def test_photon_number_rejects_bad_calibration():
    with pytest.raises(CalibrationError):
        photon_number(10.0, 0.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        photon_number(10.0, 2.0, 0.0, 1.5)


def test_photon_number_of_coherent_pulse(rng):
    # heterodyne of a 1000-photon pulse through a lossless channel, eta = 0.42;
    # with X = 2 Re(alpha) the formula returns 2 |alpha|^2
    det = DetectorConstants()
    n_true, frames = 1000.0, 10_000
    amp = math.sqrt(det.eta / 2) * 2 * math.sqrt(n_true)
    noise = math.sqrt(1 + det.nu_e)
    x = amp + noise * rng.standard_normal(frames)
    p = noise * rng.standard_normal(frames)
    n_est = photon_number(np.mean(x * x + p * p), 2.0, 2 * det.nu_e, det.eta)
    assert n_est / 2 == pytest.approx(n_true, rel=0.05)


def test_vacuum_photon_number_shrinks_with_samples(rng):
    spreads = []
    for n in (1_000, 16_000):
        est = [photon_number(np.mean(rng.standard_normal(n) ** 2 + rng.standard_normal(n) ** 2), 2.0, 0.0, 0.5)
               for _ in range(200)]
        assert abs(np.mean(est)) < 4 * np.std(est) / math.sqrt(200)
        spreads.append(np.std(est))
    assert spreads[0] / spreads[1] == pytest.approx(4.0, rel=0.25)


def test_detector_constants():
    det = DetectorConstants()
    assert det.eta == pytest.approx(0.42)
    with pytest.raises(ValueError):
        DetectorConstants(eta_det=0.0)
    with pytest.raises(ValueError):
        DetectorConstants(nu_e=-0.1)
