import math

import numpy as np
import pytest

from cvqkd_lab.receiver import (
    BiasModel,
    FrameError,
    LoSchedule,
    PulseFrame,
    bias_correct,
    capture_frames,
    fit_line,
    measure_bin,
    shot_noise_calibration,
    subtract_dark_mean,
)
from cvqkd_lab.transmitter import CLONE_REFERENCE, CLONE_SIGNAL, REFERENCE, SIGNAL
from cvqkd_lab.units import CalibrationError, DetectorConstants

DET = DetectorConstants()
C = 64.0


def vacuum(rng, frames, lo_power=1.0, bias=BiasModel.zero(), det=DET):
    return capture_frames(None, LoSchedule(lo_power=lo_power), det, bias, np.arange(frames) * 1e-6, rng, C)


def test_vacuum_variance_is_shot_plus_electrical(rng):
    s = measure_bin(None, 1.0, DET, BiasModel.zero(), np.zeros(200_000), rng, C)
    assert np.var(s.x) == pytest.approx(C ** 2 * (1 + DET.nu_e), rel=0.01)


def test_constant_bias_offsets_every_bin(rng):
    f = vacuum(rng, 50_000, bias=BiasModel.linear(7, -3))
    assert np.allclose(f.x.mean(axis=0), 7, atol=1.5)
    assert np.allclose(f.p.mean(axis=0), -3, atol=1.5)


def test_signal_enters_with_heterodyne_half(rng):
    alpha = 3.0 + 1.0j
    s = measure_bin(np.full(100_000, alpha), 1.0, DetectorConstants(nu_e=0.0), BiasModel.zero(), np.zeros(100_000), rng, 1.0)
    assert np.mean(s.x) == pytest.approx(math.sqrt(0.42 / 2) * 2 * 3.0, rel=0.01)
    assert np.mean(s.p) == pytest.approx(math.sqrt(0.42 / 2) * 2 * 1.0, rel=0.02)


def test_shot_variance_linear_in_lo_power(rng):
    powers = np.linspace(0.25, 2.0, 8)
    var = [np.var(measure_bin(None, lo, DetectorConstants(nu_e=0.0), BiasModel.zero(), np.zeros(20_000), rng).x)
           for lo in powers]
    _, _, r2 = fit_line(powers, var)
    assert r2 >= 0.99


def test_lo_schedule_geometry():
    lo = LoSchedule()
    t = lo.bin_times(np.array([0.0]))[0] * 1e9
    assert t[SIGNAL] - t[CLONE_SIGNAL] == pytest.approx(500.0)
    assert t[REFERENCE] - t[CLONE_REFERENCE] == pytest.approx(500.0)
    with pytest.raises(ValueError):
        LoSchedule(bin_offsets_ns=(0.0, 100.0, 400.0, 600.0))
    with pytest.raises(ValueError):
        LoSchedule(lo_power=-1.0)


def test_lo_runs_every_period(rng):
    f = vacuum(rng, 1000, lo_power=1.0)
    assert f.n_frames == 1000 and np.all(np.isfinite(f.x))


def test_static_bias_cancels_exactly():
    lo = LoSchedule()
    bias = BiasModel.linear(7, -3)
    a, b = bias(lo.bin_times(np.arange(10) * 1e-6), 1.0)
    out = bias_correct(PulseFrame(np.asarray(a, float), np.asarray(b, float)))
    assert np.all(out.x[:, [SIGNAL, REFERENCE]] == 0) and np.all(out.p[:, [SIGNAL, REFERENCE]] == 0)
    assert out.bias_corrected and out.control_path_only


def test_bias_ramp_leaves_rate_times_500ns():
    r = 2e5  # counts per second
    lo = LoSchedule()
    a, b = BiasModel.linear(1, 1, r, -r)(lo.bin_times(np.arange(5) * 1e-6), 1.0)
    out = bias_correct(PulseFrame(np.asarray(a, float), np.asarray(b, float)))
    assert np.allclose(out.x[:, SIGNAL], r * 500e-9)
    assert np.allclose(out.p[:, REFERENCE], -r * 500e-9)


def test_bias_varies_slowly():
    bias = BiasModel.linear(7, -3, 100.0, 100.0)
    t = np.linspace(0, 1, 11)
    assert np.all(np.abs(bias(t, 1.0)[0] - bias(t - 500e-9, 1.0)[0]) < 1e-3)


def test_clone_difference_doubles_noise(rng):
    f = vacuum(rng, 100_000, bias=BiasModel.linear(7, -3))
    ratio = np.var(bias_correct(f).x[:, SIGNAL]) / np.var(f.x[:, SIGNAL])
    assert ratio == pytest.approx(2.0, rel=0.05)


def test_key_path_does_not_double_noise(rng):
    f = vacuum(rng, 100_000, bias=BiasModel.linear(7, -3))
    keyed = subtract_dark_mean(f)
    assert not keyed.control_path_only
    assert abs(keyed.x[:, SIGNAL].mean()) < 1.0
    assert np.var(keyed.x[:, SIGNAL]) == pytest.approx(np.var(f.x[:, SIGNAL]), rel=1e-3)


def test_missing_clone_rejected():
    with pytest.raises(FrameError):
        bias_correct(PulseFrame(np.zeros((3, 2)), np.zeros((3, 2))))
    x = np.zeros((3, 4))
    x[1, CLONE_SIGNAL] = np.nan
    with pytest.raises(FrameError):
        bias_correct(PulseFrame(x, np.zeros((3, 4))))
    with pytest.raises(FrameError):
        PulseFrame(np.zeros((3, 4)), np.zeros((2, 4)))


def test_calibration_recovers_injected_noise(rng):
    det = DetectorConstants(nu_e=0.3)
    cal = shot_noise_calibration(vacuum(rng, 10_000, det=det), vacuum(rng, 10_000, lo_power=0.0, det=det))
    assert cal.shot_variance == pytest.approx(C ** 2, rel=0.03)
    assert cal.elec_variance == pytest.approx(0.3 * C ** 2, rel=0.03)
    assert cal.nu_e() == pytest.approx(0.3, rel=0.05)


def test_calibration_doubles_with_lo_power(rng):
    dark = vacuum(rng, 20_000, lo_power=0.0)
    z1 = shot_noise_calibration(vacuum(rng, 20_000, 1.0), dark).z_shot
    z2 = shot_noise_calibration(vacuum(rng, 20_000, 2.0), dark).z_shot
    assert z2 / z1 == pytest.approx(2.0, rel=0.03)


def test_dark_detector_calibration(rng):
    cal = shot_noise_calibration(vacuum(rng, 5000, lo_power=0.0))
    assert cal.z_shot == 0.0 and cal.z_elec > 0
    with pytest.raises(CalibrationError):
        cal.nu_e()


def test_calibration_needs_enough_frames(rng):
    with pytest.raises(CalibrationError):
        shot_noise_calibration(vacuum(rng, 999))
    with pytest.raises(CalibrationError):
        shot_noise_calibration(vacuum(rng, 2000))
    with pytest.raises(CalibrationError):
        shot_noise_calibration(vacuum(rng, 2000), vacuum(rng, 10, lo_power=0.0))


def test_frame_capture_csv(rng):
    text = vacuum(rng, 3).to_csv().splitlines()
    assert text[0] == "frame_index,bin,x_adc,p_adc,corrected_x,corrected_p,z"
    assert len(text) == 1 + 3 * 4
    assert text[1].startswith("0,signal,")
    assert text[3].split(",")[4] == ""  # clone rows carry no corrected value


def test_fit_line_exact():
    slope, intercept, r2 = fit_line([0, 1, 2], [1, 3, 5])
    assert (slope, intercept, r2) == (pytest.approx(2), pytest.approx(1), pytest.approx(1))
