import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cvqkd_lab.rng import (
    FileBacked,
    OutOfEntropyError,
    SeededPseudorandom,
    angle_from_word,
    gaussian_pair,
    gaussian_pairs,
    pair_from_uniforms,
    rayleigh_radius,
    uniform_from_word,
)


class FixedWords:
    def __init__(self, words):
        self.words = np.asarray(words, dtype=np.uint16)

    def integers(self, n):
        out, self.words = self.words[:n], self.words[n:]
        return out


def test_radius_examples():
    assert rayleigh_radius(1.0, 3.0) == 0.0
    assert rayleigh_radius(math.exp(-1), 1.0) == pytest.approx(math.sqrt(2))
    assert rayleigh_radius(math.exp(-1), 1.0, corrected=False) == pytest.approx(1.0)


@pytest.mark.parametrize("u", [0.0, -0.1, 1.5])
def test_radius_rejects_out_of_range(u):
    with pytest.raises(ValueError):
        rayleigh_radius(u, 1.0)


def test_radius_rejects_bad_sigma():
    with pytest.raises(ValueError):
        rayleigh_radius(0.5, 0.0)


def test_pair_examples():
    pair = pair_from_uniforms(math.exp(-1), 0.0, 2.0)
    assert (pair.x, pair.p) == (pytest.approx(2 * math.sqrt(2)), pytest.approx(0.0))
    theta = angle_from_word(1 << 15)
    assert theta == pytest.approx(math.pi)
    pair = pair_from_uniforms(0.5, theta, 1.0)
    assert pair.x == pytest.approx(-rayleigh_radius(0.5, 1.0))
    assert abs(pair.p) < 1e-12


def test_word_mapping_excludes_zero():
    assert uniform_from_word(0) == 1 / 65536
    assert uniform_from_word(65535) == 1.0
    assert angle_from_word(0) == 0.0


def test_pair_consumes_radius_then_angle_word():
    src = FixedWords([65535, 1 << 14])  # u = 1 -> r = 0
    assert gaussian_pair(src, 1.0).x == 0.0
    src = FixedWords([0, 1 << 14])  # angle pi/2
    pair = gaussian_pair(src, 1.0)
    assert abs(pair.x) < 1e-9 and pair.p == pytest.approx(rayleigh_radius(1 / 65536, 1.0))


def test_seeded_source_is_reproducible():
    a = gaussian_pairs(SeededPseudorandom(99), 1000, 5.0)
    b = gaussian_pairs(SeededPseudorandom(99), 1000, 5.0)
    assert a.x.tobytes() == b.x.tobytes() and a.p.tobytes() == b.p.tobytes()
    c = gaussian_pairs(SeededPseudorandom(100), 1000, 5.0)
    assert a.x.tobytes() != c.x.tobytes()


def test_seeded_words_are_16_bit():
    w = SeededPseudorandom(1).integers(100_000)
    assert w.dtype == np.uint16 and w.min() >= 0 and w.max() < 1 << 16


def test_file_backed_source(tmp_path):
    words = np.array([1, 2, 65535, 256], dtype="<u2")
    path = tmp_path / "entropy.bin"
    path.write_bytes(words.tobytes())
    src = FileBacked(path)
    assert src.remaining == 4
    assert list(src.integers(3)) == [1, 2, 65535]
    with pytest.raises(OutOfEntropyError):
        src.integers(2)
    assert list(src.integers(1)) == [256]


def test_file_backed_pairs_exhaust(tmp_path):
    path = tmp_path / "e.bin"
    path.write_bytes(np.arange(5, dtype="<u2").tobytes())
    src = FileBacked(path)
    gaussian_pairs(src, 2, 1.0)
    with pytest.raises(OutOfEntropyError):
        gaussian_pair(src, 1.0)


def test_uncorrected_radius_halves_variance():
    pairs = gaussian_pairs(SeededPseudorandom(3), 200_000, 2.0, corrected=False)
    assert np.var(pairs.x) == pytest.approx(2.0, rel=0.02)


def test_higher_moments_vanish():
    pairs = gaussian_pairs(SeededPseudorandom(7), 1_000_000, 1.0)
    n = pairs.x.size
    for q in (pairs.x, pairs.p):
        assert abs(stats.skew(q)) < 3 * math.sqrt(6 / n)
        assert abs(stats.kurtosis(q)) < 3 * math.sqrt(24 / n)


def test_values_lie_on_the_quantized_grid():
    pairs = gaussian_pairs(SeededPseudorandom(5), 5000, 1.0)
    r = np.hypot(pairs.x, pairs.p)
    k = np.rint(65536 * np.exp(-r ** 2 / 2) - 1)
    assert np.allclose(rayleigh_radius(uniform_from_word(k), 1.0), r, atol=1e-9)


@given(st.integers(0, 65535), st.floats(0.1, 100))
def test_radius_is_nonnegative_and_monotone(k, sigma):
    r = rayleigh_radius(uniform_from_word(k), sigma)
    assert r >= 0
    if k < 65535:
        assert rayleigh_radius(uniform_from_word(k + 1), sigma) <= r
