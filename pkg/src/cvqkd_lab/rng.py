"""Entropy sources and Gaussian quadrature pairs by Rayleigh inversion.

A pair is built from two 16-bit uniforms: one sets the radius through the
inverse Rayleigh CDF, the other a uniform angle. The radius uses
``sigma * sqrt(-2 ln u)``, which is the inverse CDF of the Rayleigh density
``(r / sigma**2) exp(-r**2 / (2 sigma**2))`` and gives per-quadrature
variance ``sigma**2``. The shorter ``sigma * sqrt(-ln u)`` form yields
``sigma**2 / 2`` instead; pass ``corrected=False`` to reproduce it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

UNIFORM_BITS = 16
UNIFORM_LEVELS = 1 << UNIFORM_BITS


class OutOfEntropyError(RuntimeError):
    pass


class EntropySource:
    """Emits uniform integers in ``[0, 2**16)``."""

    def integers(self, n: int) -> np.ndarray:
        raise NotImplementedError


class SeededPseudorandom(EntropySource):
    def __init__(self, seed: int | np.random.SeedSequence):
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def integers(self, n: int) -> np.ndarray:
        return self._rng.integers(0, UNIFORM_LEVELS, size=n, dtype=np.uint16)


class FileBacked(EntropySource):
    """Reads raw little-endian uint16 words sequentially from a file."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self._words = np.fromfile(self.path, dtype="<u2")
        self._pos = 0

    @property
    def remaining(self) -> int:
        return self._words.size - self._pos

    def integers(self, n: int) -> np.ndarray:
        if n > self.remaining:
            raise OutOfEntropyError(
                f"{self.path}: requested {n} words, {self.remaining} left"
            )
        out = self._words[self._pos:self._pos + n].astype(np.uint16)
        self._pos += n
        return out


@dataclass(frozen=True)
class GaussianPair:
    x: float | np.ndarray
    p: float | np.ndarray
    sigma: float


def uniform_from_word(k):
    """Map a 16-bit word to ``u`` in ``(0, 1]``; ``u = 0`` is unreachable."""
    return (np.asarray(k, dtype=np.float64) + 1.0) / UNIFORM_LEVELS


def angle_from_word(k):
    return 2.0 * np.pi * np.asarray(k, dtype=np.float64) / UNIFORM_LEVELS


def rayleigh_radius(u, sigma: float, corrected: bool = True):
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u > 1):
        raise ValueError("u must lie in (0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    factor = 2.0 if corrected else 1.0
    # -log(1) is -0.0; keep the radius non-negative zero
    return sigma * np.sqrt(np.abs(-factor * np.log(u)))


def pair_from_uniforms(u, theta, sigma: float, corrected: bool = True) -> GaussianPair:
    r = rayleigh_radius(u, sigma, corrected)
    return GaussianPair(r * np.cos(theta), r * np.sin(theta), sigma)


def gaussian_pairs(source: EntropySource, n: int, sigma: float, corrected: bool = True) -> GaussianPair:
    """Draw ``n`` pairs; consumes ``2 n`` words (radius word, angle word per pair)."""
    words = source.integers(2 * n).reshape(n, 2)
    return pair_from_uniforms(uniform_from_word(words[:, 0]), angle_from_word(words[:, 1]), sigma, corrected)


def gaussian_pair(source: EntropySource, sigma: float, corrected: bool = True) -> GaussianPair:
    pair = gaussian_pairs(source, 1, sigma, corrected)
    return GaussianPair(float(pair.x[0]), float(pair.p[0]), sigma)
