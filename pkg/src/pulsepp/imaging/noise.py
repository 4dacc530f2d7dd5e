"""Seeded noise simulators. Every call takes an explicit seed."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KSpaceData", "IntensityData", "add_complex_gaussian", "add_poisson", "rng_for"]


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and a stream id."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True)
class KSpaceData:
    samples: np.ndarray  # complex, length M
    sigma: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128).ravel()
        if not np.all(np.isfinite(s)):
            raise ValueError("k-space samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def M(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class IntensityData:
    counts: np.ndarray
    I0: float
    mu_max: float

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64).ravel()
        if np.any(c < 0):
            raise ValueError("photon counts must be nonnegative")
        if self.I0 <= 0:
            raise ValueError("I0 must be positive")
        object.__setattr__(self, "counts", c)

    @property
    def M(self) -> int:
        return self.counts.size


def add_complex_gaussian(clean, sigma: float, seed: int) -> KSpaceData:
    """Add CN(0, sigma^2) noise: each real/imaginary part has variance sigma^2 / 2."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    clean = np.asarray(clean, dtype=np.complex128).ravel()
    if sigma == 0:
        return KSpaceData(clean.copy(), 0.0)
    rng = rng_for(seed, 0x434E)
    noise = rng.standard_normal((clean.size, 2)) * (sigma / np.sqrt(2.0))
    return KSpaceData(clean + (noise[:, 0] + 1j * noise[:, 1]), float(sigma))


def add_poisson(mean, seed: int, I0: float = 1.0, mu_max: float = 0.0) -> IntensityData:
    mean = np.asarray(mean, dtype=np.float64).ravel()
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise ValueError("Poisson means must be finite and >= 0")
    counts = rng_for(seed, 0x504F).poisson(mean).astype(np.float64)
    return IntensityData(counts, I0, mu_max)
