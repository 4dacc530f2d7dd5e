"""Measurement models pairing an operator with its noise-matched fidelity.

The sampler only needs ``fidelity(data, image) -> (J, grad)``; the analysis
code needs the linear operator through ``apply_H`` / ``apply_Ht``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fanbeam import FanBeamGeometry, build_fanbeam, xray_intensity
from .fidelity import gaussian_fidelity, kl_fidelity
from .fourier import CartesianMask, fourier_adjoint, fourier_forward
from .noise import IntensityData, KSpaceData, add_complex_gaussian, add_poisson

__all__ = ["FourierModel", "FanBeamModel"]


@dataclass(frozen=True)
class FourierModel:
    mask: CartesianMask
    sigma: float

    kind = "fourier"
    noise = "gaussian"

    @property
    def M(self) -> int:
        return self.mask.M

    @property
    def shape(self) -> tuple[int, int]:
        return (self.mask.height, self.mask.width)

    def apply_H(self, f):
        return fourier_forward(f, self.mask)

    def apply_Ht(self, g):
        return fourier_adjoint(g, self.mask).ravel()

    def simulate(self, f, seed: int) -> KSpaceData:
        return add_complex_gaussian(self.apply_H(f), self.sigma, seed)

    def fidelity(self, data: KSpaceData, f):
        return gaussian_fidelity(data, f, self.mask)


@dataclass(frozen=True)
class FanBeamModel:
    geometry: FanBeamGeometry
    H: sp.csr_matrix
    I0: float
    mu_max: float = 0.063

    kind = "fanbeam"
    noise = "poisson"

    @classmethod
    def from_geometry(cls, geometry: FanBeamGeometry, I0: float, mu_max: float = 0.063):
        return cls(geometry, build_fanbeam(geometry), float(I0), float(mu_max))

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.geometry.n_pix, self.geometry.n_pix)

    def apply_H(self, f):
        return self.H @ np.asarray(f, dtype=np.float64).ravel()

    def apply_Ht(self, g):
        return self.H.T @ np.asarray(g, dtype=np.float64).ravel()

    def mean_counts(self, f):
        return xray_intensity(self.H, f, self.I0, self.mu_max)

    def simulate(self, f, seed: int) -> IntensityData:
        return add_poisson(self.mean_counts(f), seed, self.I0, self.mu_max)

    def fidelity(self, data: IntensityData, f):
        return kl_fidelity(data, f, self.H, self.I0, self.mu_max)
