"""Masked orthonormal 2-D DFT (stylized Cartesian MRI)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CartesianMask", "make_cartesian_mask", "fourier_forward", "fourier_adjoint", "zero_fill_projection"]


@dataclass(frozen=True)
class CartesianMask:
    """Retained full k-space columns, in unshifted FFT ordering."""

    columns: np.ndarray  # bool, length width
    width: int
    height: int
    seed: int | None = None

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=bool)
        if cols.shape != (self.width,):
            raise ValueError("column indicator length must equal width")
        if not cols.any():
            raise ValueError("mask retains no samples")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def retained(self) -> np.ndarray:
        return np.flatnonzero(self.columns)

    @property
    def M(self) -> int:
        return int(self.columns.sum()) * self.height

    @property
    def N(self) -> int:
        return self.width * self.height

    @property
    def acceleration(self) -> float:
        return self.N / self.M

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "columns": [int(c) for c in self.retained],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartesianMask":
        cols = np.zeros(int(d["width"]), dtype=bool)
        cols[np.asarray(d["columns"], dtype=int)] = True
        return cls(cols, int(d["width"]), int(d["height"]), d.get("seed"))


def make_cartesian_mask(width: int, height: int, R: float, center_fraction: float = 0.04,
                        seed: int = 0) -> CartesianMask:
    """Random column mask keeping ``round(width / R)`` columns, low frequencies first."""
    if R < 1:
        raise ValueError("acceleration R must be >= 1")
    if not 0 <= center_fraction < 1.0 / R or (R == 1 and center_fraction >= 1):
        raise ValueError("center_fraction must lie in [0, 1/R)")
    n_keep = max(1, int(round(width / R)))
    n_center = int(round(center_fraction * width))
    if n_center > n_keep:
        raise ValueError(
            f"infeasible mask: {n_center} center columns exceed {n_keep} retained columns"
        )
    # work in fftshift-ed coordinates where the DC column sits at width // 2
    shifted = np.zeros(width, dtype=bool)
    lo = width // 2 - n_center // 2
    shifted[lo:lo + n_center] = True
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4D41534B]))
    others = np.flatnonzero(~shifted)
    shifted[rng.choice(others, size=n_keep - n_center, replace=False)] = True
    return CartesianMask(np.fft.ifftshift(shifted), width, height, seed)


def _check_image(f, mask: CartesianMask) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.size != mask.N:
        raise ValueError(f"image has {f.size} pixels, mask expects {mask.N}")
    return f.reshape(mask.height, mask.width)


def fourier_forward(f, mask: CartesianMask) -> np.ndarray:
    """Retained entries of the orthonormal DFT, flattened row-major (length ``M``)."""
    F = np.fft.fft2(_check_image(f, mask), norm="ortho")
    return F[:, mask.columns].ravel()


def fourier_adjoint(g, mask: CartesianMask) -> np.ndarray:
    """Real part of the inverse DFT of the zero-filled data, shape ``(height, width)``."""
    g = np.asarray(g, dtype=np.complex128)
    if g.size != mask.M:
        raise ValueError(f"data has {g.size} samples, mask expects {mask.M}")
    full = np.zeros((mask.height, mask.width), dtype=np.complex128)
    full[:, mask.columns] = g.reshape(mask.height, -1)
    return np.fft.ifft2(full, norm="ortho").real


def zero_fill_projection(f, mask: CartesianMask) -> np.ndarray:
    """Closed-form ``H^+ H f`` for real images, computed independently of
    :func:`fourier_forward` by masking a full spectrum.

    Over the reals, a retained column ``c`` also pins down its conjugate
    column ``-c mod width``, so the projector keeps the symmetric closure of
    the mask rather than the mask itself.
    """
    f = _check_image(f, mask)
    keep = mask.columns | np.roll(mask.columns[::-1], 1)
    F = np.fft.fft2(f, norm="ortho")
    F[:, ~keep] = 0.0
    return np.fft.ifft2(F, norm="ortho").real
