"""Latent-vector geometry: norm statistics, annulus calibration, projections
and the penalties applied to style matrices and noise sets.

Style matrices are stored as ``(k, L)`` arrays (one column per synthesis
layer). Noise sets are plain lists of 1-D arrays.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "NormEcdf",
    "AnnulusSpec",
    "ecdf_build",
    "calibrate_annulus",
    "project_annulus",
    "project_sphere",
    "cross_penalty",
    "geocross_penalty",
    "noise_log_prior",
    "chi2_pdf",
    "ks_distance",
    "AnnulusProjector",
]

_ULP_SLACK = 8


@dataclass(frozen=True)
class NormEcdf:
    """Empirical CDF over nonnegative samples (kept sorted ascending)."""

    sorted_samples: np.ndarray

    @property
    def n(self) -> int:
        return int(self.sorted_samples.size)

    def __call__(self, x):
        """Right-continuous evaluation ``#(samples <= x) / n``."""
        counts = np.searchsorted(self.sorted_samples, x, side="right")
        return counts / self.n

    def quantile(self, q):
        """Quantile by linear interpolation between order statistics."""
        return np.quantile(self.sorted_samples, q, method="linear")


@dataclass(frozen=True)
class AnnulusSpec:
    delta_min: float
    delta_max: float
    gamma: float

    def __post_init__(self):
        if not (0.0 <= self.delta_min <= self.delta_max):
            raise ValueError(
                f"need 0 <= delta_min <= delta_max, got {self.delta_min}, {self.delta_max}"
            )
        if self.delta_max <= 0:
            raise ValueError("delta_max must be positive")

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnulusSpec":
        return cls(float(d["delta_min"]), float(d["delta_max"]), float(d["gamma"]))


def ecdf_build(samples) -> NormEcdf:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("cannot build an ECDF from an empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("ECDF samples must be finite")
    return NormEcdf(np.sort(arr))


def calibrate_annulus(ecdf: NormEcdf, gamma: float) -> AnnulusSpec:
    """Pick radii so that a mass ``gamma/2`` of the norm ECDF lies on each side."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    lo, hi = ecdf.quantile([gamma / 2.0, 1.0 - gamma / 2.0])
    return AnnulusSpec(float(lo), float(hi), float(gamma))


def project_annulus(v: np.ndarray, spec: AnnulusSpec) -> np.ndarray:
    """Metric projection of ``v`` onto ``{x : delta_min <= |x| <= delta_max}``.

    The zero vector maps to ``delta_min * e_1``. Norms within a few ulps of
    a boundary count as on it, so a rescaled vector (whose recomputed norm
    can round just past the radius) is a fixed point and the map is
    idempotent bitwise.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    slack = _ULP_SLACK * np.finfo(float).eps
    if spec.delta_min * (1.0 - slack) <= norm <= spec.delta_max * (1.0 + slack):
        return v.copy()
    if norm == 0.0:
        out = np.zeros_like(v)
        out[0] = spec.delta_min
        return out
    if norm < spec.delta_min:
        return v * (spec.delta_min / norm)
    return v * (spec.delta_max / norm)


def project_sphere(v: np.ndarray, radius: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot project the zero vector onto a sphere")
    return v * (radius / norm)


def _check_style_matrix(V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise ValueError(f"style matrix must be 2-D (k, L), got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("style matrix has non-finite entries")
    return V


def cross_penalty(V) -> tuple[float, np.ndarray]:
    """Sum of squared Euclidean distances over all column pairs, with gradient."""
    V = _check_style_matrix(V)
    # explicit differences keep identical columns exactly at zero
    D = V[:, :, None] - V[:, None, :]
    value = 0.5 * float(np.sum(D * D))
    grad = 2.0 * D.sum(axis=2)
    return value, grad


def geocross_penalty(V, radius: float) -> tuple[float, np.ndarray]:
    """Sum over column pairs of the arc length ``radius * angle(v_i, v_j)``."""
    V = _check_style_matrix(V)
    norms = np.linalg.norm(V, axis=0)
    if np.any(norms == 0.0):
        raise ValueError("geocross is undefined for a zero column")
    U = V / norms
    L = V.shape[1]
    value = 0.0
    grad = np.zeros_like(V)
    for i in range(L - 1):
        for j in range(i + 1, L):
            c = float(np.clip(U[:, i] @ U[:, j], -1.0, 1.0))
            value += radius * math.acos(c)
            # d angle / d v_i = -(u_j - c u_i) / (|v_i| sin angle); |u_j - c u_i| = sin angle
            e_i = U[:, j] - c * U[:, i]
            e_j = U[:, i] - c * U[:, j]
            s = np.linalg.norm(e_i)
            if s > 1e-15:
                grad[:, i] -= radius * e_i / (norms[i] * s)
                grad[:, j] -= radius * e_j / (norms[j] * s)
    return value, grad


def noise_log_prior(phi: Sequence[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    """Negative standard-normal log density of the noise set, up to a constant."""
    value = 0.5 * sum(float(p @ p) for p in phi)
    return value, [np.array(p, dtype=float, copy=True) for p in phi]


def chi2_pdf(k: int, x: float) -> float:
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x < 0:
        return 0.0
    if x == 0:
        if k == 1:
            return math.inf
        return 0.5 if k == 2 else 0.0
    half = 0.5 * k
    log_pdf = (half - 1.0) * math.log(x) - 0.5 * x - half * math.log(2.0) - math.lgamma(half)
    return math.exp(log_pdf)


def ks_distance(ecdf: NormEcdf, reference_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov distance evaluated at the sample points.

    Both one-sided gaps at each jump are checked, so the result is the exact
    sup-distance for a continuous reference.
    """
    xs = ecdf.sorted_samples
    n = ecdf.n
    ref = np.asarray(reference_cdf(xs), dtype=float)
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    d = max(np.max(np.abs(upper - ref)), np.max(np.abs(ref - lower)))
    return float(min(max(d, 0.0), 1.0))


class AnnulusProjector(TransformerMixin, BaseEstimator):
    """Calibrate the norm annulus from latent norms and project style columns onto it.

    Parameters
    ----------
    gamma : float, default=0.001
        Total probability mass left outside the annulus (half on each side).

    Attributes
    ----------
    spec_ : AnnulusSpec
    ecdf_ : NormEcdf
    """

    def __init__(self, gamma: float = 0.001):
        self.gamma = gamma

    def fit(self, X, y=None):
        """``X`` holds latent vector norms (any shape; flattened)."""
        self.ecdf_ = ecdf_build(X)
        self.spec_ = calibrate_annulus(self.ecdf_, self.gamma)
        return self

    def transform(self, X):
        """Project every column of a ``(k, L)`` style matrix."""
        check_is_fitted(self, "spec_")
        V = _check_style_matrix(X)
        return np.column_stack([project_annulus(V[:, i], self.spec_) for i in range(V.shape[1])])

    def inside_fraction(self, norms) -> float:
        check_is_fitted(self, "spec_")
        norms = np.asarray(norms, dtype=float)
        return float(np.mean((norms >= self.spec_.delta_min) & (norms <= self.spec_.delta_max)))
