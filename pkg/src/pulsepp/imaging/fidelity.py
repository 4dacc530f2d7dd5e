"""Data-fidelity terms (negative log-likelihoods) with exact image gradients."""
from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from .fourier import CartesianMask, fourier_adjoint, fourier_forward
from .noise import IntensityData, KSpaceData

__all__ = ["gaussian_fidelity", "kl_fidelity", "generalized_kl"]


def gaussian_fidelity(g: KSpaceData, f, mask: CartesianMask):
    """``J = |g - H f|^2 / (2 sigma^2)`` and its gradient (image-shaped)."""
    if g.sigma <= 0:
        raise ValueError("gaussian fidelity needs sigma > 0")
    f = np.asarray(f, dtype=np.float64)
    resid = fourier_forward(f, mask) - g.samples
    J = 0.5 * float(np.vdot(resid, resid).real) / g.sigma**2
    grad = fourier_adjoint(resid, mask) / g.sigma**2
    return J, grad.reshape(f.shape)


def generalized_kl(g, g_hat) -> float:
    """``sum g log(g / g_hat) - g + g_hat`` with ``0 log 0 = 0``."""
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    terms = xlogy(g, g) - xlogy(g, g_hat) - g + g_hat
    return float(np.sum(terms))


def kl_fidelity(g: IntensityData, f, H, I0: float | None = None, mu_max: float | None = None):
    """Generalized KL between counts ``g`` and ``I0 exp(-H mu_max f)``, with gradient."""
    I0 = g.I0 if I0 is None else I0
    mu_max = g.mu_max if mu_max is None else mu_max
    f = np.asarray(f, dtype=np.float64)
    g_hat = I0 * np.exp(-(H @ (mu_max * f.ravel())))
    J = generalized_kl(g.counts, g_hat)
    # dJ/dg_hat = 1 - g/g_hat ; dg_hat/df = -mu_max g_hat H
    grad = mu_max * (H.T @ (g.counts - g_hat))
    return J, grad.reshape(f.shape)
