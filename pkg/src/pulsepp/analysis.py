"""Uncertainty quantification over a set of alternate solutions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

__all__ = [
    "ComponentSplit",
    "UncertaintyReport",
    "ConvergenceError",
    "pixelwise_std",
    "cgls",
    "measurable_component",
    "uncertainty_report",
    "fidelity_summary",
    "NullSpaceDecomposer",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def _rdot(a, b) -> float:
    # real inner product; complex data counts as stacked real/imag parts
    return float(np.vdot(a, b).real)


def pixelwise_std(solutions: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel population standard deviation (divides by ``T``)."""
    if len(solutions) < 2:
        raise ValueError("need at least two solutions")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in solutions])
    # shift by the first image so identical stacks give exact zeros
    dev = stack - stack[0]
    dev -= dev.mean(axis=0)
    return np.sqrt(np.mean(dev * dev, axis=0))


def cgls(apply_H, apply_Ht, b, tol: float = 1e-8, max_iter: int = 2000):
    """Minimum-norm least squares ``min |H x - b|`` from ``x0 = 0``.

    Stops when ``|H^T (b - H x)| <= tol * |H^T b|``. Returns
    ``(x, relative_residual, iterations)``.
    """
    s = apply_Ht(b)
    norm0 = np.sqrt(_rdot(s, s))
    x = np.zeros_like(s, dtype=np.float64)
    if norm0 == 0.0:
        return x, 0.0, 0
    r = np.array(b, copy=True)
    p = s.copy()
    gamma = norm0**2
    rel = 1.0
    for it in range(1, max_iter + 1):
        q = apply_H(p)
        alpha = gamma / _rdot(q, q)
        x += alpha * p
        r -= alpha * q
        s = apply_Ht(r)
        gamma_new = _rdot(s, s)
        rel = np.sqrt(gamma_new) / norm0
        if rel <= tol:
            return x, rel, it
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    raise ConvergenceError(f"CGLS reached {max_iter} iterations at relative residual {rel:.3e}",
                           rel)


@dataclass(frozen=True)
class ComponentSplit:
    f_meas: np.ndarray
    f_null: np.ndarray
    residual: float
    iterations: int


def measurable_component(apply_H: Callable, apply_Ht: Callable, f, tol: float = 1e-8,
                         max_iter: int = 2000) -> ComponentSplit:
    """Split ``f`` into ``H^+ H f`` and the remainder invisible to ``H``."""
    f = np.asarray(f, dtype=np.float64)
    x, rel, it = cgls(apply_H, apply_Ht, apply_H(f.ravel()), tol, max_iter)
    f_meas = x.reshape(f.shape)
    return ComponentSplit(f_meas, f - f_meas, float(rel), it)


@dataclass(frozen=True)
class UncertaintyReport:
    std_map: np.ndarray
    std_meas: np.ndarray
    std_null: np.ndarray
    n_solutions: int
    tol: float
    max_residual: float

    @property
    def fom_total(self) -> float:
        return float(np.sum(self.std_map**2))

    @property
    def fom_meas(self) -> float:
        return float(np.sum(self.std_meas**2))

    @property
    def fom_null(self) -> float:
        return float(np.sum(self.std_null**2))

    @property
    def additivity_error(self) -> float:
        """Relative gap between ``fom_meas + fom_null`` and ``fom_total``."""
        total = self.fom_total
        if total == 0.0:
            return abs(self.fom_meas + self.fom_null)
        return abs(self.fom_meas + self.fom_null - total) / total

    def to_dict(self) -> dict:
        return {
            "fom_total": self.fom_total,
            "fom_meas": self.fom_meas,
            "fom_null": self.fom_null,
            "additivity_error": self.additivity_error,
            "n_solutions": self.n_solutions,
            "std_denominator": "T",
            "cg_tol": self.tol,
            "max_cg_residual": self.max_residual,
        }


def uncertainty_report(solutions, apply_H, apply_Ht, tol: float = 1e-8,
                       max_iter: int = 2000) -> UncertaintyReport:
    if len(solutions) < 2:
        raise ValueError("need at least two solutions")
    splits = [measurable_component(apply_H, apply_Ht, s, tol, max_iter) for s in solutions]
    return UncertaintyReport(
        std_map=pixelwise_std(solutions),
        std_meas=pixelwise_std([s.f_meas for s in splits]),
        std_null=pixelwise_std([s.f_null for s in splits]),
        n_solutions=len(solutions),
        tol=tol,
        max_residual=max(s.residual for s in splits),
    )


def fidelity_summary(fidelities, epsilon: float) -> dict:
    """Five-number summary of fidelity values plus the accepted fraction."""
    J = np.asarray(fidelities, dtype=np.float64).ravel()
    if J.size == 0:
        raise ValueError("no fidelity values")
    q = np.quantile(J, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return {
        "n": int(J.size),
        "min": float(q[0]),
        "q1": float(q[1]),
        "median": float(q[2]),
        "q3": float(q[3]),
        "max": float(q[4]),
        "epsilon": float(epsilon),
        "fraction_accepted": float(np.mean(J <= epsilon)),
    }


class NullSpaceDecomposer(TransformerMixin, BaseEstimator):
    """Transformer returning measurable (or null) components of flattened images.

    Parameters
    ----------
    apply_H, apply_Ht : callable
        The forward operator and its adjoint.
    component : {"meas", "null"}
    """

    def __init__(self, apply_H=None, apply_Ht=None, component="meas", tol=1e-8, max_iter=2000):
        self.apply_H = apply_H
        self.apply_Ht = apply_Ht
        self.component = component
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        if self.apply_H is None or self.apply_Ht is None:
            raise ValueError("apply_H and apply_Ht are required")
        if self.component not in ("meas", "null"):
            raise ValueError("component must be 'meas' or 'null'")
        self.fitted_ = True
        return self

    def transform(self, X):
        check_is_fitted(self, "fitted_")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty_like(X)
        for i, row in enumerate(X):
            split = measurable_component(self.apply_H, self.apply_Ht, row, self.tol, self.max_iter)
            out[i] = split.f_meas if self.component == "meas" else split.f_null
        return out
