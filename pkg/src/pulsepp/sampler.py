"""Restart-based projected-Adam sampling of data-consistent objects.

Four regularization variants are supported:

============  ==========================================  ====================
variant       penalty                                      constraint set
============  ==========================================  ====================
``pulse_pp``  ``lambda_c CROSS(V) + 1/2 sum |phi_l|^2``    ``v_i`` in annulus
``pulse``     ``lambda_g GEOCROSS(V)``                     ``v_i``, ``phi_l`` on spheres
``pulse1``    ``lambda_c CROSS(V)``                        annulus; ``phi_l`` on spheres
``pulse2``    ``lambda_g GEOCROSS(V) + 1/2 sum |phi_l|^2``  ``v_i`` on sphere
============  ==========================================  ====================
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .generator import (
    GeneratorWeights,
    TransformParams,
    sample_latent_norm_sq,
    synthesize,
    synthesize_with_grad,
)
from .latent_space import (
    AnnulusSpec,
    calibrate_annulus,
    cross_penalty,
    ecdf_build,
    geocross_penalty,
    noise_log_prior,
    project_annulus,
    project_sphere,
)

log = logging.getLogger(__name__)

__all__ = [
    "VARIANTS",
    "SamplerConfig",
    "AdamState",
    "ObjectiveValue",
    "RestartResult",
    "SolutionSet",
    "objective_eval",
    "adam_step",
    "constraint_step",
    "run_restart",
    "restart_seed",
    "acceptance_threshold",
    "embed_object",
    "empirical_sample",
    "calibrate_from_generator",
    "EmpiricalSampler",
]

VARIANTS = ("pulse_pp", "pulse", "pulse1", "pulse2")
_ANNULUS_VARIANTS = ("pulse_pp", "pulse1")
_NOISE_PRIOR_VARIANTS = ("pulse_pp", "pulse2")
_NOISE_SPHERE_VARIANTS = ("pulse", "pulse1")
ACCEPTANCE_MODES = ("gaussian_morozov", "poisson_embedding")
EMBED_PIXEL_SCALE = 0.01


@dataclass(frozen=True)
class SamplerConfig:
    variant: str = "pulse_pp"
    gamma: float = 0.001
    lambda_c: float = 0.01
    lambda_g: float = 0.1
    lr: float = 0.4
    n_steps: int = 2000
    n_restarts: int = 32
    seed: int = 0
    acceptance: str = "gaussian_morozov"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.acceptance not in ACCEPTANCE_MODES:
            raise ValueError(f"unknown acceptance mode {self.acceptance!r}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.n_steps < 0 or self.n_restarts < 1:
            raise ValueError("n_steps must be >= 0 and n_restarts >= 1")
        if self.lambda_c < 0 or self.lambda_g < 0:
            raise ValueError("penalty weights must be >= 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


# --------------------------------------------------------------------------
# parameter packing


def _pack(V, phi) -> np.ndarray:
    return np.concatenate([np.asarray(V, dtype=np.float64).ravel(), *phi])


def _unpack(x: np.ndarray, k: int, L: int, dims: Sequence[int]):
    V = x[: k * L].reshape(k, L)
    phi = []
    off = k * L
    for d in dims:
        phi.append(x[off:off + d])
        off += d
    return V, phi


# --------------------------------------------------------------------------
# objective


class ObjectiveValue(NamedTuple):
    value: float
    grad_V: np.ndarray
    grad_phi: list
    fidelity: float
    image: np.ndarray


def _penalty(variant, V, phi, lambda_c, lambda_g):
    k = V.shape[0]
    if variant in _ANNULUS_VARIANTS:
        c, gc = cross_penalty(V)
        value, gV = lambda_c * c, lambda_c * gc
    else:
        c, gc = geocross_penalty(V, math.sqrt(k))
        value, gV = lambda_g * c, lambda_g * gc
    gphi = None
    if variant in _NOISE_PRIOR_VARIANTS:
        p, gphi = noise_log_prior(phi)
        value += p
    return value, gV, gphi


def _objective(variant, V, phi, fid: Callable, weights, T, lambda_c, lambda_g) -> ObjectiveValue:
    if variant not in VARIANTS:
        raise ValueError(f"unsupported variant {variant!r}")
    img, J, gV, gphi = synthesize_with_grad(weights, T, V, phi, fid)
    R, gRV, gRphi = _penalty(variant, V, phi, lambda_c, lambda_g)
    gV = gV + gRV
    if gRphi is not None:
        gphi = [a + b for a, b in zip(gphi, gRphi)]
    return ObjectiveValue(J + R, gV, gphi, J, img)


def objective_eval(variant: str, V, phi, data, model, weights: GeneratorWeights,
                   T: TransformParams, lambda_c: float = 0.01,
                   lambda_g: float = 0.1) -> ObjectiveValue:
    """Fidelity of ``G(V, phi)`` against ``data`` plus the variant's penalty."""
    if not hasattr(model, "fidelity"):
        raise ValueError(f"model {model!r} provides no fidelity term")
    return _objective(variant, V, phi, lambda img: model.fidelity(data, img), weights, T,
                      lambda_c, lambda_g)


# --------------------------------------------------------------------------
# optimizer pieces


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params, grads, lr: float):
    """One bias-corrected Adam update. Returns ``(new_state, new_params)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new


def constraint_step(variant: str, V, phi, annulus: AnnulusSpec | None):
    """Project the style columns (and, for some variants, the noise vectors)."""
    V = np.asarray(V, dtype=np.float64)
    k, L = V.shape
    if variant in _ANNULUS_VARIANTS:
        if annulus is None:
            raise ValueError(f"variant {variant} needs an annulus")
        Vn = np.column_stack([project_annulus(V[:, i], annulus) for i in range(L)])
    elif variant in VARIANTS:
        Vn = np.column_stack([project_sphere(V[:, i], math.sqrt(k)) for i in range(L)])
    else:
        raise ValueError(f"unsupported variant {variant!r}")
    if variant in _NOISE_SPHERE_VARIANTS:
        phin = [project_sphere(p, math.sqrt(p.size)) for p in phi]
    else:
        phin = [np.array(p, dtype=np.float64, copy=True) for p in phi]
    return Vn, phin


# --------------------------------------------------------------------------
# restarts


@dataclass
class RestartResult:
    index: int
    seed: int
    V: np.ndarray | None
    phi: list | None
    objective: float
    fidelity: float
    best_step: int
    accepted: bool = False
    failed: bool = False
    message: str = ""
    wall_time: float = 0.0
    image: np.ndarray | None = None
    history: np.ndarray | None = None


def restart_seed(master_seed: int, index: int) -> int:
    """Seed of restart ``index``, derived from the master seed by counter."""
    state = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2, np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


def _projected_adam(fid, variant, weights, T, annulus, seed, *, lr, n_steps, lambda_c, lambda_g,
                    beta1=0.9, beta2=0.999, eps=1e-8, record_history=False, select="objective"):
    # select: best-so-far on the full objective or on the fidelity term alone
    key = (lambda o: o.value) if select == "objective" else (lambda o: o.fidelity)
    cfg = weights.config
    k, L, dims = cfg.k, cfg.L, cfg.noise_dims
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    V = rng.standard_normal((k, L))
    phi = [rng.standard_normal(d) for d in dims]
    V, phi = constraint_step(variant, V, phi, annulus)
    x = _pack(V, phi)

    obj = _objective(variant, V, phi, fid, weights, T, lambda_c, lambda_g)
    if not np.isfinite(obj.value):
        raise FloatingPointError("non-finite objective at initialization")
    best_x, best_val, best_fid, best_step = x.copy(), obj.value, obj.fidelity, 0
    best_key = key(obj)
    history = np.empty(n_steps + 1) if record_history else None
    if record_history:
        history[0] = best_key
    state = AdamState.zeros(x.size, beta1, beta2, eps)
    for j in range(1, n_steps + 1):
        state, x = adam_step(state, x, _pack(obj.grad_V, obj.grad_phi), lr)
        V, phi = constraint_step(variant, *_unpack(x, k, L, dims), annulus)
        x = _pack(V, phi)
        obj = _objective(variant, V, phi, fid, weights, T, lambda_c, lambda_g)
        if not np.isfinite(obj.value):
            raise FloatingPointError(f"non-finite objective at step {j}")
        if key(obj) < best_key:
            best_x, best_val, best_fid, best_step = x.copy(), obj.value, obj.fidelity, j
            best_key = key(obj)
        if record_history:
            history[j] = best_key
    Vb, phib = _unpack(best_x, k, L, dims)
    return Vb.copy(), [p.copy() for p in phib], best_val, best_fid, best_step, history


def run_restart(config: SamplerConfig, data, model, weights: GeneratorWeights, T: TransformParams,
                annulus: AnnulusSpec | None, restart_seed: int, index: int = 0,
                record_history: bool = False) -> RestartResult:
    """One restart: Gaussian init, projection, ``n_steps`` projected-Adam steps,
    best-so-far tracking. Non-finite objectives mark the restart as failed."""
    t0 = time.perf_counter()
    fid = lambda img: model.fidelity(data, img)  # noqa: E731
    try:
        V, phi, val, _, step, hist = _projected_adam(
            fid, config.variant, weights, T, annulus, restart_seed,
            lr=config.lr, n_steps=config.n_steps, lambda_c=config.lambda_c,
            lambda_g=config.lambda_g, beta1=config.beta1, beta2=config.beta2,
            eps=config.eps_adam, record_history=record_history,
        )
    except FloatingPointError as exc:
        return RestartResult(index, restart_seed, None, None, math.nan, math.nan, -1,
                             failed=True, message=str(exc),
                             wall_time=time.perf_counter() - t0)
    image = synthesize(weights, T, V, phi)
    J = model.fidelity(data, image)[0]
    return RestartResult(index, restart_seed, V, phi, val, J, step,
                         wall_time=time.perf_counter() - t0, image=image, history=hist)


# --------------------------------------------------------------------------
# acceptance and embedding


def embed_object(f, weights: GeneratorWeights, T: TransformParams, annulus: AnnulusSpec,
                 config: SamplerConfig | None = None, n_restarts: int = 1,
                 pixel_scale: float = EMBED_PIXEL_SCALE):
    """Closest generated image to ``f`` under the PULSE++ constraints.

    Runs the projected-Adam loop on ``|f - G(V, phi)|^2 / (2 pixel_scale^2)``
    plus CROSS (with ``lambda_c`` halved) and the noise prior, keeping the
    iterate with the smallest distance. Returns ``(V, phi, f_tilde)`` of the
    best restart.

    ``pixel_scale`` sets the fit tolerance against the penalties: at unit
    weight the noise prior (about ``sum(p_l) / 2``) would outweigh any
    pixel-level residual and the embedding would stop short of in-range
    objects.
    """
    config = config or SamplerConfig()
    if pixel_scale <= 0:
        raise ValueError("pixel_scale must be positive")
    f = np.asarray(f, dtype=np.float64)
    res = weights.config.output_resolution
    if f.size != res * res:
        raise ValueError(f"object must have {res * res} pixels")
    f = f.reshape(res, res)
    w = 1.0 / pixel_scale**2

    def fid(img):
        r = img - f
        return 0.5 * w * float(np.sum(r * r)), w * r

    best = None
    for t in range(n_restarts):
        out = _projected_adam(
            fid, "pulse_pp", weights, T, annulus, restart_seed(config.seed ^ 0x454D4244, t),
            lr=config.lr, n_steps=config.n_steps, lambda_c=config.lambda_c / 2.0,
            lambda_g=config.lambda_g, beta1=config.beta1, beta2=config.beta2,
            eps=config.eps_adam, select="fidelity",
        )
        if best is None or out[3] < best[3]:
            best = out
    V, phi = best[0], best[1]
    return V, phi, synthesize(weights, T, V, phi)


def acceptance_threshold(mode: str, data, model, f_true=None, weights=None, T=None,
                         annulus=None, config: SamplerConfig | None = None) -> float:
    """Tolerance on the fidelity for accepting a solution.

    ``gaussian_morozov``: ``M / 2``. ``poisson_embedding``: the fidelity of
    the embedding of the true object in the generator range.
    """
    if mode == "gaussian_morozov":
        return model.M / 2.0
    if mode == "poisson_embedding":
        if f_true is None:
            raise ValueError("poisson_embedding acceptance needs the true object")
        if weights is None or T is None or annulus is None:
            raise ValueError("poisson_embedding acceptance needs the generator and annulus")
        _, _, f_tilde = embed_object(f_true, weights, T, annulus, config)
        return float(model.fidelity(data, f_tilde)[0])
    raise ValueError(f"unknown acceptance mode {mode!r}")


def calibrate_from_generator(weights, T, gamma: float, n_samples: int = 100_000,
                             seed: int = 0) -> AnnulusSpec:
    """Annulus from the ECDF of ``|T(G_m(z))|`` over ``n_samples`` draws."""
    norms = np.sqrt(sample_latent_norm_sq(weights, T, n_samples, seed))
    return calibrate_annulus(ecdf_build(norms), gamma)


# --------------------------------------------------------------------------
# batch


@dataclass
class SolutionSet:
    results: list[RestartResult]
    epsilon: float

    @property
    def accepted(self) -> list[RestartResult]:
        return [r for r in self.results if r.accepted]

    @property
    def images(self) -> list[np.ndarray]:
        return [r.image for r in self.accepted]

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([r.fidelity for r in self.accepted])

    @property
    def acceptance_fraction(self) -> float:
        return len(self.accepted) / len(self.results)


def _restart_task(args):
    config, data, model, weights, T, annulus, seed, index = args
    return run_restart(config, data, model, weights, T, annulus, seed, index)


def empirical_sample(config: SamplerConfig, data, model, weights: GeneratorWeights,
                     T: TransformParams, annulus: AnnulusSpec | None,
                     epsilon: float | None = None, workers: int = 1) -> SolutionSet:
    """Run ``config.n_restarts`` restarts and keep those with fidelity <= epsilon.

    ``epsilon`` defaults to the Morozov value ``M / 2``; Poisson acceptance
    needs it passed in (see :func:`acceptance_threshold`). Results come back
    in restart order whatever the worker count.
    """
    if epsilon is None:
        if config.acceptance != "gaussian_morozov":
            raise ValueError("epsilon must be given for poisson_embedding acceptance")
        epsilon = acceptance_threshold(config.acceptance, data, model)
    tasks = [
        (config, data, model, weights, T, annulus, restart_seed(config.seed, t), t)
        for t in range(config.n_restarts)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_restart_task, tasks))
    else:
        results = [_restart_task(t) for t in tasks]
    for r in results:
        if r.failed:
            log.warning("restart %d failed: %s", r.index, r.message)
            continue
        # re-evaluate independently of the optimizer's bookkeeping
        r.fidelity = float(model.fidelity(data, r.image)[0])
        r.accepted = bool(r.fidelity <= epsilon)
    return SolutionSet(results, float(epsilon))


class EmpiricalSampler(BaseEstimator):
    """Estimator front-end for :func:`empirical_sample`.

    ``fit(data)`` runs the restarts against measurement ``data`` and stores
    the accepted images in ``solutions_`` (shape ``(n_accepted, H, W)``).
    """

    def __init__(self, weights=None, transform=None, model=None, annulus=None, variant="pulse_pp",
                 gamma=0.001, lambda_c=0.01, lambda_g=0.1, lr=0.4, n_steps=2000, n_restarts=32,
                 epsilon=None, random_state=0, n_jobs=1):
        self.weights = weights
        self.transform = transform
        self.model = model
        self.annulus = annulus
        self.variant = variant
        self.gamma = gamma
        self.lambda_c = lambda_c
        self.lambda_g = lambda_g
        self.lr = lr
        self.n_steps = n_steps
        self.n_restarts = n_restarts
        self.epsilon = epsilon
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> SamplerConfig:
        acceptance = "gaussian_morozov" if getattr(self.model, "noise", "") == "gaussian" \
            else "poisson_embedding"
        return SamplerConfig(self.variant, self.gamma, self.lambda_c, self.lambda_g, self.lr,
                             self.n_steps, self.n_restarts, int(self.random_state), acceptance)

    def fit(self, X, y=None):
        if self.weights is None or self.transform is None or self.model is None:
            raise ValueError("weights, transform and model must be set before fit")
        config = self._config()
        annulus = self.annulus
        if annulus is None and config.variant in _ANNULUS_VARIANTS:
            annulus = calibrate_from_generator(self.weights, self.transform, config.gamma,
                                               seed=config.seed)
        self.annulus_ = annulus
        self.solution_set_ = empirical_sample(config, X, self.model, self.weights,
                                              self.transform, annulus, self.epsilon,
                                              workers=self.n_jobs)
        self.epsilon_ = self.solution_set_.epsilon
        imgs = self.solution_set_.images
        res = self.weights.config.output_resolution
        self.solutions_ = np.stack(imgs) if imgs else np.empty((0, res, res))
        self.fidelities_ = self.solution_set_.fidelities
        return self
