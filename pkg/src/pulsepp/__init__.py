"""Empirical sampling of alternate data-consistent solutions with a style-based generator."""

__version__ = "0.1.0"

from .analysis import NullSpaceDecomposer, uncertainty_report  # noqa: E402
from .generator import (  # noqa: E402
    GeneratorConfig,
    LatentWhitener,
    fit_transform,
    init_generator,
    synthesize,
)
from .latent_space import AnnulusProjector, AnnulusSpec  # noqa: E402
from .sampler import EmpiricalSampler, SamplerConfig, empirical_sample  # noqa: E402

__all__ = [
    "__version__",
    "GeneratorConfig",
    "LatentWhitener",
    "init_generator",
    "fit_transform",
    "synthesize",
    "AnnulusSpec",
    "AnnulusProjector",
    "SamplerConfig",
    "EmpiricalSampler",
    "empirical_sample",
    "NullSpaceDecomposer",
    "uncertainty_report",
]
