"""Simulated measurement systems: masked Fourier and fan-beam X-ray."""
from .fanbeam import (
    FanBeamGeometry,
    SparseFormatError,
    build_fanbeam,
    load_sparse,
    ray_pixel_lengths,
    save_sparse,
    xray_intensity,
)
from .fidelity import gaussian_fidelity, generalized_kl, kl_fidelity
from .fourier import (
    CartesianMask,
    fourier_adjoint,
    fourier_forward,
    make_cartesian_mask,
    zero_fill_projection,
)
from .models import FanBeamModel, FourierModel
from .noise import IntensityData, KSpaceData, add_complex_gaussian, add_poisson
from .phantom import phantom_generate, phantom_line_integral

__all__ = [
    "CartesianMask", "make_cartesian_mask", "fourier_forward", "fourier_adjoint",
    "zero_fill_projection", "KSpaceData", "IntensityData", "add_complex_gaussian",
    "add_poisson", "gaussian_fidelity", "kl_fidelity", "generalized_kl",
    "FanBeamGeometry", "build_fanbeam", "ray_pixel_lengths", "xray_intensity",
    "save_sparse", "load_sparse", "SparseFormatError", "phantom_generate",
    "phantom_line_integral", "FourierModel", "FanBeamModel",
]
