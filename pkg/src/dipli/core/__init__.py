"""Image container helpers, file I/O, fixed filters and quality metrics."""

from .filters import (
    BOUNDARIES,
    LAPLACIAN_STENCIL,
    bilinear_resize,
    bilinear_weights,
    convolve2d,
    convolve2d_adjoint,
    gaussian_kernel,
    identity_kernel,
    lanczos_resize,
    lanczos_resize_adjoint,
    lanczos_weights,
    laplacian,
    laplacian_energy,
    luminance,
)
from .imageio import FORMATS, as_image, read_image, write_image
from .metrics import mae, mse, psnr, ssim
from .seeding import stream_rng, stream_seed

__all__ = [
    "BOUNDARIES",
    "FORMATS",
    "LAPLACIAN_STENCIL",
    "as_image",
    "bilinear_resize",
    "bilinear_weights",
    "convolve2d",
    "convolve2d_adjoint",
    "gaussian_kernel",
    "identity_kernel",
    "lanczos_resize",
    "lanczos_resize_adjoint",
    "lanczos_weights",
    "laplacian",
    "laplacian_energy",
    "luminance",
    "mae",
    "mse",
    "psnr",
    "read_image",
    "ssim",
    "stream_rng",
    "stream_seed",
    "write_image",
]
