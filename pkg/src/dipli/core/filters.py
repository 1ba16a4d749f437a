"""Fixed (non-learned) linear filters and resampling on ``(..., H, W)`` arrays.

Every operator here is linear in the image and exposes an exact adjoint,
which the differentiable degradation path uses for its backward pass.
"""

from functools import lru_cache

import numpy as np

from ..errors import BadDims, NonPositiveSigma, ZeroOutputSize

__all__ = [
    "BOUNDARIES",
    "gaussian_kernel",
    "identity_kernel",
    "convolve2d",
    "convolve2d_adjoint",
    "lanczos_weights",
    "lanczos_resize",
    "lanczos_resize_adjoint",
    "bilinear_weights",
    "bilinear_resize",
    "luminance",
    "LAPLACIAN_STENCIL",
    "laplacian",
    "laplacian_energy",
]

BOUNDARIES = ("replicate", "reflect", "zero")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
LAPLACIAN_STENCIL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def gaussian_kernel(sigma, radius=None):
    """Normalized 2-D Gaussian of shape ``(2r+1, 2r+1)``.

    ``radius`` defaults to ``ceil(3 * sigma)``.
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = int(np.ceil(3.0 * sigma))
    radius = int(radius)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()


def identity_kernel():
    return np.ones((1, 1))


def _kernel_radius(kernel):
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 != 1:
        raise ValueError(f"kernel must be square with odd size, got shape {kernel.shape}")
    return kernel, kernel.shape[0] // 2


@lru_cache(maxsize=256)
def _pad_matrix(n, r, boundary):
    """One-hot ``(n + 2r, n)`` matrix mapping a signal to its padded version."""
    rows = np.arange(-r, n + r)
    if boundary == "replicate":
        idx = np.clip(rows, 0, n - 1)
    elif boundary == "reflect":
        period = 2 * (n - 1) if n > 1 else 1
        idx = np.abs(rows) % period
        idx = np.where(idx > n - 1, period - idx, idx)
    elif boundary == "zero":
        idx = np.where((rows >= 0) & (rows < n), rows, -1)
    else:
        raise ValueError(f"unknown boundary {boundary!r}; expected one of {BOUNDARIES}")
    m = np.zeros((n + 2 * r, n))
    valid = idx >= 0
    m[np.flatnonzero(valid), idx[valid]] = 1.0
    m.setflags(write=False)
    return m


def _pad(img, r, boundary):
    if r == 0:
        return img
    if boundary == "replicate":
        mode = "edge"
    elif boundary == "zero":
        mode = "constant"
    elif boundary == "reflect":
        h, w = img.shape[-2:]
        if r >= h or r >= w:
            ph = _pad_matrix(h, r, boundary)
            pw = _pad_matrix(w, r, boundary)
            return ph @ img @ pw.T
        mode = "reflect"
    else:
        raise ValueError(f"unknown boundary {boundary!r}; expected one of {BOUNDARIES}")
    widths = [(0, 0)] * (img.ndim - 2) + [(r, r), (r, r)]
    return np.pad(img, widths, mode=mode)


def convolve2d(img, kernel, boundary="replicate"):
    """True 2-D convolution ``out[i, j] = sum_ab k[a, b] * img[i - a, j - b]``.

    Kernel offsets are centered (``a, b`` in ``[-r, r]``). Works on the last
    two axes of ``img`` and preserves its shape.
    """
    img = np.asarray(img, dtype=np.float64)
    kernel, r = _kernel_radius(kernel)
    h, w = img.shape[-2:]
    padded = _pad(img, r, boundary)
    out = np.zeros_like(img)
    size = 2 * r + 1
    for a in range(size):
        for b in range(size):
            wab = kernel[a, b]
            if wab != 0.0:
                out += wab * padded[..., 2 * r - a:2 * r - a + h, 2 * r - b:2 * r - b + w]
    return out


def convolve2d_adjoint(grad, kernel, boundary="replicate"):
    """Adjoint of :func:`convolve2d` with respect to the image."""
    grad = np.asarray(grad, dtype=np.float64)
    kernel, r = _kernel_radius(kernel)
    h, w = grad.shape[-2:]
    size = 2 * r + 1
    dpad = np.zeros(grad.shape[:-2] + (h + 2 * r, w + 2 * r))
    for a in range(size):
        for b in range(size):
            wab = kernel[a, b]
            if wab != 0.0:
                dpad[..., 2 * r - a:2 * r - a + h, 2 * r - b:2 * r - b + w] += wab * grad
    if r == 0:
        return dpad
    ph = _pad_matrix(h, r, boundary)
    pw = _pad_matrix(w, r, boundary)
    return ph.T @ dpad @ pw


def _lanczos(t, a):
    t = np.asarray(t, dtype=np.float64)
    out = np.sinc(t) * np.sinc(t / a)
    return np.where(np.abs(t) < a, out, 0.0)


@lru_cache(maxsize=256)
def lanczos_weights(n_in, n_out, a=3):
    """``(n_out, n_in)`` Lanczos resampling matrix along one axis.

    Pixel centers are aligned (``c = (o + 0.5) * n_in / n_out - 0.5``); when
    reducing, the kernel is stretched by the reduction ratio. Taps falling
    outside the signal are folded onto the nearest edge sample and each row
    is renormalized to sum to one.
    """
    if n_out < 1 or n_in < 1:
        raise ZeroOutputSize(f"resize dimensions must be >= 1, got {n_in} -> {n_out}")
    if a not in (2, 3):
        raise ValueError(f"Lanczos lobes must be 2 or 3, got {a}")
    if n_in == n_out:
        m = np.eye(n_in)
        m.setflags(write=False)
        return m
    ratio = n_in / n_out
    support = max(ratio, 1.0)
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        c = (o + 0.5) * ratio - 0.5
        lo = int(np.floor(c - a * support))
        hi = int(np.ceil(c + a * support))
        taps = np.arange(lo, hi + 1)
        wts = _lanczos((taps - c) / support, a)
        np.add.at(m[o], np.clip(taps, 0, n_in - 1), wts)
        m[o] /= m[o].sum()
    m.setflags(write=False)
    return m


def lanczos_resize(img, out_h, out_w, a=3):
    """Separable Lanczos-``a`` resampling of the last two axes."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    mh = lanczos_weights(h, int(out_h), a)
    mw = lanczos_weights(w, int(out_w), a)
    return mh @ img @ mw.T


def lanczos_resize_adjoint(grad, in_h, in_w, a=3):
    grad = np.asarray(grad, dtype=np.float64)
    out_h, out_w = grad.shape[-2:]
    mh = lanczos_weights(int(in_h), out_h, a)
    mw = lanczos_weights(int(in_w), out_w, a)
    return mh.T @ grad @ mw


@lru_cache(maxsize=256)
def bilinear_weights(n_in, n_out):
    """``(n_out, n_in)`` linear interpolation matrix, half-pixel aligned.

    Source coordinates below zero are clamped to the first sample, matching
    the usual ``align_corners=False`` convention.
    """
    if n_out < 1 or n_in < 1:
        raise ZeroOutputSize(f"resize dimensions must be >= 1, got {n_in} -> {n_out}")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), max(n_in - 2, 0))
    frac = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    m.setflags(write=False)
    return m


def bilinear_resize(img, out_h, out_w):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    return bilinear_weights(h, int(out_h)) @ img @ bilinear_weights(w, int(out_w)).T


def luminance(img):
    """Collapse a ``(C, H, W)`` image to ``(H, W)`` (ITU-R 601 weights for RGB)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[0] == 1:
        return img[0]
    if img.shape[0] == 3:
        return np.tensordot(LUMA_WEIGHTS, img, axes=1)
    raise BadDims(f"cannot take luminance of {img.shape[0]} channels")


def laplacian(img):
    """4-neighbour Laplacian response of the luminance, replicate boundary."""
    return convolve2d(luminance(img), LAPLACIAN_STENCIL, "replicate")


def laplacian_energy(img):
    """Mean squared Laplacian response; a sharpness (focus) measure."""
    return float(np.mean(laplacian(img) ** 2))
