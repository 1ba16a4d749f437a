"""Forward degradation model ``f_k = d o h o w_k`` and sensor noise.

``w_k`` is a backward bilinear warp at HQ resolution, ``h`` a Gaussian PSF
(true convolution, replicate boundary) and ``d`` Lanczos resampling by
``1/s``. The same :class:`DegradationOperator` arithmetic backs the plain
image path and the differentiable path used in the loss.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core.filters import (
    convolve2d,
    convolve2d_adjoint,
    gaussian_kernel,
    lanczos_weights,
)
from .errors import DimNotDivisible, InvalidConfig, LengthMismatch, NonPositiveSigma, ShapeMismatch
from .flow import FlowField, _apply_taps, _apply_taps_adjoint, _taps

__all__ = [
    "NoiseConfig",
    "DegradationConfig",
    "DegradationOperator",
    "apply_forward",
    "apply_forward_diff",
    "add_noise",
    "backprojection_loss",
    "backprojection_loss_ops",
    "MIX_MODES",
]

MIX_MODES = ("poisson_then_additive", "additive_then_poisson")


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian read noise ``sigma_eta`` and Poisson shot noise.

    ``poisson_peak`` is the expected photon count at intensity 1; 0 turns
    shot noise off.
    """

    sigma_eta: float = 0.0
    poisson_peak: float = 0.0
    mix_mode: str = "poisson_then_additive"

    def __post_init__(self):
        if self.sigma_eta < 0 or self.poisson_peak < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if self.mix_mode not in MIX_MODES:
            raise InvalidConfig(f"mix_mode must be one of {MIX_MODES}")

    @property
    def is_noiseless(self):
        return self.sigma_eta == 0 and self.poisson_peak == 0


@dataclass(frozen=True)
class DegradationConfig:
    """Parameters of ``f_k``.

    ``psf_sigma=None`` selects the default ``0.5 * scale_s`` HQ pixels and
    ``psf_sigma=0`` disables the PSF. ``psf_radius=None`` means
    ``ceil(3 sigma)``.
    """

    scale_s: int = 2
    psf_sigma: float | None = None
    psf_radius: int | None = None
    lanczos_lobes: int = 3
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int | None = None

    def __post_init__(self):
        if int(self.scale_s) != self.scale_s or self.scale_s < 1:
            raise InvalidConfig(f"scale_s must be a positive integer, got {self.scale_s}")
        if self.psf_sigma is not None and self.psf_sigma < 0:
            raise NonPositiveSigma("psf_sigma must be >= 0 (0 disables the PSF)")
        if self.lanczos_lobes not in (2, 3):
            raise InvalidConfig("lanczos_lobes must be 2 or 3")

    @property
    def effective_psf_sigma(self):
        return 0.5 * self.scale_s if self.psf_sigma is None else float(self.psf_sigma)

    def psf_kernel(self):
        sigma = self.effective_psf_sigma
        if sigma == 0:
            return None
        return gaussian_kernel(sigma, self.psf_radius)

    def to_dict(self):
        return {
            "scale": self.scale_s,
            "psf_sigma": self.psf_sigma,
            "lanczos_lobes": self.lanczos_lobes,
            "noise_sigma": self.noise.sigma_eta,
            "poisson_peak": self.noise.poisson_peak,
            "mix_mode": self.noise.mix_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"scale", "psf_sigma", "psf_radius", "lanczos_lobes", "noise_sigma", "poisson_peak", "mix_mode", "seed"}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown degradation keys: {sorted(unknown)}")
        noise = NoiseConfig(
            sigma_eta=float(d.get("noise_sigma", 0.0)),
            poisson_peak=float(d.get("poisson_peak", 0.0)),
            mix_mode=d.get("mix_mode", "poisson_then_additive"),
        )
        return cls(
            scale_s=int(d.get("scale", 2)),
            psf_sigma=d.get("psf_sigma"),
            psf_radius=d.get("psf_radius"),
            lanczos_lobes=int(d.get("lanczos_lobes", 3)),
            noise=noise,
            seed=d.get("seed"),
        )


class DegradationOperator:
    """Precomputed ``d o h o w`` for one HQ flow field.

    Works on arrays whose last two axes are ``(H, W)``; ``adjoint`` is the
    exact transpose of ``forward``.
    """

    def __init__(self, flow_hq, cfg, hq_shape=None):
        h, w = flow_hq.shape if hq_shape is None else hq_shape
        if flow_hq.shape != (h, w):
            raise ShapeMismatch(f"flow {flow_hq.shape} does not match HQ size {(h, w)}")
        s = int(cfg.scale_s)
        if h % s or w % s:
            raise DimNotDivisible(f"HQ size {h}x{w} is not divisible by scale {s}")
        self.cfg = cfg
        self.hq_shape = (h, w)
        self.lq_shape = (h // s, w // s)
        self.identity_warp = not (np.any(flow_hq.u) or np.any(flow_hq.v))
        self.taps = None if self.identity_warp else _taps(h, w, flow_hq.u, flow_hq.v, "replicate")
        self.kernel = cfg.psf_kernel()
        self.mh = lanczos_weights(h, h // s, cfg.lanczos_lobes)
        self.mw = lanczos_weights(w, w // s, cfg.lanczos_lobes)

    def _check(self, data, shape):
        if data.shape[-2:] != shape:
            raise ShapeMismatch(f"expected spatial size {shape}, got {data.shape[-2:]}")

    def forward(self, y):
        self._check(y, self.hq_shape)
        x = y if self.taps is None else _apply_taps(y, self.taps)
        if self.kernel is not None:
            x = convolve2d(x, self.kernel)
        return self.mh @ x @ self.mw.T

    def adjoint(self, g):
        self._check(g, self.lq_shape)
        x = self.mh.T @ g @ self.mw
        if self.kernel is not None:
            x = convolve2d_adjoint(x, self.kernel)
        return x if self.taps is None else _apply_taps_adjoint(x, self.taps)

    def apply(self, y):
        """Differentiable forward on a :class:`Tensor`."""
        self._check(y.data, self.hq_shape)
        return ad.linear_map(y, self.forward, self.adjoint)


def apply_forward(y, flow_hq, cfg):
    """Noiseless degraded LQ image, clamped to [0, 1]."""
    y = np.asarray(y, dtype=np.float64)
    op = DegradationOperator(flow_hq, cfg, y.shape[-2:])
    return np.clip(op.forward(y), 0.0, 1.0)


def apply_forward_diff(y, flow_hq, cfg):
    """Differentiable, unclamped :func:`apply_forward`."""
    return DegradationOperator(flow_hq, cfg, y.shape[-2:]).apply(y)


def add_noise(img, noise, rng):
    """Draw ``x = f(y) + eta`` with the configured Gaussian/Poisson mixture."""
    img = np.asarray(img, dtype=np.float64)
    if noise.is_noiseless:
        return img.copy()

    def shot(x):
        if noise.poisson_peak == 0:
            return x
        return rng.poisson(noise.poisson_peak * np.maximum(x, 0.0)) / noise.poisson_peak

    def read(x):
        if noise.sigma_eta == 0:
            return x
        return x + noise.sigma_eta * rng.standard_normal(x.shape)

    if noise.mix_mode == "poisson_then_additive":
        out = read(shot(img))
    else:
        out = shot(read(img))
    return np.clip(out, 0.0, 1.0)


def backprojection_loss_ops(y, frames, operators):
    """``sum_k ||op_k(y) - x_k||^2`` with prebuilt operators, k ascending."""
    if len(frames) != len(operators):
        raise LengthMismatch(f"{len(frames)} frames but {len(operators)} operators")
    if not frames:
        raise LengthMismatch("at least one frame is required")
    total = None
    for x, op in zip(frames, operators):
        x = np.asarray(x, dtype=np.float64)
        pred = op.apply(y)
        if pred.shape[-x.ndim:] != x.shape:
            raise ShapeMismatch(f"degraded estimate {pred.shape} does not match frame {x.shape}")
        term = ad.mse_sum(pred, x)
        total = term if total is None else ad.add(total, term)
    return total


def backprojection_loss(y, frames, flows_hq, cfg):
    """Sum of squared residuals between every degraded ``y`` and its frame."""
    if len(frames) != len(flows_hq):
        raise LengthMismatch(f"{len(frames)} frames but {len(flows_hq)} flows")
    if not isinstance(y, ad.Tensor):
        y = ad.Tensor(y)
    hq = y.shape[-2:]
    for f in flows_hq:
        if not isinstance(f, FlowField) or f.shape != hq:
            raise ShapeMismatch("every flow must be a FlowField at the HQ size")
    ops = [DegradationOperator(f, cfg, hq) for f in flows_hq]
    return backprojection_loss_ops(y, frames, ops)
