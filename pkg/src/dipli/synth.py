"""Synthetic scenes: ground truth plus K degraded LQ frames with known flows.

The generator here is invented plumbing; it stands in for planetary
recordings and makes ground truth available for every metric.
"""

from dataclasses import dataclass, field

import numpy as np

from .core.seeding import stream_rng
from .degrade import DegradationConfig, add_noise, apply_forward
from .errors import DimNotDivisible, InvalidConfig, TooSmall
from .flow import FlowField, upscale_flow, warp_bilinear

__all__ = [
    "SceneSpec",
    "Scene",
    "random_smooth_flow",
    "generate_scene",
    "make_test_pattern",
    "PATTERNS",
    "grid_line_positions",
]

PATTERNS = ("disk", "craters", "grid", "blobs")


def _align_corners(n_in, n_out):
    # linear interpolation matrix mapping the end points onto each other
    if n_in == 1:
        return np.ones((n_out, 1))
    pos = np.linspace(0.0, n_in - 1, n_out)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] = 1.0 - frac
    m[np.arange(n_out), i0 + 1] += frac
    return m


def random_smooth_flow(h, w, amp_px, cells, rng):
    """Smooth random field from a ``cells x cells`` grid of U(-amp, amp) draws.

    The grid is interpolated bilinearly with corners aligned, so each
    component stays within ``[-amp, amp]``.
    """
    if cells < 2:
        raise InvalidConfig("cells must be >= 2")
    if amp_px < 0:
        raise InvalidConfig("amp_px must be >= 0")
    if amp_px == 0:
        return FlowField.zeros(h, w)
    gu = rng.uniform(-amp_px, amp_px, size=(cells, cells))
    gv = rng.uniform(-amp_px, amp_px, size=(cells, cells))
    mh = _align_corners(cells, h)
    mw = _align_corners(cells, w)
    return FlowField(mh @ gu @ mw.T, mh @ gv @ mw.T)


@dataclass
class SceneSpec:
    """Recipe for a synthetic stack.

    ``jitter_px`` and ``warp_amp_px`` are in LQ pixels.
    """

    gt: np.ndarray
    K: int = 7
    jitter_px: float = 1.5
    warp_amp_px: float = 1.0
    warp_cells: int = 4
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    seed: int = 0

    def __post_init__(self):
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.gt.ndim == 2:
            self.gt = self.gt[None]
        if self.K < 1:
            raise InvalidConfig("K must be >= 1")
        if self.jitter_px < 0 or self.warp_amp_px < 0:
            raise InvalidConfig("distortion amplitudes must be >= 0")


@dataclass
class Scene:
    gt: np.ndarray
    frames: list
    true_flows_lq: list
    pivot_true: int

    @property
    def K(self):
        return len(self.frames)

    @property
    def scale(self):
        return self.gt.shape[-1] // self.frames[0].shape[-1]

    def reference(self, k):
        """HQ scene in the geometry of frame ``k``.

        This is the intermediate ``warp(gt, flow_k)`` that the simulator
        degraded into frame ``k``; it equals ``gt`` for the true pivot. A
        reconstruction anchored on frame ``k`` should be scored against it.
        """
        if k == self.pivot_true:
            return self.gt.copy()
        return warp_bilinear(self.gt, upscale_flow(self.true_flows_lq[k], self.scale))


def generate_scene(spec):
    """Degrade ``spec.gt`` into ``K`` frames.

    Each frame gets a global U(-jitter, jitter) translation plus a smooth
    random field. The least distorted draw is declared the pivot and every
    flow is re-expressed relative to it, so the pivot's flow is exactly zero
    and the ground truth shares the pivot's geometry. ``true_flows_lq[k]``
    satisfies ``frame_k ~ warp(pivot, true_flows_lq[k])``.
    """
    deg = spec.degradation
    s = int(deg.scale_s)
    _, H, W = spec.gt.shape
    if H % s or W % s:
        raise DimNotDivisible(f"ground truth {H}x{W} is not divisible by scale {s}")
    h, w = H // s, W // s
    flow_rng = stream_rng(spec.seed, "flows")
    noise_seed = spec.seed if deg.seed is None else deg.seed
    noise_rng = stream_rng(noise_seed, "noise")

    raw = []
    for _ in range(spec.K):
        du, dv = flow_rng.uniform(-spec.jitter_px, spec.jitter_px, size=2) if spec.jitter_px > 0 else (0.0, 0.0)
        smooth = random_smooth_flow(h, w, spec.warp_amp_px, spec.warp_cells, flow_rng)
        raw.append(FlowField(smooth.u + du, smooth.v + dv))
    pivot = int(np.argmin([f.magnitude().mean() for f in raw]))
    ref = raw[pivot]
    flows = [FlowField(f.u - ref.u, f.v - ref.v) for f in raw]
    flows[pivot] = FlowField.zeros(h, w)

    frames = []
    for f in flows:
        clean = apply_forward(spec.gt, upscale_flow(f, s), deg)
        frames.append(add_noise(clean, deg.noise, noise_rng))
    return Scene(gt=spec.gt.copy(), frames=frames, true_flows_lq=flows, pivot_true=pivot)


# ---------------------------------------------------------------------------
# procedural patterns


def _supersampled_grid(h, w, ss=4):
    off = (np.arange(ss) + 0.5) / ss - 0.5
    ys = (np.arange(h)[:, None] + off[None, :]).ravel()
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    return np.meshgrid(ys, xs, indexing="ij")


def _box_down(img, ss):
    h, w = img.shape
    return img.reshape(h // ss, ss, w // ss, ss).mean(axis=(1, 3))


def _disk(h, w, ss=4):
    yy, xx = _supersampled_grid(h, w, ss)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = 0.4 * min(h, w)
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2
    mu = np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    # linear limb darkening: bright centre, dimmer rim
    inside = 0.25 + 0.7 * (0.4 + 0.6 * mu)
    img = np.where(r2 <= 1.0, inside, 0.05)
    return _box_down(img, ss)


def _craters(h, w, rng):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w), 0.55)
    n = max(8, (h * w) // 160)
    for _ in range(n):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        rad = rng.uniform(1.5, max(2.0, min(h, w) / 10.0))
        depth = rng.uniform(0.1, 0.35)
        r = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
        img -= depth * np.exp(-0.5 * (r / rad) ** 2)
        img += 0.6 * depth * np.exp(-0.5 * ((r - 1.6 * rad) / (0.45 * rad)) ** 2)
    img += 0.08 * np.sin(2 * np.pi * xs / rng.uniform(6, 14)) * np.cos(2 * np.pi * ys / rng.uniform(6, 14))
    # headroom for resampling overshoot, so clamped synthetic frames stay exact
    return 0.05 + 0.9 * np.clip(img, 0.0, 1.0)


def grid_line_positions(n):
    """Line indices used by the ``grid`` pattern along an axis of length ``n``."""
    period = max(4, n // 8)
    return np.arange(period // 2, n, period)


def _grid(h, w):
    img = np.full((h, w), 0.2)
    img[grid_line_positions(h), :] = 0.9
    img[:, grid_line_positions(w)] = 0.9
    return img


def _blobs(h, w, rng):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    for _ in range(max(6, (h * w) // 256)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sig = rng.uniform(1.5, max(2.0, min(h, w) / 8.0))
        img += rng.uniform(0.3, 1.0) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sig * sig))
    return 0.05 + 0.9 * img / img.max()


def make_test_pattern(kind, h, w, seed=0):
    """Grayscale ``(1, h, w)`` procedural pattern in [0, 1]."""
    if kind not in PATTERNS:
        raise InvalidConfig(f"unknown pattern {kind!r}; choose from {PATTERNS}")
    if h < 16 or w < 16:
        raise TooSmall(f"patterns need at least 16x16 pixels, got {h}x{w}")
    rng = stream_rng(seed, "pattern")
    if kind == "disk":
        img = _disk(h, w)
    elif kind == "craters":
        img = _craters(h, w, rng)
    elif kind == "grid":
        img = _grid(h, w)
    else:
        img = _blobs(h, w, rng)
    return img[None]
