"""Motion estimation and backward warping.

Flow convention
---------------
A :class:`FlowField` stores per-pixel displacements ``u`` (columns, x) and
``v`` (rows, y) in pixels. Warping is *backward*: ``warp_bilinear(img, f)``
samples ``img`` at ``p + f(p)``. Estimators return the flow that warps the
``source`` image onto the ``target`` geometry, i.e.
``warp_bilinear(source, estimate(target, source)) ~ target``.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from . import autodiff as ad
from .core.filters import bilinear_resize, convolve2d, gaussian_kernel, luminance
from .core.metrics import mae
from .errors import CorruptHeader, IoFailure, ShapeMismatch, TooSmallForPyramid, TruncatedData, ZeroMass

__all__ = [
    "FlowField",
    "TvL1Params",
    "estimate_flow_tvl1",
    "warp_bilinear",
    "warp_bilinear_diff",
    "centroid_shift",
    "upscale_flow",
    "alignment_mae",
    "write_flo",
    "read_flo",
    "flow_magnitude_image",
    "MIN_PYRAMID_SIZE",
]

MIN_PYRAMID_SIZE = 8
_FLO_MAGIC = b"FLO1"


@dataclass
class FlowField:
    """Dense displacement field; ``u`` is horizontal, ``v`` vertical."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape != self.v.shape:
            raise ShapeMismatch(f"flow components must be equal 2-D arrays, got {self.u.shape}, {self.v.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("flow contains non-finite displacements")

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def constant(cls, height, width, u, v):
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @property
    def shape(self):
        return self.u.shape

    @property
    def height(self):
        return self.u.shape[0]

    @property
    def width(self):
        return self.u.shape[1]

    def magnitude(self):
        return np.hypot(self.u, self.v)

    def endpoint_error(self, other):
        """Mean Euclidean distance to ``other``."""
        if other.shape != self.shape:
            raise ShapeMismatch(f"flow shapes differ: {self.shape} vs {other.shape}")
        return float(np.mean(np.hypot(self.u - other.u, self.v - other.v)))

    def copy(self):
        return FlowField(self.u.copy(), self.v.copy())

    def __add__(self, other):
        return FlowField(self.u + other.u, self.v + other.v)


@dataclass(frozen=True)
class TvL1Params:
    """Tunables for the coarse-to-fine duality-based TV-L1 solver.

    ``lambda_data`` weighs the L1 data term for intensities rescaled to
    [0, 255] (both images are jointly normalized before solving).
    ``n_scales=None`` picks the deepest pyramid, up to five levels, whose
    coarsest level is still at least 8 pixels on its short side.
    """

    lambda_data: float = 0.15
    theta: float = 0.3
    tau: float = 0.25
    n_scales: int | None = None
    zoom: float = 0.5
    n_warps: int = 5
    n_iters: int = 50
    stop_eps: float = 0.01
    median_size: int = 5

    def __post_init__(self):
        for name in ("lambda_data", "theta", "tau", "stop_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.zoom < 1.0:
            raise ValueError("zoom must lie in (0, 1)")
        if self.n_warps < 1 or self.n_iters < 1:
            raise ValueError("n_warps and n_iters must be >= 1")
        if self.n_scales is not None and self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# warping


def _taps(h, w, u, v, boundary):
    """Flat gather indices and weights of the four bilinear taps."""
    if boundary not in ("replicate", "zero"):
        raise ValueError(f"unknown boundary {boundary!r}")
    ys, xs = np.mgrid[0:h, 0:w]
    x = xs + u
    y = ys + v
    if boundary == "replicate":
        x = np.clip(x, 0.0, w - 1)
        y = np.clip(y, 0.0, h - 1)
        x0 = np.minimum(np.floor(x), max(w - 2, 0)).astype(np.intp)
        y0 = np.minimum(np.floor(y), max(h - 2, 0)).astype(np.intp)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        valid = None
    else:
        x0 = np.floor(x).astype(np.intp)
        y0 = np.floor(y).astype(np.intp)
        x1 = x0 + 1
        y1 = y0 + 1
        fx = x - x0
        fy = y - y0
        valid = [
            (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
        ]
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
        x0, x1, y0, y1 = x0c, x1c, y0c, y1c
    idx = [(y0 * w + x0).ravel(), (y0 * w + x1).ravel(), (y1 * w + x0).ravel(), (y1 * w + x1).ravel()]
    wts = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx]
    if valid is not None:
        wts = [wt * m for wt, m in zip(wts, valid)]
    return idx, [wt.ravel() for wt in wts]


def _apply_taps(data, taps):
    idx, wts = taps
    lead = data.shape[:-2]
    flat = data.reshape(lead + (-1,))
    out = wts[0] * flat[..., idx[0]]
    for i, wt in zip(idx[1:], wts[1:]):
        out = out + wt * flat[..., i]
    return out.reshape(data.shape)


def _apply_taps_adjoint(grad, taps):
    idx, wts = taps
    shape = grad.shape
    hw = shape[-2] * shape[-1]
    g = grad.reshape(-1, hw)
    nrows = g.shape[0]
    base = (np.arange(nrows) * hw)[:, None]
    out = np.zeros(nrows * hw)
    for i, wt in zip(idx, wts):
        out += np.bincount((base + i[None, :]).ravel(), weights=(g * wt[None, :]).ravel(), minlength=nrows * hw)
    return out.reshape(shape)


def _check_flow_shape(data, flow):
    if data.shape[-2:] != flow.shape:
        raise ShapeMismatch(f"image {data.shape[-2:]} and flow {flow.shape} differ in size")


def warp_bilinear(img, flow, boundary="replicate"):
    """Backward-warp ``img`` (``(..., H, W)``): ``out(p) = img(p + flow(p))``.

    With ``replicate`` the sampling position is clamped to the image; with
    ``zero`` taps outside the image contribute nothing.
    """
    img = np.asarray(img, dtype=np.float64)
    _check_flow_shape(img, flow)
    h, w = flow.shape
    return _apply_taps(img, _taps(h, w, flow.u, flow.v, boundary))


def warp_bilinear_diff(x, flow, boundary="replicate"):
    """Differentiable :func:`warp_bilinear` on a :class:`Tensor`.

    The flow is a constant; gradients scatter back through the bilinear
    weights.
    """
    _check_flow_shape(x.data, flow)
    h, w = flow.shape
    taps = _taps(h, w, flow.u, flow.v, boundary)
    return ad.linear_map(x, lambda d: _apply_taps(d, taps), lambda g: _apply_taps_adjoint(g, taps))


# ---------------------------------------------------------------------------
# simple estimators and helpers


def centroid_shift(target, source):
    """Constant flow equal to ``centroid(source) - centroid(target)``."""
    t = luminance(target)
    s = luminance(source)
    if t.shape != s.shape:
        raise ShapeMismatch(f"shape mismatch: {t.shape} vs {s.shape}")
    h, w = t.shape
    ys, xs = np.mgrid[0:h, 0:w]
    out = []
    for img, label in ((s, "source"), (t, "target")):
        mass = img.sum()
        if not mass > 0:
            raise ZeroMass(f"{label} image has no positive total intensity")
        out.append(((xs * img).sum() / mass, (ys * img).sum() / mass))
    (sx, sy), (tx, ty) = out
    return FlowField.constant(h, w, sx - tx, sy - ty)


def upscale_flow(flow, s):
    """Resize a flow to ``s`` times its resolution, scaling displacements by ``s``."""
    s = int(s)
    if s < 1:
        raise ValueError("scale factor must be >= 1")
    if s == 1:
        return flow.copy()
    h, w = flow.shape
    return FlowField(bilinear_resize(flow.u, s * h, s * w) * s, bilinear_resize(flow.v, s * h, s * w) * s)


def alignment_mae(target, source, flow):
    """Mean absolute error between the warped source and the target."""
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if target.shape != source.shape:
        raise ShapeMismatch(f"shape mismatch: {target.shape} vs {source.shape}")
    return mae(warp_bilinear(source, flow), target)


# ---------------------------------------------------------------------------
# TV-L1


def _centered_gradient(img):
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def _forward_gradient(f):
    fx = np.zeros_like(f)
    fy = np.zeros_like(f)
    fx[:, :-1] = f[:, 1:] - f[:, :-1]
    fy[:-1, :] = f[1:, :] - f[:-1, :]
    return fx, fy


def _divergence(p1, p2):
    # negative adjoint of _forward_gradient
    div = np.zeros_like(p1)
    div[:, 0] = p1[:, 0]
    div[:, 1:-1] = p1[:, 1:-1] - p1[:, :-2]
    div[:, -1] = -p1[:, -2] if p1.shape[1] > 1 else 0.0
    div[0, :] += p2[0, :]
    div[1:-1, :] += p2[1:-1, :] - p2[:-2, :]
    if p2.shape[0] > 1:
        div[-1, :] -= p2[-2, :]
    return div


def _level_sizes(h, w, params):
    if min(h, w) < MIN_PYRAMID_SIZE:
        raise TooSmallForPyramid(f"images of {h}x{w} are smaller than the {MIN_PYRAMID_SIZE}px minimum")
    sizes = [(h, w)]
    limit = params.n_scales if params.n_scales is not None else 5
    while len(sizes) < limit:
        ph, pw = sizes[-1]
        nh, nw = int(round(ph * params.zoom)), int(round(pw * params.zoom))
        if min(nh, nw) < MIN_PYRAMID_SIZE:
            if params.n_scales is not None:
                raise TooSmallForPyramid(
                    f"{params.n_scales} pyramid levels at zoom {params.zoom} shrink {h}x{w} below "
                    f"{MIN_PYRAMID_SIZE}px")
            break
        sizes.append((nh, nw))
    return sizes


def _tvl1_level(i0, i1, u1, u2, params):
    h, w = i0.shape
    lt = params.lambda_data * params.theta
    taut = params.tau / params.theta
    p11 = np.zeros((h, w))
    p12 = np.zeros((h, w))
    p21 = np.zeros((h, w))
    p22 = np.zeros((h, w))
    gx, gy = _centered_gradient(i1)
    eps2 = params.stop_eps ** 2
    for _ in range(params.n_warps):
        taps = _taps(h, w, u1, u2, "replicate")
        i1w = _apply_taps(i1, taps)
        i1wx = _apply_taps(gx, taps)
        i1wy = _apply_taps(gy, taps)
        grad = i1wx * i1wx + i1wy * i1wy
        rho_c = i1w - i1wx * u1 - i1wy * u2 - i0
        safe = grad > 1e-10
        inv_grad = np.where(safe, 1.0 / np.where(safe, grad, 1.0), 0.0)
        for _ in range(params.n_iters):
            rho = rho_c + i1wx * u1 + i1wy * u2
            step = np.where(rho < -lt * grad, lt, np.where(rho > lt * grad, -lt, -rho * inv_grad))
            v1 = u1 + step * i1wx
            v2 = u2 + step * i1wy
            u1_old, u2_old = u1, u2
            u1 = v1 + params.theta * _divergence(p11, p12)
            u2 = v2 + params.theta * _divergence(p21, p22)
            err = np.mean((u1 - u1_old) ** 2 + (u2 - u2_old) ** 2)
            u1x, u1y = _forward_gradient(u1)
            u2x, u2y = _forward_gradient(u2)
            ng1 = 1.0 + taut * np.sqrt(u1x * u1x + u1y * u1y)
            ng2 = 1.0 + taut * np.sqrt(u2x * u2x + u2y * u2y)
            p11 = (p11 + taut * u1x) / ng1
            p12 = (p12 + taut * u1y) / ng1
            p21 = (p21 + taut * u2x) / ng2
            p22 = (p22 + taut * u2y) / ng2
            if err < eps2:
                break
        if params.median_size > 1:
            u1 = median_filter(u1, size=params.median_size, mode="nearest")
            u2 = median_filter(u2, size=params.median_size, mode="nearest")
    return u1, u2


def estimate_flow_tvl1(target, source, params=None):
    """Dense TV-L1 optical flow warping ``source`` onto ``target``.

    Coarse-to-fine primal-dual solver (Zach-Pock-Bischof scheme in the form
    popularized by Sanchez et al.) with several warps per level and median
    filtering of the flow after each warp.

    Parameters
    ----------
    target, source : ndarray
        Images of equal shape, ``(C, H, W)`` or ``(H, W)``; converted to
        luminance.
    params : TvL1Params, optional

    Returns
    -------
    FlowField
        Flow with ``warp_bilinear(source, flow) ~ target``.
    """
    params = TvL1Params() if params is None else params
    i0 = luminance(target)
    i1 = luminance(source)
    if i0.shape != i1.shape:
        raise ShapeMismatch(f"shape mismatch: {i0.shape} vs {i1.shape}")
    h, w = i0.shape
    sizes = _level_sizes(h, w, params)
    lo = min(i0.min(), i1.min())
    hi = max(i0.max(), i1.max())
    if hi - lo <= 0:
        return FlowField.zeros(h, w)
    i0 = 255.0 * (i0 - lo) / (hi - lo)
    i1 = 255.0 * (i1 - lo) / (hi - lo)

    sigma = 0.6 * np.sqrt(1.0 / params.zoom ** 2 - 1.0)
    blur = gaussian_kernel(sigma)
    pyr0, pyr1 = [i0], [i1]
    for nh, nw in sizes[1:]:
        pyr0.append(bilinear_resize(convolve2d(pyr0[-1], blur), nh, nw))
        pyr1.append(bilinear_resize(convolve2d(pyr1[-1], blur), nh, nw))

    ch, cw = sizes[-1]
    u1 = np.zeros((ch, cw))
    u2 = np.zeros((ch, cw))
    for level in reversed(range(len(sizes))):
        lh, lw = sizes[level]
        if u1.shape != (lh, lw):
            ph, pw = u1.shape
            u1 = bilinear_resize(u1, lh, lw) * (lw / pw)
            u2 = bilinear_resize(u2, lh, lw) * (lh / ph)
        u1, u2 = _tvl1_level(pyr0[level], pyr1[level], u1, u2, params)
    return FlowField(u1, u2)


# ---------------------------------------------------------------------------
# files


def write_flo(flow, path):
    """Write ``FLO1`` + H, W (u32 LE) + row-major float32 ``(u, v)`` pairs."""
    h, w = flow.shape
    payload = np.stack([flow.u, flow.v], axis=-1).astype("<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_FLO_MAGIC + struct.pack("<II", h, w) + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_flo(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if buf[:4] != _FLO_MAGIC:
        raise CorruptHeader("missing FLO1 magic", 0)
    if len(buf) < 12:
        raise TruncatedData("flow header is incomplete", len(buf))
    h, w = struct.unpack("<II", buf[4:12])
    need = 12 + 8 * h * w
    if len(buf) < need:
        raise TruncatedData(f"expected {need} bytes, found {len(buf)}", len(buf))
    data = np.frombuffer(buf, dtype="<f4", count=2 * h * w, offset=12).reshape(h, w, 2).astype(np.float64)
    return FlowField(data[..., 0].copy(), data[..., 1].copy())


def flow_magnitude_image(flow, max_magnitude=None):
    """Flow magnitude as a ``(1, H, W)`` image scaled to [0, 1]."""
    mag = flow.magnitude()
    top = float(mag.max()) if max_magnitude is None else float(max_magnitude)
    if top <= 0:
        return np.zeros((1,) + mag.shape)
    return np.clip(mag / top, 0.0, 1.0)[None]
