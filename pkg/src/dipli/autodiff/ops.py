"""Differentiable layers needed by the U-Net generator and the data loss.

All tensors are ``(N, C, H, W)`` unless noted otherwise.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..core.filters import bilinear_weights
from ..errors import OddSpatialDims, ShapeMismatch
from .tensor import Tensor, record

__all__ = [
    "conv2d",
    "instance_norm",
    "relu",
    "sigmoid",
    "avg_pool2",
    "max_pool2",
    "upsample_bilinear2",
    "dropout",
    "concat_channels",
    "mse_sum",
]


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor
        Input of shape ``(N, C, H, W)``.
    w : Tensor
        Weights of shape ``(O, C, kh, kw)``.
    b : Tensor, optional
        Bias of shape ``(O,)``.
    stride, pad : int
        Spatial stride and symmetric zero padding.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeMismatch(f"conv2d expects rank-4 input and weights, got {xd.shape}, {wd.shape}")
    c = xd.shape[1]
    o, cw, kh, kw = wd.shape
    if c != cw:
        raise ShapeMismatch(f"conv2d channel mismatch: input has {c}, weights expect {cw}")
    if b is not None and b.shape != (o,):
        raise ShapeMismatch(f"conv2d bias must have shape ({o},), got {b.shape}")
    if xd.shape[2] + 2 * pad < kh or xd.shape[3] + 2 * pad < kw:
        raise ShapeMismatch("conv2d kernel larger than padded input")
    if stride == 1:
        return _conv2d_flat(x, w, b, pad)
    return _conv2d_strided(x, w, b, stride, pad)


def _conv2d_flat(x, w, b, pad):
    # Stride-1 path. With the padded image flattened row-major, every kernel
    # tap is a contiguous slice; output rows carry (wp - wo) junk columns.
    xd, wd = x.data, w.data
    n, c, h, wdt = xd.shape
    o, _, kh, kw = wd.shape
    hp, wp = h + 2 * pad, wdt + 2 * pad
    ho, wo = hp - kh + 1, wp - kw + 1
    span = (ho - 1) * wp + wo
    offsets = [i * wp + j for i in range(kh) for j in range(kw)]
    if pad:
        xp = np.zeros((n, c, hp, wp))
        xp[:, :, pad:pad + h, pad:pad + wdt] = xd
    else:
        xp = xd
    xf = xp.reshape(n, c, hp * wp)
    if len(offsets) == 1 and span == hp * wp:
        cols = xf                      # 1x1 kernel without padding: no copy needed
    else:
        cols = np.empty((n, kh * kw, c, span))
        for k, off in enumerate(offsets):
            cols[:, k] = xf[:, :, off:off + span]
        cols = cols.reshape(n, kh * kw * c, span)
    # weight rows ordered (tap, channel) to match cols
    w2 = wd.transpose(0, 2, 3, 1).reshape(o, -1)
    ext = np.matmul(w2, cols)
    if b is not None:
        ext += b.data[None, :, None]
    out = np.empty((n, o, ho, wo))
    full = np.empty((n, o, ho * wp))
    full[:, :, :span] = ext
    out[:] = full.reshape(n, o, ho, wp)[:, :, :, :wo]

    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        gext = np.zeros((n, o, ho, wp))
        gext[:, :, :, :wo] = g
        gext = gext.reshape(n, o, ho * wp)[:, :, :span]
        gx = gw = gb = None
        if w.requires_grad:
            gw2 = gext[0] @ cols[0].T
            for i in range(1, n):
                gw2 += gext[i] @ cols[i].T
            gw = gw2.reshape(o, kh, kw, c).transpose(0, 3, 1, 2).copy()
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.matmul(w2.T, gext).reshape(n, kh * kw, c, span)
            dxf = np.zeros((n, c, hp * wp))
            for k, off in enumerate(offsets):
                dxf[:, :, off:off + span] += dcols[:, k]
            dxp = dxf.reshape(n, c, hp, wp)
            gx = dxp[:, :, pad:pad + h, pad:pad + wdt].copy() if pad else dxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return record(out, inputs, vjp)


def _conv2d_strided(x, w, b, stride, pad):
    xd, wd = x.data, w.data
    n, c, h, wdt = xd.shape
    o, _, kh, kw = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    hp, wp = xp.shape[2:]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (N, C, ho, wo, kh, kw) -> (N, C*kh*kw, ho*wo); row order matches w.reshape(O, -1)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    w2 = wd.reshape(o, -1)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(n, o, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = sum(g2[i] @ cols[i].T for i in range(n)).reshape(wd.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, pad:pad + h, pad:pad + wdt] if pad else dxp
        return (gx, gw) if b is None else (gx, gw, gb)

    return record(out, inputs, vjp)


def instance_norm(x, gamma, beta, eps=1e-5):
    """Per-sample, per-channel normalization over the spatial axes."""
    xd = x.data
    if xd.ndim != 4:
        raise ShapeMismatch(f"instance_norm expects a rank-4 tensor, got {xd.shape}")
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"instance_norm affine parameters must have shape ({c},)")
    n, c, h, w = xd.shape
    m = h * w
    flat = xd.reshape(n, c, m)
    mu = flat.mean(axis=2, keepdims=True)
    xc = flat - mu
    var = np.einsum("ncm,ncm->nc", xc, xc)[..., None] / m
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None]
    out = (xhat * gd + beta.data[None, :, None]).reshape(xd.shape)

    def vjp(g):
        g = g.reshape(n, c, m)
        gx = None
        # per-sample, per-channel sums of g and g * xhat
        sg = g.sum(axis=2)
        sgx = np.einsum("ncm,ncm->nc", g, xhat)
        ggamma = sgx.sum(axis=0) if gamma.requires_grad else None
        gbeta = sg.sum(axis=0) if beta.requires_grad else None
        if x.requires_grad:
            # d xhat = g * gamma, so its sums are gamma * sg and gamma * sgx
            k = inv * gd
            gx = (k * (g - (sg[..., None] + xhat * sgx[..., None]) / m)).reshape(xd.shape)
        return gx, ggamma, gbeta

    return record(out, (x, gamma, beta), vjp)


def relu(x):
    mask = x.data > 0
    return record(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = expit(x.data)
    return record(out, (x,), lambda g: (g * out * (1.0 - out),))


def _check_even(xd):
    if xd.ndim != 4:
        raise ShapeMismatch(f"pooling expects a rank-4 tensor, got {xd.shape}")
    h, w = xd.shape[2:]
    if h % 2 or w % 2:
        raise OddSpatialDims(f"2x2 pooling needs even spatial dims, got {h}x{w}")


def avg_pool2(x):
    """Non-overlapping 2x2 mean pooling."""
    xd = x.data
    _check_even(xd)
    n, c, h, w = xd.shape
    out = xd.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return record(out, (x,), vjp)


def max_pool2(x):
    """Non-overlapping 2x2 max pooling; ties route the gradient to the first max."""
    xd = x.data
    _check_even(xd)
    n, c, h, w = xd.shape
    blocks = xd.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return record(out, (x,), vjp)


def upsample_bilinear2(x):
    """Double the spatial size by bilinear interpolation (half-pixel aligned)."""
    xd = x.data
    h, w = xd.shape[-2:]
    uh = bilinear_weights(h, 2 * h)
    uw = bilinear_weights(w, 2 * w)
    out = uh @ xd @ uw.T
    return record(out, (x,), lambda g: (uh.T @ g @ uw,))


def dropout(x, p, train, rng):
    """Inverted dropout: zero with probability ``p``, rescale survivors."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    # single-precision uniforms are plenty for a Bernoulli mask and twice as cheap
    mask = (rng.random(x.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))
    return record(x.data * mask, (x,), lambda g: (g * mask,))


def concat_channels(a, b):
    ad, bd = a.data, b.data
    if ad.ndim != 4 or bd.ndim != 4 or ad.shape[0] != bd.shape[0] or ad.shape[2:] != bd.shape[2:]:
        raise ShapeMismatch(f"cannot concatenate {ad.shape} and {bd.shape} along channels")
    ca = ad.shape[1]
    out = np.concatenate([ad, bd], axis=1)
    return record(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def mse_sum(pred, target):
    """Sum of squared differences between ``pred`` and a constant ``target``.

    A target lacking the leading batch axis of a single-sample ``pred`` is
    accepted.
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        if pred.ndim == t.ndim + 1 and pred.shape[0] == 1 and pred.shape[1:] == t.shape:
            t = t[None]
        else:
            raise ShapeMismatch(f"mse_sum shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.data - t
    return record(np.sum(diff * diff), (pred,), lambda g: (2.0 * g * diff,))
