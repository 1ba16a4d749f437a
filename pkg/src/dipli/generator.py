"""Untrained U-Net prior mapping a fixed latent code to the HQ image.

Layout for ``stages=S``, constant ``width=W``:

* encoder stage i: ``[conv3x3 -> inst-norm -> ReLU -> dropout] x 2``, the
  result is kept as skip i, then 2x2 average pooling;
* bottleneck: the same double block;
* decoder stage i (deepest first): bilinear x2 upsampling, channel concat with
  skip i, 1x1 projection conv (2W -> W), double block;
* head: ``log2(s)`` times ``[bilinear x2 -> conv3x3 -> ReLU]``, then a
  final conv3x3 to ``out_channels`` and a sigmoid.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import BadDims, InvalidConfig

__all__ = [
    "UNetConfig",
    "Generator",
    "build_unet",
    "forward",
    "sample_latent",
    "perturb_latent",
    "DESK_WIDTH",
    "PAPER_WIDTH",
]

PAPER_WIDTH = 128
DESK_WIDTH = 16


@dataclass(frozen=True)
class UNetConfig:
    stages: int = 4
    width: int = PAPER_WIDTH
    latent_channels: int = 32
    dropout_p: float = 0.05
    scale_s: int = 2
    out_channels: int = 1
    pooling: str = "avg"

    def __post_init__(self):
        if self.stages < 1:
            raise InvalidConfig("stages must be >= 1")
        if self.width < 1 or self.latent_channels < 1:
            raise InvalidConfig("width and latent_channels must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig("dropout_p must be in [0, 1)")
        if self.scale_s < 1 or self.scale_s & (self.scale_s - 1):
            raise InvalidConfig(f"scale_s must be a power of two, got {self.scale_s}")
        if self.out_channels not in (1, 3):
            raise InvalidConfig("out_channels must be 1 or 3")
        if self.pooling not in ("avg", "max"):
            raise InvalidConfig("pooling must be 'avg' or 'max'")

    @property
    def head_steps(self):
        return int(self.scale_s).bit_length() - 1

    def to_dict(self):
        return asdict(self)


class Generator:
    """U-Net parameters ``theta`` plus the configuration that shapes them."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    def parameters(self):
        return list(self.params.values())

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) ^ set(state)
        if missing:
            raise InvalidConfig(f"state dict keys do not match the architecture: {sorted(missing)}")
        for k, p in self.params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise InvalidConfig(f"parameter {k}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def _he_conv(rng, c_out, c_in, k):
    std = np.sqrt(2.0 / (c_in * k * k))
    return rng.normal(0.0, std, size=(c_out, c_in, k, k))


def build_unet(cfg, rng):
    """Draw initial parameters: He-normal conv weights, zero biases, unit norms."""
    params = {}

    def conv(name, c_in, c_out, k=3):
        params[f"{name}.weight"] = ad.Tensor(_he_conv(rng, c_out, c_in, k), requires_grad=True, name=f"{name}.weight")
        params[f"{name}.bias"] = ad.Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.bias")

    def norm(name, c):
        params[f"{name}.gamma"] = ad.Tensor(np.ones(c), requires_grad=True, name=f"{name}.gamma")
        params[f"{name}.beta"] = ad.Tensor(np.zeros(c), requires_grad=True, name=f"{name}.beta")

    def block(name, c_in, c_out):
        conv(f"{name}.conv0", c_in, c_out)
        norm(f"{name}.norm0", c_out)
        conv(f"{name}.conv1", c_out, c_out)
        norm(f"{name}.norm1", c_out)

    w = cfg.width
    for i in range(cfg.stages):
        block(f"enc{i}", cfg.latent_channels if i == 0 else w, w)
    block("mid", w, w)
    for i in reversed(range(cfg.stages)):
        conv(f"dec{i}.proj", 2 * w, w, k=1)
        block(f"dec{i}", w, w)
    for j in range(cfg.head_steps):
        conv(f"head{j}", w, w)
    conv("out", w, cfg.out_channels)
    return Generator(cfg, params)


def _check_latent_dims(h, w, cfg):
    m = 2 ** cfg.stages
    if h % m or w % m or h < m or w < m:
        raise BadDims(f"latent spatial dims {h}x{w} must be positive multiples of {m}")


def sample_latent(h, w, cfg, rng):
    """Fixed latent code ``z ~ N(0, I)`` of shape ``(1, latent_channels, h, w)``."""
    _check_latent_dims(h, w, cfg)
    return ad.Tensor(rng.standard_normal((1, cfg.latent_channels, h, w)))


def perturb_latent(z, sigma_z, rng):
    """Return ``z + N(0, sigma_z^2)`` without touching ``z``."""
    if sigma_z < 0:
        raise ValueError("sigma_z must be non-negative")
    zd = z.data if isinstance(z, ad.Tensor) else np.asarray(z, dtype=np.float64)
    if sigma_z == 0:
        return ad.Tensor(zd.copy())
    return ad.Tensor(zd + sigma_z * rng.standard_normal(zd.shape))


def forward(g, z, train=True, rng=None):
    """Evaluate ``G_theta(z)``.

    Returns a tensor of shape ``(1, out_channels, s*h, s*w)`` with values in
    (0, 1). Dropout is active when ``train`` is true and then requires
    ``rng``.
    """
    cfg = g.config
    p = g.params
    if z.ndim != 4 or z.shape[1] != cfg.latent_channels:
        raise BadDims(f"latent must have shape (N, {cfg.latent_channels}, h, w), got {z.shape}")
    _check_latent_dims(z.shape[2], z.shape[3], cfg)
    use_dropout = train and cfg.dropout_p > 0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    pool = ad.avg_pool2 if cfg.pooling == "avg" else ad.max_pool2

    def cbr(x, name):
        x = ad.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], pad=1)
        return x

    def block(x, name):
        for j in range(2):
            x = cbr(x, f"{name}.conv{j}")
            x = ad.instance_norm(x, p[f"{name}.norm{j}.gamma"], p[f"{name}.norm{j}.beta"])
            x = ad.relu(x)
            if use_dropout:
                x = ad.dropout(x, cfg.dropout_p, True, rng)
        return x

    x = z
    skips = []
    for i in range(cfg.stages):
        x = block(x, f"enc{i}")
        skips.append(x)
        x = pool(x)
    x = block(x, "mid")
    for i in reversed(range(cfg.stages)):
        x = ad.upsample_bilinear2(x)
        x = ad.concat_channels(x, skips[i])
        x = ad.conv2d(x, p[f"dec{i}.proj.weight"], p[f"dec{i}.proj.bias"])
        x = block(x, f"dec{i}")
    for j in range(cfg.head_steps):
        x = ad.upsample_bilinear2(x)
        x = ad.relu(cbr(x, f"head{j}"))
    x = cbr(x, "out")
    return ad.sigmoid(x)
