import numpy as np
import pytest

from dipli import autodiff as ad
from dipli.core import lanczos_resize
from dipli.degrade import (
    DegradationConfig,
    DegradationOperator,
    NoiseConfig,
    add_noise,
    apply_forward,
    apply_forward_diff,
    backprojection_loss,
)
from dipli.errors import DimNotDivisible, InvalidConfig, LengthMismatch, NonPositiveSigma, ShapeMismatch
from dipli.flow import FlowField
from dipli.synth import make_test_pattern, random_smooth_flow
from oracles import degrade_oracle


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_identity_configuration(rng):
    y = rng.random((1, 8, 8))
    cfg = DegradationConfig(scale_s=1, psf_sigma=0)
    np.testing.assert_array_equal(apply_forward(y, FlowField.zeros(8, 8), cfg), y)


def test_constant_image_preserved(rng):
    y = np.full((1, 16, 16), 0.42)
    flow = random_smooth_flow(16, 16, 2.0, 3, rng)
    out = apply_forward(y, flow, DegradationConfig(scale_s=2, psf_sigma=1.0))
    np.testing.assert_allclose(out, 0.42, atol=1e-14)


def test_composition_oracle():
    y = make_test_pattern("craters", 32, 32, seed=1)
    flow = FlowField.constant(32, 32, 2.0, 0.0)    # s * 1 px at HQ
    out = apply_forward(y, flow, DegradationConfig(scale_s=2, psf_sigma=1.0))
    ref = np.clip(degrade_oracle(y, flow.u, flow.v, 1.0, 2), 0, 1)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_composition_oracle_smooth_flow(rng):
    y = rng.random((1, 24, 24))
    flow = random_smooth_flow(24, 24, 3.0, 4, rng)
    op = DegradationOperator(flow, DegradationConfig(scale_s=4, psf_sigma=1.5))
    np.testing.assert_allclose(op.forward(y), degrade_oracle(y, flow.u, flow.v, 1.5, 4), atol=1e-12)


def test_default_psf_is_half_scale():
    cfg = DegradationConfig(scale_s=4)
    assert cfg.effective_psf_sigma == 2.0
    assert cfg.psf_kernel().shape == (13, 13)
    assert DegradationConfig(psf_sigma=0).psf_kernel() is None


def test_diff_matches_plain_and_is_linear(rng):
    y = rng.random((1, 1, 16, 16))
    flow = random_smooth_flow(16, 16, 1.5, 4, rng)
    cfg = DegradationConfig(scale_s=2)
    op = DegradationOperator(flow, cfg)
    out = apply_forward_diff(ad.Tensor(y), flow, cfg).data
    np.testing.assert_array_equal(out, op.forward(y))
    a, b = 0.7, -1.3
    y2 = rng.random(y.shape)
    lhs = op.forward(a * y + b * y2)
    rhs = a * op.forward(y) + b * op.forward(y2)
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_operator_adjoint(rng):
    flow = random_smooth_flow(16, 16, 2.0, 4, rng)
    op = DegradationOperator(flow, DegradationConfig(scale_s=2, psf_sigma=0.8))
    x = rng.random((2, 16, 16))
    g = rng.random((2, 8, 8))
    assert abs(np.sum(op.forward(x) * g) - np.sum(x * op.adjoint(g))) < 1e-11


def test_diff_gradcheck(rng):
    flow = random_smooth_flow(16, 16, 1.5, 4, rng)
    cfg = DegradationConfig(scale_s=2)
    probe = rng.standard_normal((1, 1, 8, 8))
    err = ad.grad_check(lambda t: ad.tsum(ad.mul(apply_forward_diff(t, flow, cfg), ad.Tensor(probe))),
                        ad.Tensor(rng.random((1, 1, 16, 16))), eps=1e-5)
    assert err < 1e-4


def test_dims_not_divisible():
    with pytest.raises(DimNotDivisible):
        apply_forward(np.zeros((1, 10, 10)), FlowField.zeros(10, 10), DegradationConfig(scale_s=4))
    with pytest.raises(InvalidConfig):
        DegradationConfig(scale_s=0)
    with pytest.raises(NonPositiveSigma):
        DegradationConfig(psf_sigma=-1)


def test_noise_identity_and_reproducible(rng):
    img = rng.random((1, 8, 8))
    np.testing.assert_array_equal(add_noise(img, NoiseConfig(), rng), img)
    n = NoiseConfig(0.05, 100)
    a = add_noise(img, n, np.random.default_rng(3))
    b = add_noise(img, n, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_gaussian_noise_std():
    img = np.full((1, 128, 128), 0.5)
    out = add_noise(img, NoiseConfig(sigma_eta=0.05), np.random.default_rng(0))
    assert 0.045 <= out.std() <= 0.055


def test_poisson_noise_variance():
    img = np.full((1, 256, 256), 0.5)
    out = add_noise(img, NoiseConfig(poisson_peak=100), np.random.default_rng(0))
    assert abs(out.var() / 0.005 - 1) < 0.15
    assert abs(out.mean() - 0.5) < 0.005


def test_mix_modes_differ():
    img = np.full((1, 32, 32), 0.3)
    a = add_noise(img, NoiseConfig(0.02, 50, "poisson_then_additive"), np.random.default_rng(0))
    b = add_noise(img, NoiseConfig(0.02, 50, "additive_then_poisson"), np.random.default_rng(0))
    assert not np.array_equal(a, b)
    with pytest.raises(InvalidConfig):
        NoiseConfig(mix_mode="other")


def test_loss_zero_for_consistent_frames(rng):
    y = rng.random((1, 16, 16)) * 0.8 + 0.1
    cfg = DegradationConfig(scale_s=2)
    flows = [random_smooth_flow(16, 16, 1.0, 3, rng) for _ in range(3)]
    frames = [DegradationOperator(f, cfg).forward(y) for f in flows]
    loss = backprojection_loss(ad.Tensor(y[None]), frames, flows, cfg)
    assert loss.item() < 1e-18 * y.size * 3


def test_loss_reduces_to_plain_mse(rng):
    y = rng.random((1, 8, 8))
    x = rng.random((1, 8, 8))
    cfg = DegradationConfig(scale_s=1, psf_sigma=0)
    loss = backprojection_loss(ad.Tensor(y), [x], [FlowField.zeros(8, 8)], cfg)
    assert loss.item() == pytest.approx(np.sum((y - x) ** 2), rel=1e-14)


def test_loss_additivity(rng):
    y = ad.Tensor(rng.random((1, 1, 16, 16)))
    cfg = DegradationConfig(scale_s=2)
    flows = [random_smooth_flow(16, 16, 1.0, 3, rng) for _ in range(3)]
    frames = [rng.random((1, 8, 8)) for _ in range(3)]
    total = backprojection_loss(y, frames, flows, cfg).item()
    parts = sum(backprojection_loss(y, [x], [f], cfg).item() for x, f in zip(frames, flows))
    assert total == pytest.approx(parts, rel=1e-13)


def test_loss_errors(rng):
    cfg = DegradationConfig(scale_s=2)
    y = ad.Tensor(np.zeros((1, 1, 16, 16)))
    with pytest.raises(LengthMismatch):
        backprojection_loss(y, [np.zeros((1, 8, 8))], [], cfg)
    with pytest.raises(ShapeMismatch):
        backprojection_loss(y, [np.zeros((1, 4, 4))], [FlowField.zeros(16, 16)], cfg)
    with pytest.raises(ShapeMismatch):
        backprojection_loss(y, [np.zeros((1, 8, 8))], [FlowField.zeros(8, 8)], cfg)


def test_loss_gradcheck_16(rng):
    cfg = DegradationConfig(scale_s=2, noise=NoiseConfig())
    flows = [random_smooth_flow(16, 16, 1.0, 3, rng) for _ in range(2)]
    frames = [rng.random((1, 8, 8)) for _ in range(2)]
    err = ad.grad_check(lambda t: backprojection_loss(t, frames, flows, cfg),
                        ad.Tensor(rng.random((1, 1, 16, 16))), eps=1e-5)
    assert err < 1e-3


def test_config_dict_roundtrip():
    cfg = DegradationConfig(scale_s=4, psf_sigma=1.2, lanczos_lobes=2, noise=NoiseConfig(0.03, 150), seed=9)
    d = cfg.to_dict()
    assert {"scale", "psf_sigma", "lanczos_lobes", "noise_sigma", "poisson_peak", "seed"} <= set(d)
    assert DegradationConfig.from_dict(d) == cfg
    with pytest.raises(InvalidConfig):
        DegradationConfig.from_dict({"scael": 2})


def test_lanczos_only_path(rng):
    y = rng.random((1, 16, 16))
    cfg = DegradationConfig(scale_s=2, psf_sigma=0)
    np.testing.assert_allclose(DegradationOperator(FlowField.zeros(16, 16), cfg).forward(y),
                               lanczos_resize(y, 8, 8), atol=0)
