"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import Tensor, backward, no_grad

__all__ = ["grad_check", "numerical_grad"]


def _evaluate(f, x):
    with no_grad():
        return float(f(x).data)


def numerical_grad(f, x, leaf, flat_index, eps=1e-4):
    """Central difference of ``f(x)`` w.r.t. one coordinate of ``leaf``."""
    flat = leaf.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + eps
    plus = _evaluate(f, x)
    flat[flat_index] = orig - eps
    minus = _evaluate(f, x)
    flat[flat_index] = orig
    return (plus - minus) / (2.0 * eps)


def grad_check(f, x, eps=1e-4, max_coords=None, rng=None, wrt=None):
    """Maximum relative error between backprop and central differences.

    Parameters
    ----------
    f : callable
        Maps ``x`` to a scalar :class:`Tensor`; must be deterministic.
    x : Tensor, sequence of Tensor, or any object
        Argument passed to ``f``.
    eps : float
        Finite-difference step.
    max_coords : int, optional
        Check at most this many randomly chosen coordinates (across all
        tensors) instead of every coordinate.
    rng : numpy.random.Generator, optional
        Source for coordinate sampling.
    wrt : sequence of Tensor, optional
        Leaves to differentiate. Defaults to ``x`` itself (a tensor or a
        sequence of tensors).

    Returns
    -------
    float
        ``max |analytic - numeric| / max(1, |analytic|)`` over the checked
        coordinates.
    """
    if wrt is None:
        wrt = [x] if isinstance(x, Tensor) else list(x)
    leaves = list(wrt)
    for t in leaves:
        t.requires_grad = True
        t.grad = None
    backward(f(x))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    coords = [(ti, j) for ti, t in enumerate(leaves) for j in range(t.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = np.sort(rng.choice(len(coords), size=max_coords, replace=False))
        coords = [coords[i] for i in pick]

    worst = 0.0
    for ti, j in coords:
        a = analytic[ti].reshape(-1)[j]
        num = numerical_grad(f, x, leaves[ti], j, eps)
        worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    for t in leaves:
        t.grad = None
    return worst
