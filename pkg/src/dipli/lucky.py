"""Pivot selection and the Lucky Imaging baseline."""

import math
from dataclasses import dataclass

import numpy as np

from .core.filters import laplacian_energy
from .core.imageio import as_image
from .errors import EmptyStack, ShapeMismatch
from .flow import estimate_flow_tvl1, warp_bilinear

__all__ = ["FrameStack", "as_stack", "select_pivot", "lucky_imaging", "LuckyResult"]


@dataclass
class FrameStack:
    """Ordered LQ frames of identical shape, with optional quality scores."""

    frames: list
    scores: list | None = None

    def __post_init__(self):
        if len(self.frames) == 0:
            raise EmptyStack("a frame stack needs at least one frame")
        self.frames = [as_image(f) for f in self.frames]
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ShapeMismatch(f"frame {i} has shape {f.shape}, expected {shape}")
        if self.scores is not None and len(self.scores) != len(self.frames):
            raise ShapeMismatch("one score per frame is required")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def shape(self):
        return self.frames[0].shape

    def quality(self):
        """Laplacian energy of every frame (cached in ``scores``)."""
        if self.scores is None:
            self.scores = [laplacian_energy(f) for f in self.frames]
        return list(self.scores)


def as_stack(frames):
    if isinstance(frames, FrameStack):
        return frames
    if frames is None or len(frames) == 0:
        raise EmptyStack("a frame stack needs at least one frame")
    return FrameStack(list(frames))


def select_pivot(stack):
    """Index of the frame with the highest Laplacian energy; ties go to the lowest index."""
    stack = as_stack(stack)
    # np.argmax returns the first maximum
    return int(np.argmax(stack.quality()))


@dataclass
class LuckyResult:
    image: np.ndarray
    pivot: int
    quality: list
    kept: list
    flows: dict


def lucky_imaging(stack, select_frac=1.0, flow_params=None, return_details=False):
    """Align frames onto the pivot with TV-L1 and average them.

    Parameters
    ----------
    stack : FrameStack or sequence of images
    select_frac : float
        Fraction of frames kept, best Laplacian energy first. The pivot is
        always kept; 1.0 averages the whole stack.
    flow_params : TvL1Params, optional
    return_details : bool
        Return a :class:`LuckyResult` instead of the bare image.
    """
    stack = as_stack(stack)
    if not 0.0 < select_frac <= 1.0:
        raise ValueError("select_frac must lie in (0, 1]")
    quality = stack.quality()
    pivot = select_pivot(stack)
    n_keep = max(1, math.ceil(select_frac * len(stack) - 1e-9))
    order = sorted(range(len(stack)), key=lambda k: (-quality[k], k))
    kept = sorted(set(order[:n_keep]) | {pivot})
    ref = stack[pivot]
    acc = np.zeros_like(ref)
    flows = {}
    for k in kept:
        if k == pivot:
            acc += ref
            continue
        flow = estimate_flow_tvl1(ref, stack[k], flow_params)
        flows[k] = flow
        acc += warp_bilinear(stack[k], flow)
    image = acc / len(kept)
    if return_details:
        return LuckyResult(image, pivot, quality, [k in kept for k in range(len(stack))], flows)
    return image
