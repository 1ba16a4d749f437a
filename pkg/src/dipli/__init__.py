"""Multi-frame blind super-resolution with an untrained network prior.

The package reconstructs a high-resolution image from a handful of noisy,
distorted low-resolution frames: frames are aligned with TV-L1 optical flow
to the sharpest one, a randomly initialized U-Net is fitted to all of them
through a differentiable warp/blur/downsample model, and the reconstruction
is averaged over the late iterates of a Langevin-perturbed gradient descent.
Lucky Imaging (align-and-average) and single-frame Deep Image Prior are
available as baselines.
"""

__version__ = "0.1.0"
