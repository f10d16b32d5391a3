"""Desk-scale synthetic priors and restoration tasks.

The image prior is a Gaussian mixture whose components have smooth means
and low-rank smooth covariances plus a small isotropic floor, so samples
look like blurry random textures with a few distinct "classes". Ground
truths are drawn from the prior itself, which makes the analytic score the
exact score of the data distribution.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from ._validation import check_int, make_rng
from .operators import (
    ImageShape,
    gaussian_kernel,
    make_blur,
    make_centered_inpainting,
    make_downsample,
    make_identity,
    motion_kernel,
)
from .score import GaussianMixture, SpectralCovariance

DESK_SHAPE = ImageShape(32, 32, 1)
# intensities live in [-1, 1]
PEAK = 2.0

TASKS = ("inpaint", "sr", "gaussian_blur", "motion_blur", "identity")


def smooth_fields(shape, count, length_scale, seed):
    """``count`` unit-norm Gaussian random fields with circular smoothing."""
    rng = make_rng(seed)
    h, w, c = shape.array_shape
    noise = rng.standard_normal((count, h, w, c))
    out = ndimage.gaussian_filter(noise, sigma=(0, length_scale, length_scale, 0), mode="wrap")
    out = out.reshape(count, -1)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def make_image_prior(shape=DESK_SHAPE, n_components=4, rank=24, floor_std=0.05,
                     pixel_std=0.3, mean_std=0.4, length_scale=2.5, decay=0.85, seed=0):
    """Mixture of low-rank smooth Gaussians over flattened images.

    Each component has a smooth mean with per-pixel spread ``mean_std``,
    ``rank`` smooth principal directions whose variances decay
    geometrically and sum to ``pixel_std**2`` per pixel, and an isotropic
    floor of standard deviation ``floor_std`` elsewhere.
    """
    rng = make_rng(seed)
    n = shape.size
    n_components = check_int(n_components, "n_components", 1)
    rank = check_int(rank, "rank", 1, n)
    means = smooth_fields(shape, n_components, length_scale, rng) * mean_std * math.sqrt(n)
    covs = []
    for _ in range(n_components):
        fields = smooth_fields(shape, rank, length_scale, rng)
        basis, _ = np.linalg.qr(fields.T)
        spectrum = decay ** np.arange(rank)
        spectrum *= pixel_std ** 2 * n / spectrum.sum()
        covs.append(SpectralCovariance(basis, spectrum, floor_std ** 2))
    weights = np.full(n_components, 1.0 / n_components)
    return GaussianMixture(weights, means, covs)


def make_operator(task, shape=DESK_SHAPE):
    """Desk-scale default operator for a task name.

    ``inpaint``: centred box of side ``3/8`` of the image (12 px at 32x32),
    ``sr``: 4x block averaging, ``gaussian_blur``: 9x9 kernel, sigma 1.5,
    ``motion_blur``: length-7 line at 45 degrees in a 9x9 kernel.
    """
    if task == "inpaint":
        return make_centered_inpainting(shape, max(1, round(shape.height * 12 / 32)))
    if task == "sr":
        return make_downsample(shape, 4)
    if task == "gaussian_blur":
        return make_blur(shape, gaussian_kernel(9, 1.5))
    if task == "motion_blur":
        return make_blur(shape, motion_kernel(9, 7, math.pi / 4))
    if task == "identity":
        return make_identity(shape)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
