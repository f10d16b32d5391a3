"""Image-quality metrics and the closed-form Gaussian posterior oracle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_int, check_scalar, check_vector
from .operators import gaussian_kernel

# Sentinel returned by psnr for identical images.
PSNR_IDENTICAL = math.inf


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    nfe: int = 0
    wall_time: float = 0.0

    def as_dict(self):
        return asdict(self)


def mse(x, ref):
    """Mean squared difference, summed with ``math.fsum`` so pixel order cannot matter."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    d = (x - ref).ravel()
    return math.fsum(d * d) / d.size if d.size else 0.0


def psnr(x, ref, peak=1.0):
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` when the images are equal."""
    peak = check_scalar(peak, "peak", 0.0, lower_inclusive=False)
    err = mse(x, ref)
    if err == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak ** 2 / err)


def _as_image(x, shape):
    x = np.asarray(x, dtype=np.float64)
    if shape is not None:
        x = x.reshape(tuple(shape.array_shape) if hasattr(shape, "array_shape") else shape)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ValueError("ssim expects an (H, W) or (H, W, C) image; pass shape= for flat vectors")
    return x


def ssim(x, ref, window=11, k1=0.01, k2=0.03, peak=1.0, sigma=1.5, shape=None):
    """Mean structural similarity with a Gaussian window.

    Local statistics use a normalised ``window x window`` Gaussian of width
    ``sigma`` with circular boundary handling; multi-channel images average
    the per-channel maps.
    """
    window = check_int(window, "window", 1)
    if window % 2 == 0:
        raise ValueError("window must be odd")
    peak = check_scalar(peak, "peak", 0.0, lower_inclusive=False)
    a = _as_image(x, shape)
    b = _as_image(ref, shape)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    kernel = gaussian_kernel(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def filt(img):
        return ndimage.correlate(img, kernel, mode="wrap")

    maps = []
    for ch in range(a.shape[2]):
        u, v = a[:, :, ch], b[:, :, ch]
        mu_u, mu_v = filt(u), filt(v)
        s_uu = filt(u * u) - mu_u * mu_u
        s_vv = filt(v * v) - mu_v * mu_v
        s_uv = filt(u * v) - mu_u * mu_v
        num = (2.0 * mu_u * mu_v + c1) * (2.0 * s_uv + c2)
        den = (mu_u * mu_u + mu_v * mu_v + c1) * (s_uu + s_vv + c2)
        maps.append(num / den)
    return float(np.mean(maps))


def gaussian_posterior_oracle(prior_mean, prior_cov, op, y, sigma_y):
    """Posterior mean of ``x ~ N(m, S)`` given ``y = A x + N(0, sigma_y^2 I)``.

    ``m + S A^T (A S A^T + sigma_y^2 I)^{-1} (y - A m)`` with ``A``
    materialised densely.
    """
    m = check_vector(prior_mean, "prior_mean", size=op.in_shape.size)
    S = np.asarray(prior_cov, dtype=np.float64)
    if S.ndim == 1:
        S = np.diag(S)
    y = check_vector(y, "y", size=op.out_shape.size)
    sigma_y = check_scalar(sigma_y, "sigma_y", 0.0)
    A = op.to_matrix()
    SAt = S @ A.T
    gram = A @ SAt + sigma_y ** 2 * np.eye(A.shape[0])
    return m + SAt @ np.linalg.solve(gram, y - A @ m)


def report(x, ref, shape, peak=2.0, nfe=0, wall_time=0.0):
    """PSNR, SSIM and MSE of a reconstruction against ``ref``."""
    return MetricReport(
        psnr=psnr(x, ref, peak),
        ssim=ssim(x, ref, peak=peak, shape=shape),
        mse=mse(x, ref),
        nfe=int(nfe),
        wall_time=float(wall_time),
    )
