"""Linear degradation operators with exact adjoints.

Images are handled as flat vectors in ``(height, width, channels)`` row-major
order. All operators are immutable; ``apply`` and ``adjoint`` are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_scalar, check_vector, make_rng


@dataclass(frozen=True)
class ImageShape:
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        for name in ("height", "width", "channels"):
            check_int(getattr(self, name), name, 1)

    @property
    def size(self):
        return self.height * self.width * self.channels

    @property
    def array_shape(self):
        return (self.height, self.width, self.channels)

    @classmethod
    def parse(cls, text):
        """Parse ``"32x32"`` or ``"32x32x3"``."""
        parts = [int(p) for p in str(text).lower().split("x")]
        if len(parts) == 2:
            parts.append(1)
        if len(parts) != 3:
            raise ValueError(f"cannot parse image shape {text!r}")
        return cls(*parts)

    def __str__(self):
        base = f"{self.height}x{self.width}"
        return base if self.channels == 1 else f"{base}x{self.channels}"


class LinearOperator:
    """Base class: ``apply`` is ``A x`` and ``adjoint`` is ``A^T y``."""

    operator_id = "linear"

    def __init__(self, in_shape, out_shape):
        self.in_shape = in_shape
        self.out_shape = out_shape

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    def gram(self, x):
        """``A^T A x``."""
        return self.adjoint(self.apply(x))

    def to_matrix(self):
        """Dense ``(m, n)`` matrix; only sensible at desk scale."""
        n = self.in_shape.size
        eye = np.eye(n)
        return np.stack([self.apply(eye[j]) for j in range(n)], axis=1)

    def lipschitz(self, n_iter=200, seed=0):
        """Largest eigenvalue of ``A^T A`` by power iteration."""
        rng = make_rng(seed)
        v = rng.standard_normal(self.in_shape.size)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(n_iter):
            w = self.gram(v)
            lam = float(np.linalg.norm(w))
            if lam == 0.0:
                return 0.0
            v = w / lam
        return lam

    def __repr__(self):
        return f"{type(self).__name__}({self.in_shape} -> {self.out_shape})"


class IdentityOperator(LinearOperator):
    operator_id = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def apply(self, x):
        return np.array(x, dtype=np.float64, copy=True)

    def adjoint(self, y):
        return np.array(y, dtype=np.float64, copy=True)


class MaskOperator(LinearOperator):
    """Pointwise 0/1 mask on the full pixel grid (a self-adjoint projector)."""

    operator_id = "inpaint"

    def __init__(self, shape, mask):
        super().__init__(shape, shape)
        mask = np.asarray(mask, dtype=np.float64).reshape(-1)
        if mask.shape != (shape.size,):
            raise ValueError("mask size does not match the image shape")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        mask.setflags(write=False)
        self.mask = mask

    @property
    def n_observed(self):
        return int(self.mask.sum())

    def apply(self, x):
        return self.mask * x

    def adjoint(self, y):
        return self.mask * y


class DownsampleOperator(LinearOperator):
    """Average over ``factor x factor`` blocks; the adjoint spreads each coarse
    value over its block scaled by ``1 / factor**2``."""

    operator_id = "downsample"

    def __init__(self, shape, factor):
        factor = check_int(factor, "factor", 1)
        if shape.height % factor or shape.width % factor:
            raise ValueError(f"factor {factor} does not divide {shape}")
        out = ImageShape(shape.height // factor, shape.width // factor, shape.channels)
        super().__init__(shape, out)
        self.factor = factor

    def apply(self, x):
        f = self.factor
        h, w, c = self.out_shape.array_shape
        blocks = np.reshape(x, (h, f, w, f, c))
        return blocks.mean(axis=(1, 3)).reshape(-1)

    def adjoint(self, y):
        f = self.factor
        h, w, c = self.out_shape.array_shape
        coarse = np.reshape(y, (h, 1, w, 1, c)) / (f * f)
        return np.broadcast_to(coarse, (h, f, w, f, c)).reshape(-1)


class ConvolutionOperator(LinearOperator):
    """Channel-wise circular 2-D convolution with a centred kernel.

    The adjoint is convolution with the kernel rotated by 180 degrees, done
    exactly via the conjugate transfer function.
    """

    operator_id = "blur"

    def __init__(self, shape, kernel):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be a 2-D array")
        kh, kw = kernel.shape
        if kh > shape.height or kw > shape.width:
            raise ValueError(f"kernel {kernel.shape} larger than image {shape}")
        super().__init__(shape, shape)
        kernel = kernel.copy()
        kernel.setflags(write=False)
        self.kernel = kernel
        padded = np.zeros((shape.height, shape.width))
        padded[:kh, :kw] = kernel
        # move the kernel centre to the origin
        padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self._transfer = np.fft.rfft2(padded)[:, :, None]

    def _filter(self, x, transfer):
        h, w, c = self.in_shape.array_shape
        img = np.reshape(x, (h, w, c))
        out = np.fft.irfft2(np.fft.rfft2(img, axes=(0, 1)) * transfer, s=(h, w), axes=(0, 1))
        return out.reshape(-1)

    def apply(self, x):
        return self._filter(x, self._transfer)

    def adjoint(self, y):
        return self._filter(y, np.conj(self._transfer))

    def lipschitz(self, n_iter=None, seed=None):
        return float(np.max(np.abs(self._transfer)) ** 2)


def make_identity(shape):
    return IdentityOperator(shape)


def make_inpainting(shape, box_top, box_left, box_h, box_w):
    """Zero out the box ``[top, top + h) x [left, left + w)`` in every channel."""
    box_top = check_int(box_top, "box_top", 0)
    box_left = check_int(box_left, "box_left", 0)
    box_h = check_int(box_h, "box_h", 0)
    box_w = check_int(box_w, "box_w", 0)
    if box_top + box_h > shape.height or box_left + box_w > shape.width:
        raise ValueError("inpainting box extends outside the image")
    mask = np.ones(shape.array_shape)
    mask[box_top:box_top + box_h, box_left:box_left + box_w, :] = 0.0
    return MaskOperator(shape, mask)


def make_centered_inpainting(shape, box):
    top = (shape.height - box) // 2
    left = (shape.width - box) // 2
    return make_inpainting(shape, top, left, box, box)


def make_downsample(shape, factor):
    return DownsampleOperator(shape, factor)


def make_blur(shape, kernel):
    return ConvolutionOperator(shape, kernel)


def gaussian_kernel(size, sigma):
    """Normalised isotropic Gaussian on an odd ``size x size`` grid."""
    size = check_int(size, "size", 1)
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    sigma = check_scalar(sigma, "sigma", 0.0, lower_inclusive=False)
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(size, length, angle, supersample=8):
    """Antialiased straight-line blur kernel.

    Each pixel is weighted by the fraction of its ``supersample**2``
    sub-pixel centres falling inside a one-pixel-wide segment of the given
    ``length`` through the kernel centre at ``angle`` (radians, counter-
    clockwise from the +x axis).
    """
    size = check_int(size, "size", 1)
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    length = check_scalar(length, "length", 0.0, lower_inclusive=False)
    angle = check_scalar(angle, "angle")
    s = check_int(supersample, "supersample", 1)
    offsets = (np.arange(s) + 0.5) / s - 0.5
    centre = np.arange(size) - size // 2
    # image rows grow downwards
    ys = (centre[:, None] + offsets[None, :]).reshape(-1)
    xs = ys.copy()
    dx, dy = math.cos(angle), -math.sin(angle)
    along = xs[None, :] * dx + ys[:, None] * dy
    perp = -xs[None, :] * dy + ys[:, None] * dx
    # half-open bounds keep an axis-aligned segment on exactly one row
    inside = (np.abs(along) <= length / 2) & (perp > -0.5) & (perp <= 0.5)
    k = inside.reshape(size, s, size, s).sum(axis=(1, 3)).astype(np.float64)
    total = k.sum()
    if total == 0:
        k[size // 2, size // 2] = 1.0
        total = 1.0
    return k / total


@dataclass(frozen=True, eq=False)
class Measurement:
    y: np.ndarray
    sigma_y: float
    operator_id: str
    seed: int


def measure(op, x_star, sigma_y, seed):
    """``y = A x_star + sigma_y * eps`` with seeded standard-normal ``eps``."""
    x_star = check_vector(x_star, "x_star", size=op.in_shape.size)
    sigma_y = check_scalar(sigma_y, "sigma_y", 0.0)
    y = op.apply(x_star)
    if sigma_y > 0:
        y = y + sigma_y * make_rng(seed).standard_normal(y.shape)
    return Measurement(y=y, sigma_y=sigma_y, operator_id=op.operator_id, seed=seed)


def adjoint_check(op, n_trials=20, seed=0):
    """Largest relative inner-product mismatch ``|<Ax,y> - <x,A^T y>| / (|Ax| |y|)``."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        x = rng.standard_normal(op.in_shape.size)
        y = rng.standard_normal(op.out_shape.size)
        ax = op.apply(x)
        lhs = float(ax @ y)
        rhs = float(x @ op.adjoint(y))
        scale = np.linalg.norm(ax) * np.linalg.norm(y)
        if scale == 0:
            err = abs(lhs - rhs)
        else:
            err = abs(lhs - rhs) / scale
        worst = max(worst, err)
    return worst


def parse_operator_spec(text, default_shape=None):
    """Build an operator from ``"name:key=value,key=value"``.

    Names: ``identity``, ``inpaint`` (``box``, or ``top``/``left``/``h``/``w``),
    ``downsample`` (``factor``), ``gaussian_blur`` (``size``, ``sigma``),
    ``motion_blur`` (``size``, ``length``, ``angle`` in degrees). Every spec
    accepts ``shape=HxW[xC]``; otherwise ``default_shape`` (or 32x32) is used.
    """
    name, _, rest = str(text).strip().partition(":")
    opts = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed option {item!r} in operator spec {text!r}")
        opts[key.strip()] = value.strip()
    shape = ImageShape.parse(opts.pop("shape")) if "shape" in opts else (
        default_shape or ImageShape(32, 32, 1))
    name = name.strip().lower()
    try:
        if name == "identity":
            op = make_identity(shape)
        elif name == "inpaint":
            if "box" in opts:
                op = make_centered_inpainting(shape, int(opts.pop("box")))
            else:
                op = make_inpainting(shape, int(opts.pop("top")), int(opts.pop("left")),
                                     int(opts.pop("h")), int(opts.pop("w")))
        elif name == "downsample":
            op = make_downsample(shape, int(opts.pop("factor", 4)))
        elif name == "gaussian_blur":
            op = make_blur(shape, gaussian_kernel(int(opts.pop("size", 9)),
                                                  float(opts.pop("sigma", 1.5))))
        elif name == "motion_blur":
            op = make_blur(shape, motion_kernel(int(opts.pop("size", 9)),
                                                float(opts.pop("length", 7)),
                                                math.radians(float(opts.pop("angle", 45)))))
        else:
            raise ValueError(f"unknown operator {name!r}")
    except KeyError as exc:
        raise ValueError(f"operator spec {text!r} is missing {exc.args[0]!r}") from None
    if opts:
        raise ValueError(f"unused options {sorted(opts)} in operator spec {text!r}")
    return op
