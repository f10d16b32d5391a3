"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


def check_vector(x, name="x", size=None, allow_batch=False):
    """Return ``x`` as a finite float64 array.

    A 1-D vector is expected; with ``allow_batch`` a 2-D stack of vectors
    (one per row) is accepted as well. ``size`` checks the trailing length.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 and not (allow_batch and arr.ndim == 2):
        expected = "1-D or 2-D" if allow_batch else "1-D"
        raise ValueError(f"{name} must be a {expected} array, got shape {arr.shape}")
    if size is not None and arr.shape[-1] != size:
        raise ValueError(f"{name} has length {arr.shape[-1]}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_int(value, name, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_scalar(value, name, lower=None, upper=None, lower_inclusive=True,
                 upper_inclusive=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if lower is not None:
        bad = value < lower if lower_inclusive else value <= lower
        if bad:
            op = ">=" if lower_inclusive else ">"
            raise ValueError(f"{name} must be {op} {lower}, got {value}")
    if upper is not None:
        bad = value > upper if upper_inclusive else value >= upper
        if bad:
            op = "<=" if upper_inclusive else "<"
            raise ValueError(f"{name} must be {op} {upper}, got {value}")
    return value


def make_rng(seed):
    """Seeded ``numpy.random.Generator``; passes generators through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("an explicit integer seed is required for reproducibility")
    return np.random.default_rng(seed)
