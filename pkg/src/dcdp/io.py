"""File formats: 8-bit PGM/PPM, flat-text tensors, GMM text specs and CSV traces.

Every writer goes through :func:`atomic_write`, which writes a sibling
temporary file and renames it over the target, so concurrent readers never
see a half-written file.
"""

from __future__ import annotations

import contextlib
import csv
import io
import math
import os
import tempfile

import numpy as np
from PIL import Image

from .operators import ImageShape
from .score import GaussianMixture

FLOAT_FORMAT = "%.17g"


@contextlib.contextmanager
def atomic_write(path, mode="w", newline=None):
    """Open a temporary file next to ``path``; rename it into place on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": newline}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


# -- flat-text tensors -------------------------------------------------------

def write_tensor(path, x, shape):
    """Three header lines (height, width, channels) then one value per line.

    Values use 17 significant digits, which round-trips float64 exactly.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != shape.size:
        raise ValueError(f"tensor has {x.size} values, shape {shape} needs {shape.size}")
    with atomic_write(path) as fh:
        fh.write(f"{shape.height}\n{shape.width}\n{shape.channels}\n")
        np.savetxt(fh, x, fmt=FLOAT_FORMAT)


def read_tensor(path):
    """Inverse of :func:`write_tensor`; returns ``(flat_vector, ImageShape)``."""
    with open(path, encoding="utf-8") as fh:
        header = [fh.readline() for _ in range(3)]
        try:
            shape = ImageShape(*(int(h) for h in header))
        except ValueError as exc:
            raise ValueError(f"{path}: bad tensor header {header!r}") from exc
        data = np.loadtxt(fh, dtype=np.float64, ndmin=1)
    if data.size != shape.size:
        raise ValueError(f"{path}: header promises {shape.size} values, found {data.size}")
    return data, shape


# -- 8-bit images ------------------------------------------------------------

def to_uint8(x, shape, lo=-1.0, hi=1.0):
    arr = np.asarray(x, dtype=np.float64).reshape(shape.array_shape)
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def write_image(path, x, shape, lo=-1.0, hi=1.0):
    """Save as binary PGM (1 channel) or PPM (3 channels), mapping ``[lo, hi]`` to 0..255."""
    arr = to_uint8(x, shape, lo, hi)
    if shape.channels == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    elif shape.channels == 3:
        img = Image.fromarray(arr, mode="RGB")
    else:
        raise ValueError("PGM/PPM output needs 1 or 3 channels")
    buf = io.BytesIO()
    img.save(buf, format="PPM")
    with atomic_write(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_image(path, lo=-1.0, hi=1.0):
    """Read a PGM/PPM file back to a flat float vector in ``[lo, hi]``."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported image mode {img.mode}")
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    shape = ImageShape(*arr.shape)
    return lo + arr.ravel() / 255.0 * (hi - lo), shape


# -- Gaussian-mixture specs --------------------------------------------------

def write_gmm(path, prior):
    """Text spec of a diagonal-covariance mixture.

    ``dim D`` and ``components C`` lines, then per component a
    ``component <weight>`` line followed by ``mean`` and ``var`` lines of
    ``D`` values each. Blank lines and ``#`` comments are ignored on read.
    """
    lines = [f"dim {prior.dim}", f"components {prior.n_components}"]
    for i in range(prior.n_components):
        cov = prior.covariances[i]
        var = np.asarray(cov, dtype=np.float64) if not hasattr(cov, "matrix") else None
        if var is None or var.ndim != 1:
            raise ValueError("only diagonal covariances can be written as a GMM spec")
        lines.append("component " + FLOAT_FORMAT % prior.weights[i])
        lines.append("mean " + " ".join(FLOAT_FORMAT % v for v in prior.means[i]))
        lines.append("var " + " ".join(FLOAT_FORMAT % v for v in var))
    with atomic_write(path) as fh:
        fh.write("\n".join(lines) + "\n")


def read_gmm(path):
    """Parse a spec written by :func:`write_gmm`; errors name the offending line."""
    dim = n_comp = None
    weights, means, variances = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, *vals = line.split()
            try:
                if key == "dim":
                    dim = int(vals[0])
                elif key == "components":
                    n_comp = int(vals[0])
                elif key == "component":
                    weights.append(float(vals[0]))
                elif key in ("mean", "var"):
                    row = [float(v) for v in vals]
                    if dim is None or len(row) != dim:
                        raise ValueError(f"expected {dim} values, got {len(row)}")
                    (means if key == "mean" else variances).append(row)
                else:
                    raise ValueError(f"unknown key {key!r}")
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if dim is None or n_comp is None:
        raise ValueError(f"{path}: missing 'dim' or 'components' line")
    if not (len(weights) == len(means) == len(variances) == n_comp):
        raise ValueError(f"{path}: expected {n_comp} complete components")
    return GaussianMixture(weights, np.array(means), [np.array(v) for v in variances])


# -- codecs ------------------------------------------------------------------

def write_codec(path, codec):
    """Store the decoder matrix as an ``n x r x 1`` tensor (encoder is its transpose)."""
    n, r = codec.decode_matrix.shape
    write_tensor(path, codec.decode_matrix, ImageShape(n, r, 1))


def read_codec(path):
    from .latent import LinearCodec

    data, shape = read_tensor(path)
    return LinearCodec(data.reshape(shape.height, shape.width))


# -- CSV traces --------------------------------------------------------------

def format_float(value):
    """Six significant digits; non-finite values spelled ``inf``, ``-inf``, ``nan``."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.6g" % value


def write_csv(path, header, rows):
    with atomic_write(path, newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


SOLVER_TRACE_HEADER = ("iter", "T_k", "fidelity_loss_final", "mse_vs_truth", "psnr",
                       "nfe_cumulative")
FIDELITY_TRACE_HEADER = ("outer_iter", "inner_step", "loss")
PURIFY_TRACE_HEADER = ("t", "norm", "nfe")


def solver_trace_rows(result, peak=2.0):
    for rec in result.trace:
        psnr = None
        if rec.mse is not None:
            psnr = math.inf if rec.mse == 0 else 10.0 * math.log10(peak ** 2 / rec.mse)
        yield (rec.k, rec.T, format_float(rec.fidelity_loss_final), format_float(rec.mse),
               format_float(psnr), rec.nfe)


def write_solver_trace(path, result, peak=2.0):
    write_csv(path, SOLVER_TRACE_HEADER, solver_trace_rows(result, peak))


def write_fidelity_trace(path, result):
    rows = ((rec.k, step, format_float(loss))
            for rec in result.trace for step, loss in enumerate(rec.fidelity_losses))
    write_csv(path, FIDELITY_TRACE_HEADER, rows)


def write_purify_trace(path, trace):
    """``trace`` is the list of ``(t, norm, nfe)`` tuples filled in by the samplers."""
    rows = ((t, format_float(norm), "" if nfe is None else nfe) for t, norm, nfe in trace)
    write_csv(path, PURIFY_TRACE_HEADER, rows)
