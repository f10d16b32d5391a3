"""Linear encoder/decoder pair used in place of a latent-diffusion autoencoder."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_int, check_vector


class LinearCodec:
    """Decoder ``D`` (n x r) and encoder ``E`` (r x n).

    When ``encode_matrix`` is omitted the encoder is ``D^T``; with
    orthonormal columns this makes ``E D = I`` and ``D E`` an orthogonal
    projector. A separate encoder is accepted to model codecs without that
    property.
    """

    def __init__(self, decode_matrix, encode_matrix=None):
        d = np.array(decode_matrix, dtype=np.float64)
        if d.ndim != 2 or d.shape[1] > d.shape[0]:
            raise ValueError("decode_matrix must be (n, r) with r <= n")
        e = d.T.copy() if encode_matrix is None else np.array(encode_matrix, dtype=np.float64)
        if e.shape != (d.shape[1], d.shape[0]):
            raise ValueError("encode_matrix must be (r, n)")
        d.setflags(write=False)
        e.setflags(write=False)
        self.decode_matrix = d
        self.encode_matrix = e

    @property
    def pixel_dim(self):
        return self.decode_matrix.shape[0]

    @property
    def latent_dim(self):
        return self.decode_matrix.shape[1]

    def is_orthonormal(self, atol=1e-12):
        d = self.decode_matrix
        return (np.allclose(d.T @ d, np.eye(self.latent_dim), atol=atol, rtol=0)
                and np.allclose(self.encode_matrix, d.T, atol=atol, rtol=0))

    def decode(self, z):
        return self.decode_matrix @ z if np.ndim(z) == 1 else z @ self.decode_matrix.T

    def encode(self, x):
        return self.encode_matrix @ x if np.ndim(x) == 1 else x @ self.encode_matrix.T

    def decode_adjoint(self, x):
        """``D^T x``, the pull-back of a pixel-space gradient."""
        return self.decode_matrix.T @ x

    def encode_adjoint(self, z):
        return self.encode_matrix.T @ z


def re_encode(z, codec):
    """``E(D(z))``: pull a latent code back into the encoder's image."""
    z = check_vector(z, "z", size=codec.latent_dim)
    return codec.encode(codec.decode(z))


class PCACodec(TransformerMixin, BaseEstimator):
    """Principal-subspace codec fitted to a dataset of vectors.

    The subspace is that of the uncentred second-moment matrix
    ``X^T X / m``, so the codec stays linear (no mean offset) and the mean
    training reconstruction error equals the sum of the discarded
    eigenvalues.

    Parameters
    ----------
    n_components : int
        Latent dimension ``r``.
    rtol : float
        Eigenvalues below ``rtol`` times the largest count as zero; asking
        for more components than that rank is an error.
    """

    def __init__(self, n_components=16, rtol=1e-10):
        self.n_components = n_components
        self.rtol = rtol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        m, n = X.shape
        r = check_int(self.n_components, "n_components", 1, min(n, m))
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        eig = s ** 2 / m
        rank = int(np.sum(eig > self.rtol * eig[0])) if eig[0] > 0 else 0
        if r > rank:
            raise ValueError(f"n_components={r} exceeds the numerical rank {rank} of the data")
        basis, _ = np.linalg.qr(vt[:r].T)
        # keep the orientation of the singular vectors
        basis *= np.sign(np.sum(basis * vt[:r].T, axis=0))
        self.components_ = basis.T
        self.explained_variance_ = eig[:r]
        self.discarded_variance_ = float(eig[r:].sum())
        self.codec_ = LinearCodec(basis)
        return self

    def transform(self, X):
        check_is_fitted(self, "codec_")
        X = np.asarray(X, dtype=np.float64)
        return self.codec_.encode(X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "codec_")
        Z = np.asarray(Z, dtype=np.float64)
        return self.codec_.decode(Z)


def make_pca_codec(dataset, r):
    """Orthonormal codec spanning the top-``r`` principal directions of ``dataset``."""
    return PCACodec(n_components=r).fit(dataset).codec_


def encode_prior(prior, codec):
    """Push a pixel-space Gaussian mixture through the encoder.

    A linear encoder maps ``N(mu, S)`` to ``N(E mu, E S E^T)`` exactly, so
    the result is the latent prior matching ``prior`` under ``codec``.
    """
    from .score import GaussianMixture

    if prior.dim != codec.pixel_dim:
        raise ValueError(f"prior dimension {prior.dim} does not match codec pixel_dim "
                         f"{codec.pixel_dim}")
    E = codec.encode_matrix
    means = prior.means @ E.T
    covs = []
    for i in range(len(prior.weights)):
        S = prior.covariance_matrix(i)
        C = E @ S @ E.T
        covs.append(0.5 * (C + C.T))
    return GaussianMixture(prior.weights, means, covs)
