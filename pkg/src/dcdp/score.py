"""Analytic score models under the VP forward process.

Every prior here is a Gaussian mixture, so the time-``t`` marginal is again a
mixture (means scaled by ``sqrt(alpha_bar)``, covariances mapped to
``alpha_bar * C + (1 - alpha_bar) * I``) and log-density, score and Hessian
are available in closed form. Mixture sums are evaluated in log space.

Covariances come in two flavours:

* a 1-D array of per-coordinate variances (diagonal fast path);
* :class:`SpectralCovariance`, ``Q diag(d) Q^T + c (I - Q Q^T)`` with
  orthonormal ``Q``. Full SPD matrices are converted to this form with
  ``Q`` square; low-rank-plus-floor covariances keep ``Q`` thin.

Both flavours stay closed under the forward process, so precision products
at any ``t`` cost ``O(n r)`` per component.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._validation import check_scalar, check_vector, make_rng

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class SpectralCovariance:
    """Covariance ``basis @ diag(variances) @ basis.T + floor * (I - basis @ basis.T)``."""

    basis: np.ndarray
    variances: np.ndarray
    floor: float

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if basis.ndim != 2 or variances.shape != (basis.shape[1],):
            raise ValueError("basis must be (n, r) with r variances")
        if basis.shape[1] > basis.shape[0]:
            raise ValueError("basis has more columns than rows")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(basis.shape[1]), atol=1e-8):
            raise ValueError("basis columns must be orthonormal")
        if np.any(variances <= 0):
            raise ValueError("covariance must be positive definite")
        floor = float(self.floor)
        if basis.shape[1] < basis.shape[0] and floor <= 0:
            raise ValueError("floor variance must be positive for a thin basis")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "floor", floor)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def rank(self):
        return self.basis.shape[1]

    @classmethod
    def from_matrix(cls, cov, atol=1e-10):
        cov = np.asarray(cov, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance matrix must be square")
        if not np.allclose(cov, cov.T, atol=atol, rtol=0):
            raise ValueError("covariance matrix must be symmetric")
        evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
        if evals[0] <= 0:
            raise ValueError("covariance matrix must be positive definite")
        return cls(evecs, evals, float(evals[0]))

    @classmethod
    def _unchecked(cls, basis, variances, floor):
        obj = object.__new__(cls)
        object.__setattr__(obj, "basis", basis)
        object.__setattr__(obj, "variances", variances)
        object.__setattr__(obj, "floor", float(floor))
        return obj

    def diffused(self, alpha_bar):
        # the basis is shared, so the orthonormality check is skipped
        return SpectralCovariance._unchecked(
            self.basis,
            alpha_bar * self.variances + (1.0 - alpha_bar),
            alpha_bar * self.floor + (1.0 - alpha_bar),
        )

    def matrix(self):
        q = self.basis
        out = (q * (self.variances - self.floor)) @ q.T
        out[np.diag_indices_from(out)] += self.floor
        return 0.5 * (out + out.T)


def _as_covariance(cov, dim):
    if isinstance(cov, SpectralCovariance):
        if cov.dim != dim:
            raise ValueError(f"covariance dimension {cov.dim} != {dim}")
        return cov
    arr = np.asarray(cov, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.ndim == 1:
        if arr.shape != (dim,):
            raise ValueError(f"diagonal covariance has length {arr.shape[0]}, expected {dim}")
        if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
            raise ValueError("diagonal variances must be positive and finite")
        return arr.copy()
    if arr.shape != (dim, dim):
        raise ValueError(f"covariance has shape {arr.shape}, expected {(dim, dim)}")
    return SpectralCovariance.from_matrix(arr)


class GaussianMixture:
    """Weighted sum of Gaussians ``sum_i w_i N(mean_i, cov_i)``.

    Parameters
    ----------
    weights : array-like of shape (C,)
        Positive mixture weights; must sum to one (within 1e-8).
    means : array-like of shape (C, n)
    covariances : sequence of length C
        Each entry is a scalar (isotropic), a length-``n`` vector of
        variances, an ``(n, n)`` SPD matrix or a :class:`SpectralCovariance`.
    """

    def __init__(self, weights, means, covariances):
        weights = np.atleast_1d(np.asarray(weights, dtype=np.float64))
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        if weights.ndim != 1 or means.shape[0] != weights.shape[0]:
            raise ValueError("weights and means disagree on the number of components")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-8:
            raise ValueError(f"mixture weights sum to {weights.sum()}, not 1")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if len(covariances) != weights.shape[0]:
            raise ValueError("one covariance per component is required")
        self.weights = weights / weights.sum()
        self.means = means
        self.covariances = [_as_covariance(c, means.shape[1]) for c in covariances]

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def covariance_matrix(self, i):
        cov = self.covariances[i]
        if isinstance(cov, SpectralCovariance):
            return cov.matrix()
        return np.diag(cov)

    def mean(self):
        return self.weights @ self.means

    def sample(self, n_samples, seed):
        """Draw ``n_samples`` rows from the mixture."""
        rng = make_rng(seed)
        labels = rng.choice(self.n_components, size=n_samples, p=self.weights)
        out = np.empty((n_samples, self.dim))
        for i in range(self.n_components):
            idx = np.flatnonzero(labels == i)
            if idx.size == 0:
                continue
            z = rng.standard_normal((idx.size, self.dim))
            cov = self.covariances[i]
            if isinstance(cov, SpectralCovariance):
                q = cov.basis
                proj = z @ q
                noise = np.sqrt(cov.floor) * (z - proj @ q.T) + (proj * np.sqrt(cov.variances)) @ q.T
            else:
                noise = z * np.sqrt(cov)
            out[idx] = self.means[i] + noise
        return out

    def diffused(self, alpha_bar):
        """Law of ``sqrt(a) x + sqrt(1 - a) eps`` for ``x`` from this mixture."""
        scale = np.sqrt(alpha_bar)
        covs = []
        for cov in self.covariances:
            if isinstance(cov, SpectralCovariance):
                covs.append(cov.diffused(alpha_bar))
            else:
                covs.append(alpha_bar * cov + (1.0 - alpha_bar))
        out = object.__new__(GaussianMixture)
        out.weights = self.weights
        out.means = scale * self.means
        out.covariances = covs
        return out

    # Per-component evaluation -------------------------------------------

    def _precision_apply(self, i, r):
        """``cov_i^{-1} r`` for ``r`` of shape (..., n)."""
        cov = self.covariances[i]
        if isinstance(cov, SpectralCovariance):
            q = cov.basis
            coef = r @ q
            out = r / cov.floor
            out = out + (coef * (1.0 / cov.variances - 1.0 / cov.floor)) @ q.T
            return out
        return r / cov

    def _logdet(self, i):
        cov = self.covariances[i]
        if isinstance(cov, SpectralCovariance):
            return float(np.sum(np.log(cov.variances))
                         + (cov.dim - cov.rank) * np.log(cov.floor))
        return float(np.sum(np.log(cov)))

    def _precision_matrix(self, i):
        cov = self.covariances[i]
        if isinstance(cov, SpectralCovariance):
            q = cov.basis
            out = (q * (1.0 / cov.variances - 1.0 / cov.floor)) @ q.T
            out[np.diag_indices_from(out)] += 1.0 / cov.floor
            return out
        return np.diag(1.0 / cov)

    def _component_terms(self, x):
        """Log joint terms (..., C) and per-component scores (..., C, n)."""
        n = self.dim
        logs = []
        grads = []
        for i in range(self.n_components):
            r = x - self.means[i]
            p = self._precision_apply(i, r)
            maha = np.sum(r * p, axis=-1)
            logs.append(np.log(self.weights[i]) - 0.5 * (n * _LOG_2PI + self._logdet(i) + maha))
            grads.append(-p)
        return np.stack(logs, axis=-1), np.stack(grads, axis=-2)

    def log_density(self, x):
        logs, _ = self._component_terms(x)
        return logsumexp(logs, axis=-1)

    def score(self, x):
        logs, grads = self._component_terms(x)
        resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
        return np.sum(resp[..., None] * grads, axis=-2)

    def hessian(self, x):
        """Hessian of the log-density at a single point."""
        logs, grads = self._component_terms(x)
        resp = np.exp(logs - logsumexp(logs))
        g = resp @ grads
        out = -np.outer(g, g)
        for i in range(self.n_components):
            out += resp[i] * (np.outer(grads[i], grads[i]) - self._precision_matrix(i))
        return 0.5 * (out + out.T)

    def hessian_vp(self, x, v):
        """Hessian-vector product; ``x`` and ``v`` broadcast over leading axes."""
        logs, grads = self._component_terms(x)
        resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
        g = np.sum(resp[..., None] * grads, axis=-2)
        out = -g * np.sum(g * v, axis=-1, keepdims=True)
        for i in range(self.n_components):
            gi = grads[..., i, :]
            term = gi * np.sum(gi * v, axis=-1, keepdims=True) - self._precision_apply(i, v)
            out = out + resp[..., i, None] * term
        return out


def gmm_marginal(prior, schedule, t):
    """Exact time-``t`` marginal of ``prior`` under the VP forward process."""
    t = schedule.check_timestep(t)
    if t == 0:
        return prior
    return prior.diffused(schedule.alpha_bar_at(t))


class ScoreModel(abc.ABC):
    """Time-indexed log-density with its gradient and Hessian.

    ``t`` is a timestep of ``schedule``; integer values index the discrete
    grid and fractional values are accepted for ODE integration. ``x`` may be
    a single vector or a 2-D stack of vectors for :meth:`log_density`,
    :meth:`score` and :meth:`score_jacobian_vp`.

    Subclass this to plug in a learned score network; only :meth:`score`
    is needed by the purification backends, and :meth:`score_jacobian_vp`
    additionally by the posterior-sampling baseline.
    """

    schedule = None

    @abc.abstractmethod
    def log_density(self, x, t):
        """``log p_t(x)``."""

    @abc.abstractmethod
    def score(self, x, t):
        """``grad_x log p_t(x)``."""

    @abc.abstractmethod
    def score_jacobian(self, x, t):
        """Hessian of ``log p_t`` at a single point."""

    def score_jacobian_vp(self, x, t, v):
        return self.score_jacobian(x, t) @ v

    @property
    def dim(self):
        raise NotImplementedError


class GMMScore(ScoreModel):
    """Exact score model of a Gaussian-mixture prior diffused by ``schedule``."""

    def __init__(self, prior, schedule):
        self.prior = prior
        self.schedule = schedule
        self._cache = (None, None)

    @property
    def dim(self):
        return self.prior.dim

    def marginal(self, t):
        cached_t, mix = self._cache
        if cached_t is not None and cached_t == t:
            return mix
        a = self.schedule.alpha_bar_at(t)
        mix = self.prior if a == 1.0 else self.prior.diffused(a)
        # single tuple assignment keeps the memo consistent across threads
        self._cache = (t, mix)
        return mix

    def log_density(self, x, t):
        return self.marginal(t).log_density(x)

    def score(self, x, t):
        return self.marginal(t).score(x)

    def score_jacobian(self, x, t):
        return self.marginal(t).hessian(x)

    def score_jacobian_vp(self, x, t, v):
        return self.marginal(t).hessian_vp(x, v)


class CountingScore(ScoreModel):
    """Wraps a score model and counts evaluations.

    ``nfe`` counts :meth:`score` calls and ``njac`` Jacobian calls (full or
    vector product). A call on a stack of points counts once, as one network
    forward pass would.
    """

    def __init__(self, model):
        self.model = model
        self.schedule = model.schedule
        self.nfe = 0
        self.njac = 0

    @property
    def dim(self):
        return self.model.dim

    def log_density(self, x, t):
        return self.model.log_density(x, t)

    def score(self, x, t):
        self.nfe += 1
        return self.model.score(x, t)

    def score_jacobian(self, x, t):
        self.njac += 1
        return self.model.score_jacobian(x, t)

    def score_jacobian_vp(self, x, t, v):
        self.njac += 1
        return self.model.score_jacobian_vp(x, t, v)


def _check_eval_args(model, x, t):
    x = check_vector(x, "x", size=model.dim, allow_batch=True)
    if model.schedule is not None and not 0 <= t <= model.schedule.n_steps:
        raise ValueError(f"t={t} outside [0, {model.schedule.n_steps}]")
    return x


def score_eval(model, x, t):
    """Validated ``grad log p_t(x)``; rejects non-finite input."""
    return model.score(_check_eval_args(model, x, t), t)


def score_jacobian_eval(model, x, t):
    """Validated Hessian of ``log p_t`` at a single point."""
    x = check_vector(x, "x", size=model.dim)
    _check_eval_args(model, x, t)
    return model.score_jacobian(x, t)


def empirical_score(dataset, bandwidth, schedule):
    """Kernel-density prior: one isotropic Gaussian of variance ``bandwidth**2`` per row."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 1:
        data = data[None, :]
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D array of vectors")
    if not np.all(np.isfinite(data)):
        raise ValueError("dataset contains non-finite values")
    bandwidth = check_scalar(bandwidth, "bandwidth", 0.0, lower_inclusive=False)
    m = data.shape[0]
    prior = GaussianMixture(np.full(m, 1.0 / m), data, [bandwidth ** 2] * m)
    return GMMScore(prior, schedule)
