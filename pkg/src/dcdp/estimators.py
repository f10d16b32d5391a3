"""Scikit-learn style wrappers around the solvers.

``fit`` builds the score model, either from a supplied prior or, when none
is given, as a kernel mixture over the rows of ``X`` (clean training
images). ``transform`` (alias ``predict``) restores a stack of
measurements, one per row, and keeps the per-row :class:`SolveResult`
objects in ``results_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .latent import LinearCodec, PCACodec, encode_prior
from .purify import parse_backend
from .schedule import make_purification_schedule, make_vp_schedule
from .score import GaussianMixture, GMMScore, ScoreModel, empirical_score
from .fidelity import FidelityConfig
from .solver import DpsConfig, SolverConfig, dcdp_solve, dcdp_solve_latent, dps_solve


def _build_score(prior, X, bandwidth, schedule):
    if isinstance(prior, ScoreModel):
        return prior
    if isinstance(prior, GaussianMixture):
        return GMMScore(prior, schedule)
    if prior is not None:
        raise TypeError("prior must be a GaussianMixture, a ScoreModel or None")
    if X is None:
        raise ValueError("fit needs training images X when no prior is given")
    X = check_array(X, dtype=np.float64)
    return empirical_score(X, bandwidth, schedule)


class _RestorerBase(TransformerMixin, BaseEstimator):

    def _schedule(self):
        return make_vp_schedule(self.n_diffusion_steps)

    def _measurements(self, Y):
        Y = check_array(np.atleast_2d(np.asarray(Y, dtype=np.float64)), dtype=np.float64)
        size = self.operator.out_shape.size
        if Y.shape[1] != size:
            raise ValueError(f"measurements have length {Y.shape[1]}, operator expects {size}")
        return Y

    def transform(self, Y):
        """Restore every row of ``Y``; returns an array of reconstructions."""
        check_is_fitted(self, "score_")
        Y = self._measurements(Y)
        self.results_ = [self._solve(y, self._row_seed(i)) for i, y in enumerate(Y)]
        return np.stack([r.reconstruction for r in self.results_])

    def predict(self, Y):
        return self.transform(Y)

    def _row_seed(self, i):
        return int(np.random.SeedSequence([self.seed, i]).generate_state(1)[0])


class DCDPRestorer(_RestorerBase):
    """Pixel-space decoupled solver.

    Parameters
    ----------
    operator : LinearOperator
    prior : GaussianMixture, ScoreModel or None
        ``None`` builds a kernel-mixture prior from the training rows in ``fit``.
    K, tau, learning_rate, momentum : outer iterations and gradient loop settings.
    T_start, T_end : ends of the linearly decaying purification schedule.
    backend : str
        ``"ddim:20"``, ``"tweedie"``, ``"ancestral"`` or ``"flow:N"``.
    bandwidth : float
        Kernel width of the training-data prior.
    """

    def __init__(self, operator=None, prior=None, K=10, tau=100, learning_rate=1.0,
                 momentum=0.9, T_start=400, T_end=0, backend="ddim:20", seed=0,
                 loss_floor=None, bandwidth=0.1, n_diffusion_steps=1000):
        self.operator = operator
        self.prior = prior
        self.K = K
        self.tau = tau
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.T_start = T_start
        self.T_end = T_end
        self.backend = backend
        self.seed = seed
        self.loss_floor = loss_floor
        self.bandwidth = bandwidth
        self.n_diffusion_steps = n_diffusion_steps

    def fit(self, X=None, y=None):
        if self.operator is None:
            raise ValueError("operator is required")
        self.schedule_ = self._schedule()
        self.score_ = _build_score(self.prior, X, self.bandwidth, self.schedule_)
        self.config_ = self._config(self.seed)
        return self

    def _config(self, seed):
        return SolverConfig(
            K=self.K,
            fidelity=FidelityConfig(self.tau, self.learning_rate, self.momentum, self.loss_floor),
            purify_backend=parse_backend(self.backend),
            purify_schedule=make_purification_schedule(self.K, self.T_start, self.T_end,
                                                       self.n_diffusion_steps),
            seed=seed,
        )

    def _solve(self, y, seed):
        return dcdp_solve(self.operator, y, self.score_, self.schedule_, self._config(seed),
                          keep_iterates=False)


class LatentDCDPRestorer(DCDPRestorer):
    """Latent variant; the codec is a PCA codec fitted on ``X`` unless given.

    ``prior`` is a pixel-space mixture pushed through the encoder, or a
    latent :class:`ScoreModel` used as is.
    """

    def __init__(self, operator=None, prior=None, codec=None, n_components=64,
                 approach="pixel_dc", K=10, tau=100, learning_rate=1.0, momentum=0.9,
                 T_start=400, T_end=0, backend="ddim:20", seed=0, loss_floor=None,
                 bandwidth=0.1, n_diffusion_steps=1000):
        super().__init__(operator, prior, K, tau, learning_rate, momentum, T_start, T_end,
                         backend, seed, loss_floor, bandwidth, n_diffusion_steps)
        self.codec = codec
        self.n_components = n_components
        self.approach = approach

    def fit(self, X=None, y=None):
        if self.operator is None:
            raise ValueError("operator is required")
        self.schedule_ = self._schedule()
        if isinstance(self.codec, LinearCodec):
            self.codec_ = self.codec
        elif X is not None:
            self.codec_ = PCACodec(self.n_components).fit(X).codec_
        else:
            raise ValueError("fit needs a codec or training images X")
        if isinstance(self.prior, GaussianMixture):
            self.score_ = GMMScore(encode_prior(self.prior, self.codec_), self.schedule_)
        elif self.prior is None:
            Z = self.codec_.encode(check_array(X, dtype=np.float64))
            self.score_ = empirical_score(Z, self.bandwidth, self.schedule_)
        else:
            self.score_ = _build_score(self.prior, None, self.bandwidth, self.schedule_)
        self.config_ = self._config(self.seed)
        return self

    def _config(self, seed):
        cfg = super()._config(seed)
        return SolverConfig(cfg.K, cfg.fidelity, cfg.purify_backend, cfg.purify_schedule,
                            seed, latent_approach=self.approach)

    def _solve(self, y, seed):
        return dcdp_solve_latent(self.operator, y, self.score_, self.schedule_, self.codec_,
                                 self._config(seed), keep_iterates=False)


class DPSRestorer(_RestorerBase):
    """Posterior-sampling baseline with likelihood step ``eta``."""

    def __init__(self, operator=None, prior=None, eta=1.0, seed=0, bandwidth=0.1,
                 n_diffusion_steps=1000, guard=1e6):
        self.operator = operator
        self.prior = prior
        self.eta = eta
        self.seed = seed
        self.bandwidth = bandwidth
        self.n_diffusion_steps = n_diffusion_steps
        self.guard = guard

    def fit(self, X=None, y=None):
        if self.operator is None:
            raise ValueError("operator is required")
        self.schedule_ = self._schedule()
        self.score_ = _build_score(self.prior, X, self.bandwidth, self.schedule_)
        return self

    def _solve(self, y, seed):
        cfg = DpsConfig(self.n_diffusion_steps, self.eta, seed, self.guard)
        return dps_solve(self.operator, y, self.score_, self.schedule_, cfg)
