"""Decoupled data consistency with diffusion purification for linear inverse problems.

Analytic Gaussian-mixture score models stand in for a trained diffusion
network, so every component can be checked against closed-form answers.
"""

from .estimators import DCDPRestorer, DPSRestorer, LatentDCDPRestorer
from .exceptions import ConfigError, DivergenceError, NonFiniteError
from .fidelity import (FidelityConfig, data_fidelity, data_fidelity_latent, fidelity_grad,
                       fidelity_loss)
from .latent import LinearCodec, PCACodec, encode_prior, make_pca_codec, re_encode
from .metrics import (PSNR_IDENTICAL, MetricReport, gaussian_posterior_oracle, mse, psnr,
                      report, ssim)
from .operators import (ImageShape, LinearOperator, Measurement, adjoint_check,
                        gaussian_kernel, make_blur, make_centered_inpainting, make_downsample,
                        make_identity, make_inpainting, measure, motion_kernel,
                        parse_operator_spec)
from .purify import (DDIM, AncestralSDE, FlowODE, Tweedie, ddim_reverse, dpur, expected_nfe,
                     flow_ode_map, forward_diffuse, parse_backend, reverse_sde, tweedie_denoise)
from .schedule import (NoiseSchedule, PurificationSchedule, constant_schedule,
                       make_purification_schedule, make_vp_schedule)
from .score import (CountingScore, GaussianMixture, GMMScore, ScoreModel, SpectralCovariance,
                    empirical_score, gmm_marginal, score_eval, score_jacobian_eval)
from .solver import (DpsConfig, IterationRecord, LatentApproach, SolveResult, SolverConfig,
                     dcdp_solve, dcdp_solve_latent, dps_likelihood_grad, dps_solve,
                     fidelity_only_solve, nfe_counter)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
