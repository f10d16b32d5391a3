"""Data-consistency sub-step: a fixed number of heavy-ball gradient steps on
``0.5 * ||A x - y||^2`` warm-started from the previous prior-consistent iterate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_scalar, check_vector
from .exceptions import NonFiniteError


@dataclass(frozen=True)
class FidelityConfig:
    """Hyperparameters of the gradient loop.

    ``loss_floor`` enables early stopping: the loop ends as soon as the loss
    drops to or below it, which limits overfitting to noisy measurements.
    """

    tau: int = 100
    learning_rate: float = 1.0
    momentum: float = 0.9
    loss_floor: float | None = None

    def __post_init__(self):
        check_int(self.tau, "tau", 0)
        check_scalar(self.learning_rate, "learning_rate", 0.0, lower_inclusive=False)
        check_scalar(self.momentum, "momentum", 0.0, 1.0, upper_inclusive=False)
        if self.loss_floor is not None:
            check_scalar(self.loss_floor, "loss_floor", 0.0)


def fidelity_loss(op, x, y):
    """``0.5 * ||A x - y||^2``."""
    x = check_vector(x, "x", size=op.in_shape.size)
    y = check_vector(y, "y", size=op.out_shape.size)
    r = op.apply(x) - y
    return 0.5 * float(r @ r)


def fidelity_grad(op, x, y):
    """``A^T (A x - y)``."""
    return op.adjoint(op.apply(x) - y)


def _momentum_descent(x, loss_and_grad, cfg, stage):
    losses = []
    u = np.zeros_like(x)
    loss, grad = loss_and_grad(x)
    losses.append(loss)
    # overflow is reported through NonFiniteError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, cfg.tau + 1):
            if cfg.loss_floor is not None and loss <= cfg.loss_floor:
                break
            u = cfg.momentum * u - cfg.learning_rate * grad
            x = x + u
            loss, grad = loss_and_grad(x)
            if not np.isfinite(loss):
                raise NonFiniteError(stage, step, "loss overflowed; lower the learning rate")
            losses.append(loss)
    return x, losses


def data_fidelity(op, y, v_init, cfg, return_losses=False):
    """Run ``cfg.tau`` momentum steps from ``v_init``.

    The velocity starts at zero on every call. With ``return_losses`` the
    loss before the first step and after every step is returned as well.
    """
    y = check_vector(y, "y", size=op.out_shape.size)
    x = check_vector(v_init, "v_init", size=op.in_shape.size).copy()

    def loss_and_grad(z):
        r = op.apply(z) - y
        return 0.5 * float(r @ r), op.adjoint(r)

    x, losses = _momentum_descent(x, loss_and_grad, cfg, "data_fidelity")
    return (x, losses) if return_losses else x


def latent_fidelity_loss(op, codec, z, y):
    r = op.apply(codec.decode(z)) - y
    return 0.5 * float(r @ r)


def data_fidelity_latent(op, y, vhat_init, codec, cfg, return_losses=False):
    """Momentum steps on ``0.5 * ||A D z - y||^2`` over the latent code ``z``.

    The gradient ``D^T A^T (A D z - y)`` back-propagates through the decoder,
    which is what makes this variant costlier than its pixel counterpart.
    """
    y = check_vector(y, "y", size=op.out_shape.size)
    z = check_vector(vhat_init, "vhat_init", size=codec.latent_dim).copy()

    def loss_and_grad(w):
        r = op.apply(codec.decode(w)) - y
        return 0.5 * float(r @ r), codec.decode_adjoint(op.adjoint(r))

    z, losses = _momentum_descent(z, loss_and_grad, cfg, "data_fidelity_latent")
    return (z, losses) if return_losses else z
