"""Diffusion purification: diffuse an estimate to time ``T`` and map it back.

Four reverse maps are provided:

``AncestralSDE``
    ``x_{t-1} = (x_t + beta_t s(x_t, t)) / sqrt(1 - beta_t) + sqrt(beta_t) eps``
    for ``t = T..1``; the last step adds no noise.
``DDIM``
    deterministic (eta = 0) steps on a uniform integer sub-grid.
``Tweedie``
    one-step posterior mean ``(x_T + (1 - a_T) s(x_T, T)) / sqrt(a_T)``.
``FlowODE``
    RK4 integration of the probability-flow ODE; a numerical stand-in for a
    one-step consistency model.

Every backend calls ``score.score`` with the true score ``grad log p_t``.
Wrap the model in :class:`~dcdp.score.CountingScore` to count evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_vector, make_rng
from .exceptions import NonFiniteError


@dataclass(frozen=True)
class AncestralSDE:
    name = "ancestral"


@dataclass(frozen=True)
class DDIM:
    n_steps: int = 20
    name = "ddim"

    def __post_init__(self):
        check_int(self.n_steps, "n_steps", 1)


@dataclass(frozen=True)
class Tweedie:
    name = "tweedie"


@dataclass(frozen=True)
class FlowODE:
    n_steps: int = 20
    name = "flow"

    def __post_init__(self):
        check_int(self.n_steps, "n_steps", 1)


RK4_STAGES = 4


def parse_backend(text):
    """``"ancestral"``, ``"tweedie"``, ``"ddim[:N]"`` or ``"flow[:N]"``."""
    name, _, arg = str(text).strip().lower().partition(":")
    if name in ("ancestral", "sde"):
        return AncestralSDE()
    if name == "tweedie":
        return Tweedie()
    if name == "ddim":
        return DDIM(int(arg)) if arg else DDIM()
    if name in ("flow", "flow_ode", "cm"):
        return FlowODE(int(arg)) if arg else FlowODE()
    raise ValueError(f"unknown purification backend {text!r}")


def backend_label(backend):
    n = getattr(backend, "n_steps", None)
    return backend.name if n is None else f"{backend.name}:{n}"


def _check_state(x, stage, step):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(stage, step)


def _record(trace, t, x, score):
    if trace is not None:
        trace.append((t, float(np.linalg.norm(x)), getattr(score, "nfe", None)))


def forward_diffuse(x, T, schedule, seed):
    """``sqrt(a_T) x + sqrt(1 - a_T) eps``; ``x`` may be a stack of vectors."""
    T = schedule.check_timestep(T, "T")
    x = np.asarray(x, dtype=np.float64)
    if T == 0:
        return x.copy()
    a = schedule.alpha_bar[T]
    eps = make_rng(seed).standard_normal(x.shape)
    return np.sqrt(a) * x + np.sqrt(1.0 - a) * eps


def reverse_sde(x_T, T, score, schedule, seed, trace=None):
    """Ancestral sampling from step ``T`` down to 0 (``T`` score evaluations)."""
    T = schedule.check_timestep(T, "T")
    x = np.array(x_T, dtype=np.float64, copy=True)
    rng = make_rng(seed)
    _record(trace, T, x, score)
    for t in range(T, 0, -1):
        beta = schedule.beta[t - 1]
        x = (x + beta * score.score(x, t)) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
        _check_state(x, "reverse_sde", t)
        _record(trace, t - 1, x, score)
    return x


def tweedie_denoise(x_T, T, score, schedule):
    """Posterior mean ``E[x_0 | x_T]`` from one score evaluation.

    ``T = 0`` returns the input unchanged without evaluating the score.
    """
    T = schedule.check_timestep(T, "T")
    x = np.asarray(x_T, dtype=np.float64)
    if T == 0:
        return x.copy()
    a = schedule.alpha_bar[T]
    out = (x + (1.0 - a) * score.score(x, T)) / np.sqrt(a)
    _check_state(out, "tweedie_denoise", T)
    return out


def ddim_grid(T, n_steps):
    """Uniform integer sub-grid ``T = t_0 > t_1 > ... > t_n = 0``."""
    grid = np.floor(np.linspace(T, 0, n_steps + 1) + 0.5).astype(int)
    if np.any(np.diff(grid) >= 0):
        raise ValueError(f"cannot place {n_steps} distinct steps below T={T}")
    return [int(t) for t in grid]


def ddim_reverse(x_T, T, score, schedule, n_steps, trace=None):
    """Deterministic DDIM from ``T`` to 0 in ``n_steps`` score evaluations.

    Requires ``1 <= n_steps <= T``.
    """
    T = schedule.check_timestep(T, "T", allow_zero=False)
    n_steps = check_int(n_steps, "n_steps", 1, T)
    ab = schedule.alpha_bar
    x = np.array(x_T, dtype=np.float64, copy=True)
    grid = ddim_grid(T, n_steps)
    _record(trace, T, x, score)
    for t, t_next in zip(grid[:-1], grid[1:]):
        x0 = (x + (1.0 - ab[t]) * score.score(x, t)) / np.sqrt(ab[t])
        if t_next == 0:
            x = x0
        else:
            eps = (x - np.sqrt(ab[t]) * x0) / np.sqrt(1.0 - ab[t])
            x = np.sqrt(ab[t_next]) * x0 + np.sqrt(1.0 - ab[t_next]) * eps
        _check_state(x, "ddim_reverse", t)
        _record(trace, t_next, x, score)
    return x


def _time_of_log_alpha_bar(schedule, lam):
    # inverse of the piecewise-linear log(alpha_bar) used by alpha_bar_at
    log_ab = schedule._log_alpha_bar
    grid = np.arange(schedule.n_steps + 1, dtype=np.float64)
    return float(np.interp(lam, log_ab[::-1], grid[::-1]))


def flow_ode_map(x_T, T, score, schedule, n_steps, trace=None):
    """Integrate the probability-flow ODE from ``T`` to 0 with RK4.

    With ``lam = log alpha_bar(t)`` the ODE reads
    ``dx/dlam = (x + s(x, t(lam))) / 2``, which is smooth in ``lam`` even
    though the discrete noise rates are piecewise constant in ``t``. One RK4
    step is taken between consecutive points of the DDIM sub-grid, costing
    ``4 * n_steps`` score evaluations.
    """
    T = schedule.check_timestep(T, "T")
    x = np.array(x_T, dtype=np.float64, copy=True)
    if T == 0:
        return x
    n_steps = check_int(n_steps, "n_steps", 1, T)
    log_ab = schedule._log_alpha_bar

    def drift(z, lam, exact_t=None):
        t = exact_t if exact_t is not None else _time_of_log_alpha_bar(schedule, lam)
        return 0.5 * (z + score.score(z, t))

    _record(trace, T, x, score)
    grid = ddim_grid(T, n_steps)
    for t, t_next in zip(grid[:-1], grid[1:]):
        lam0, lam1 = log_ab[t], log_ab[t_next]
        h = lam1 - lam0
        lam_mid = lam0 + 0.5 * h
        k1 = drift(x, lam0, t)
        k2 = drift(x + 0.5 * h * k1, lam_mid)
        k3 = drift(x + 0.5 * h * k2, lam_mid)
        k4 = drift(x + h * k3, lam1, t_next)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check_state(x, "flow_ode_map", t)
        _record(trace, t_next, x, score)
    return x


def dpur(x, T, backend, score, schedule, seed, trace=None):
    """Purify ``x`` at strength ``T`` with the chosen backend.

    Fresh forward noise is drawn from ``seed``; the ancestral backend keeps
    drawing its reverse noise from the same stream. ``T = 0`` returns ``x``
    unchanged for every backend. Step counts larger than ``T`` are clipped
    to ``T``.
    """
    T = schedule.check_timestep(T, "T")
    x = check_vector(x, "x", allow_batch=True)
    if T == 0:
        return x.copy()
    rng = make_rng(seed)
    x_T = forward_diffuse(x, T, schedule, rng)
    if isinstance(backend, AncestralSDE):
        return reverse_sde(x_T, T, score, schedule, rng, trace=trace)
    if isinstance(backend, Tweedie):
        return tweedie_denoise(x_T, T, score, schedule)
    if isinstance(backend, DDIM):
        return ddim_reverse(x_T, T, score, schedule, min(backend.n_steps, T), trace=trace)
    if isinstance(backend, FlowODE):
        return flow_ode_map(x_T, T, score, schedule, min(backend.n_steps, T), trace=trace)
    raise TypeError(f"unsupported purification backend {backend!r}")


def expected_nfe(backend, T):
    """Score evaluations one purification at strength ``T`` consumes."""
    if T == 0:
        return 0
    if isinstance(backend, AncestralSDE):
        return T
    if isinstance(backend, Tweedie):
        return 1
    if isinstance(backend, DDIM):
        return min(backend.n_steps, T)
    if isinstance(backend, FlowODE):
        return RK4_STAGES * min(backend.n_steps, T)
    raise TypeError(f"unsupported purification backend {backend!r}")
