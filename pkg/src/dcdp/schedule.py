"""Discrete variance-preserving noise schedule and purification time schedules.

Timesteps live on the integer grid ``t = 0, 1, ..., N`` where ``t = 0`` is
clean data. ``beta[t - 1]`` is the noise rate of the step ``t - 1 -> t`` and
``alpha_bar[t]`` the cumulative signal fraction, so that

    x_t = sqrt(alpha_bar[t]) * x_0 + sqrt(1 - alpha_bar[t]) * eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_int, check_scalar

DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02
DEFAULT_N_STEPS = 1000


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Linear-beta VP schedule.

    Attributes
    ----------
    n_steps : int
        Number of diffusion steps ``N``.
    beta : ndarray of shape (N,)
        ``beta[t - 1]`` is the per-step noise rate at timestep ``t``.
    alpha_bar : ndarray of shape (N + 1,)
        Cumulative products with ``alpha_bar[0] == 1``.
    """

    n_steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        alpha_bar = np.array(self.alpha_bar, dtype=np.float64)
        if beta.shape != (self.n_steps,) or alpha_bar.shape != (self.n_steps + 1,):
            raise ValueError("beta must have N entries and alpha_bar N + 1")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        beta.setflags(write=False)
        alpha_bar.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        # log(alpha_bar) is piecewise linear between grid points; used for
        # fractional times by the probability-flow integrator.
        object.__setattr__(self, "_log_alpha_bar", np.log(alpha_bar))

    def beta_at(self, t):
        """Noise rate of the integer step ``t`` (1 <= t <= N)."""
        t = check_int(t, "t", 1, self.n_steps)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t):
        """``alpha_bar`` at a (possibly fractional) time in ``[0, N]``.

        Integer times index the table exactly; fractional times interpolate
        ``log alpha_bar`` linearly, which corresponds to a constant continuous
        noise rate on each unit interval.
        """
        if isinstance(t, (int, np.integer)):
            if not 0 <= t <= self.n_steps:
                raise ValueError(f"t={t} outside [0, {self.n_steps}]")
            return float(self.alpha_bar[t])
        t = float(t)
        if not 0.0 <= t <= self.n_steps:
            raise ValueError(f"t={t} outside [0, {self.n_steps}]")
        if t == int(t):
            return float(self.alpha_bar[int(t)])
        grid = np.arange(self.n_steps + 1, dtype=np.float64)
        return float(np.exp(np.interp(t, grid, self._log_alpha_bar)))

    def check_timestep(self, t, name="t", allow_zero=True):
        return check_int(t, name, 0 if allow_zero else 1, self.n_steps)


def make_vp_schedule(n_steps=DEFAULT_N_STEPS, beta_min=DEFAULT_BETA_MIN,
                     beta_max=DEFAULT_BETA_MAX):
    """Build a schedule with beta linearly interpolated over ``t = 1..N``."""
    n_steps = check_int(n_steps, "n_steps", 1)
    beta_min = check_scalar(beta_min, "beta_min", 0.0, 1.0, False, False)
    beta_max = check_scalar(beta_max, "beta_max", 0.0, 1.0, False, False)
    if beta_min > beta_max:
        raise ValueError("beta_min must not exceed beta_max")
    beta = np.linspace(beta_min, beta_max, n_steps)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    return NoiseSchedule(n_steps, beta, alpha_bar)


@dataclass(frozen=True)
class PurificationSchedule:
    """Purification strengths ``T_1 >= T_2 >= ... >= T_K`` for the outer loop."""

    times: tuple

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        if not times:
            raise ValueError("a purification schedule needs at least one time")
        if any(t < 0 for t in times):
            raise ValueError("purification times must be non-negative")
        if any(a < b for a, b in zip(times, times[1:])):
            raise ValueError("purification times must be non-increasing")
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        return iter(self.times)

    def __getitem__(self, k):
        return self.times[k]


def make_purification_schedule(K, T_start, T_end, n_steps=None):
    """Linearly decaying integer times from ``T_start`` to ``T_end``.

    Intermediate values are rounded half-up from the exact rational
    interpolant, so both endpoints are hit exactly.

    >>> make_purification_schedule(10, 400, 0).times[:3]
    (400, 356, 311)
    """
    K = check_int(K, "K", 1)
    T_start = check_int(T_start, "T_start", 0)
    T_end = check_int(T_end, "T_end", 0)
    if T_end > T_start:
        raise ValueError(f"T_end={T_end} exceeds T_start={T_start}")
    if n_steps is not None and T_start > n_steps:
        raise ValueError(f"T_start={T_start} exceeds the schedule length {n_steps}")
    if K == 1:
        if T_start != T_end:
            raise ValueError("K=1 requires T_start == T_end")
        return PurificationSchedule((T_start,))
    den = K - 1
    times = []
    for k in range(K):
        num = T_start * den + k * (T_end - T_start)
        times.append((2 * num + den) // (2 * den))
    return PurificationSchedule(tuple(times))


def constant_schedule(K, T):
    """``K`` repetitions of the same purification time."""
    return make_purification_schedule(K, T, T)
