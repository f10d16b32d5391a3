import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from dcdp.fidelity import FidelityConfig, data_fidelity
from dcdp.operators import measure
from dcdp.purify import (DDIM, RK4_STAGES, AncestralSDE, FlowODE, Tweedie, backend_label,
                         ddim_grid, ddim_reverse, dpur, expected_nfe, flow_ode_map,
                         forward_diffuse, parse_backend, reverse_sde, tweedie_denoise)
from dcdp.schedule import make_vp_schedule
from dcdp.score import CountingScore, GaussianMixture, GMMScore
from dcdp.toy import make_image_prior, make_operator

BACKENDS = [AncestralSDE(), DDIM(20), Tweedie(), FlowODE(10)]


def std_normal(schedule, n=4):
    return GMMScore(GaussianMixture([1.0], [np.zeros(n)], [1.0]), schedule)


def gaussian_posterior_mean(mu, cov, a, x):
    """E[x0 | x_t = x] for x0 ~ N(mu, cov) via joint-Gaussian conditioning."""
    n = mu.size
    cross = math.sqrt(a) * cov
    marg = a * cov + (1 - a) * np.eye(n)
    return mu + cross @ np.linalg.solve(marg, x - math.sqrt(a) * mu)


# -- forward -----------------------------------------------------------------

def test_forward_t0_exact(schedule):
    x = np.random.default_rng(0).normal(size=5)
    np.testing.assert_array_equal(forward_diffuse(x, 0, schedule, 1), x)


def test_forward_moments_quarter_alpha():
    sched = make_vp_schedule(1, 0.75, 0.75)
    x = np.array([1.0, -2.0, 0.5])
    draws = forward_diffuse(np.tile(x, (100_000, 1)), 1, sched, 2)
    se = math.sqrt(0.75 / 100_000)
    assert np.all(np.abs(draws.mean(0) - 0.5 * x) < 4 * se)


def test_forward_deterministic(schedule):
    x = np.ones(4)
    np.testing.assert_array_equal(forward_diffuse(x, 100, schedule, 3),
                                  forward_diffuse(x, 100, schedule, 3))
    with pytest.raises(ValueError):
        forward_diffuse(x, 1001, schedule, 0)


# -- ancestral ---------------------------------------------------------------

def test_reverse_sde_t0_identity(schedule):
    x = np.arange(4.0)
    np.testing.assert_array_equal(reverse_sde(x, 0, std_normal(schedule), schedule, 0), x)


def test_reverse_sde_counts_T_evaluations(schedule):
    model = CountingScore(std_normal(schedule))
    reverse_sde(np.zeros(4), 37, model, schedule, 0)
    assert model.nfe == 37


def test_reverse_sde_samples_standard_normal(schedule):
    n_samples = 20_000
    x_T = np.random.default_rng(1).standard_normal((n_samples, 2))
    out = reverse_sde(x_T, 1000, std_normal(schedule, 2), schedule, 2)
    assert np.all(np.abs(out.mean(0)) < 4 / math.sqrt(n_samples))
    cov = np.cov(out.T)
    # the noiseless last step shrinks the variance by beta_1 = 1e-4 only
    assert np.all(np.abs(cov - np.eye(2)) < 4 * math.sqrt(2 / n_samples))


def test_reverse_sde_gaussian_posterior_sampling():
    # from a fixed x_T the ancestral sampler draws from p(x0 | x_T)
    sched = make_vp_schedule(200)
    mu, var = np.array([0.5]), 0.3
    model = GMMScore(GaussianMixture([1.0], [mu], [var]), sched)
    T = 60
    a = sched.alpha_bar[T]
    x_T = np.full((40_000, 1), 0.8)
    out = reverse_sde(x_T, T, model, sched, 3)
    m = gaussian_posterior_mean(mu, np.array([[var]]), a, x_T[0])
    post_var = var * (1 - a) / (a * var + 1 - a)
    assert abs(out.mean() - m[0]) < 0.01
    assert abs(out.var() - post_var) / post_var < 0.05


# -- DDIM --------------------------------------------------------------------

def test_ddim_deterministic(schedule):
    prior = make_image_prior(seed=0)
    model = GMMScore(prior, schedule)
    x = np.random.default_rng(2).normal(size=1024)
    np.testing.assert_array_equal(ddim_reverse(x, 300, model, schedule, 20),
                                  ddim_reverse(x, 300, model, schedule, 20))


def test_ddim_single_step_is_tweedie(schedule):
    model = GMMScore(make_image_prior(seed=1), schedule)
    x = np.random.default_rng(3).normal(size=1024)
    np.testing.assert_array_equal(ddim_reverse(x, 250, model, schedule, 1),
                                  tweedie_denoise(x, 250, model, schedule))


@pytest.mark.parametrize("T, n", [(400, 20), (1000, 7), (50, 50)])
def test_ddim_standard_normal_closed_form(schedule, T, n):
    # with score -x every DDIM step is the rotation x -> cos(theta_t - theta_t') x,
    # theta = arccos(sqrt(alpha_bar)); the output is the product of those cosines
    x = np.random.default_rng(4).normal(size=4)
    out = ddim_reverse(x, T, std_normal(schedule), schedule, n)
    grid = ddim_grid(T, n)
    theta = np.arccos(np.sqrt(schedule.alpha_bar[grid]))
    coef = np.prod(np.cos(theta[:-1] - theta[1:]))
    np.testing.assert_allclose(out, coef * x, rtol=1e-12)
    if n > 1:
        # more than one step is not the one-step posterior mean
        assert abs(coef - math.sqrt(schedule.alpha_bar[T])) > 1e-3


def test_ddim_counts_n_steps(schedule):
    model = CountingScore(std_normal(schedule))
    ddim_reverse(np.zeros(4), 400, model, schedule, 20)
    assert model.nfe == 20


def test_ddim_grid():
    assert ddim_grid(10, 5) == [10, 8, 6, 4, 2, 0]
    assert ddim_grid(7, 7) == list(range(7, -1, -1))
    g = ddim_grid(400, 20)
    assert g[0] == 400 and g[-1] == 0 and len(g) == 21


def test_ddim_rejects_too_many_steps(schedule):
    with pytest.raises(ValueError):
        ddim_reverse(np.zeros(4), 5, std_normal(schedule), schedule, 6)


# -- Tweedie -----------------------------------------------------------------

def test_tweedie_standard_normal(schedule):
    x = np.random.default_rng(5).normal(size=4)
    for T in (1, 100, 1000):
        np.testing.assert_allclose(tweedie_denoise(x, T, std_normal(schedule), schedule),
                                   math.sqrt(schedule.alpha_bar[T]) * x, rtol=1e-10)


def test_tweedie_matches_conditional_mean(schedule):
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = 5
        mu = rng.normal(size=n)
        a_ = rng.normal(size=(n, n))
        cov = a_ @ a_.T / n + 0.1 * np.eye(n)
        model = GMMScore(GaussianMixture([1.0], [mu], [cov]), schedule)
        T = int(rng.integers(1, 1001))
        x = rng.normal(size=n)
        ref = gaussian_posterior_mean(mu, cov, schedule.alpha_bar[T], x)
        assert np.max(np.abs(tweedie_denoise(x, T, model, schedule) - ref)) < 1e-8


def test_tweedie_mode_fixed_point(schedule):
    mu = np.array([0.3, -0.7])
    model = GMMScore(GaussianMixture([1.0], [mu], [np.array([0.2, 0.5])]), schedule)
    a = schedule.alpha_bar[321]
    np.testing.assert_allclose(tweedie_denoise(math.sqrt(a) * mu, 321, model, schedule), mu,
                               atol=1e-14)


def test_tweedie_t0(schedule):
    x = np.ones(4)
    np.testing.assert_array_equal(tweedie_denoise(x, 0, std_normal(schedule), schedule), x)


# -- probability-flow ODE ----------------------------------------------------

def test_flow_standard_normal_identity(schedule):
    x = np.random.default_rng(7).normal(size=4)
    np.testing.assert_allclose(flow_ode_map(x, 700, std_normal(schedule), schedule, 10), x,
                               rtol=1e-14)


def scalar_flow_oracle(schedule, T, mu0, var0, x_T):
    """Integrate dx/dlam = (x + s(x, lam)) / 2 at tight tolerance, lam = log alpha_bar."""
    def rhs(lam, x):
        a = math.exp(lam)
        return 0.5 * (x - (x - math.sqrt(a) * mu0) / (a * var0 + 1 - a))
    lam_T = math.log(schedule.alpha_bar[T])
    sol = solve_ivp(rhs, (lam_T, 0.0), [x_T], rtol=1e-12, atol=1e-13, method="DOP853")
    return sol.y[0, -1]


@pytest.mark.parametrize("mu0, sigma0, T", [(0.5, 0.3, 400), (-1.0, 2.0, 1000), (2.0, 0.1, 150)])
def test_flow_gaussian_matches_scalar_oracle(schedule, mu0, sigma0, T):
    n = 6
    model = GMMScore(GaussianMixture([1.0], [np.full(n, mu0)], [sigma0 ** 2]), schedule)
    x = np.random.default_rng(8).normal(size=n)
    out = flow_ode_map(x, T, model, schedule, 20)
    ref = np.array([scalar_flow_oracle(schedule, T, mu0, sigma0 ** 2, xi) for xi in x])
    assert np.max(np.abs(out - ref)) < 1e-4


def test_flow_counts_rk4_stages(schedule):
    model = CountingScore(std_normal(schedule))
    flow_ode_map(np.zeros(4), 300, model, schedule, 5)
    assert model.nfe == 5 * RK4_STAGES


def test_flow_deterministic(schedule):
    model = GMMScore(make_image_prior(seed=2), schedule)
    x = np.random.default_rng(9).normal(size=1024)
    np.testing.assert_array_equal(flow_ode_map(x, 200, model, schedule, 4),
                                  flow_ode_map(x, 200, model, schedule, 4))


# -- dispatcher --------------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS, ids=backend_label)
def test_dpur_zero_is_identity(schedule, backend):
    model = CountingScore(std_normal(schedule))
    x = np.random.default_rng(10).normal(size=4)
    np.testing.assert_array_equal(dpur(x, 0, backend, model, schedule, 0), x)
    assert model.nfe == 0


def test_dpur_tweedie_equals_single_step_ddim(schedule):
    model = GMMScore(make_image_prior(seed=3), schedule)
    x = np.random.default_rng(11).normal(size=1024)
    np.testing.assert_array_equal(dpur(x, 200, Tweedie(), model, schedule, 5),
                                  dpur(x, 200, DDIM(1), model, schedule, 5))


@pytest.mark.parametrize("backend", BACKENDS, ids=backend_label)
@pytest.mark.parametrize("T", [1, 3, 40, 400])
def test_nfe_accounting_exact(schedule, backend, T):
    model = CountingScore(std_normal(schedule))
    dpur(np.zeros(4), T, backend, model, schedule, 0)
    assert model.nfe == expected_nfe(backend, T)


@pytest.mark.parametrize("backend", BACKENDS, ids=backend_label)
def test_dpur_deterministic_per_seed(schedule, backend):
    model = GMMScore(make_image_prior(seed=4), schedule)
    x = np.random.default_rng(12).normal(size=1024)
    np.testing.assert_array_equal(dpur(x, 60, backend, model, schedule, 9),
                                  dpur(x, 60, backend, model, schedule, 9))


def test_purification_removes_first_iteration_artifacts(schedule):
    # At T = 700 alpha_bar is about 0.007 and the output is nearly a fresh prior
    # draw, so the property is checked at a moderate purification time.
    prior = make_image_prior(seed=0)
    model = GMMScore(prior, schedule)
    op = make_operator("inpaint")
    wins = 0
    for seed in range(50):
        x_star = prior.sample(1, 1000 + seed)[0]
        y = measure(op, x_star, 0.0, seed).y
        x1 = data_fidelity(op, y, np.zeros(1024), FidelityConfig(50, 1.0, 0.9))
        v1 = dpur(x1, 100, DDIM(20), model, schedule, seed)
        wins += np.linalg.norm(v1 - x_star) < np.linalg.norm(x1 - x_star)
    assert wins / 50 >= 0.8


def test_backends_near_gaussian_posterior_mean(schedule):
    rng = np.random.default_rng(13)
    n, T = 6, 300
    mu = rng.normal(size=n)
    var = rng.uniform(0.1, 1.0, n)
    model = GMMScore(GaussianMixture([1.0], [mu], [var]), schedule)
    x_T = rng.normal(size=n)
    a = schedule.alpha_bar[T]
    post = gaussian_posterior_mean(mu, np.diag(var), a, x_T)
    draws = reverse_sde(np.tile(x_T, (4000, 1)), T, model, schedule, 14)
    spread = math.sqrt(np.mean(np.sum((draws - post) ** 2, axis=1)))
    outs = {
        "ancestral": draws.mean(0),
        "ddim": ddim_reverse(x_T, T, model, schedule, 20),
        "tweedie": tweedie_denoise(x_T, T, model, schedule),
        "flow": flow_ode_map(x_T, T, model, schedule, 20),
    }
    for name, out in outs.items():
        assert np.linalg.norm(out - post) <= spread, name


def test_parse_backend():
    assert parse_backend("ddim:7") == DDIM(7)
    assert parse_backend("ddim") == DDIM(20)
    assert parse_backend("Tweedie") == Tweedie()
    assert parse_backend("ancestral") == AncestralSDE()
    assert parse_backend("flow:3") == FlowODE(3)
    assert backend_label(DDIM(7)) == "ddim:7" and backend_label(Tweedie()) == "tweedie"
    with pytest.raises(ValueError):
        parse_backend("euler")
    with pytest.raises(ValueError):
        DDIM(0)


def test_step_count_clipped_to_T(schedule):
    model = CountingScore(std_normal(schedule))
    dpur(np.zeros(4), 5, DDIM(20), model, schedule, 0)
    assert model.nfe == 5 == expected_nfe(DDIM(20), 5)
