import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcdp.schedule import (PurificationSchedule, constant_schedule, make_purification_schedule,
                           make_vp_schedule)


def test_default_schedule_end_value():
    s = make_vp_schedule(1000, 1e-4, 0.02)
    # product of (1 - beta_t) computed with plain floats, frozen
    assert s.alpha_bar[1000] == pytest.approx(4.0358297653756754e-05, rel=1e-10)
    assert s.alpha_bar[1000] < 1e-4


def test_constant_beta_products():
    s = make_vp_schedule(3, 0.01, 0.01)
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.99, 0.9801, 0.970299], rtol=1e-14)


def test_alpha_bar_zero_is_one(schedule):
    assert schedule.alpha_bar[0] == 1.0


def test_beta_endpoints(schedule):
    assert schedule.beta[0] == pytest.approx(1e-4)
    assert schedule.beta[-1] == pytest.approx(0.02)
    assert schedule.beta_at(1) == schedule.beta[0]


@pytest.mark.parametrize("kwargs", [
    dict(n_steps=0), dict(beta_min=0.0), dict(beta_max=1.0), dict(beta_min=0.1, beta_max=0.05),
    dict(beta_min=-0.1),
])
def test_rejects_bad_schedules(kwargs):
    with pytest.raises((ValueError, TypeError)):
        make_vp_schedule(**kwargs)


def test_schedule_is_read_only(schedule):
    with pytest.raises(ValueError):
        schedule.alpha_bar[3] = 0.5


def test_fractional_alpha_bar_interpolates(schedule):
    a = schedule.alpha_bar_at(10.5)
    assert schedule.alpha_bar[11] < a < schedule.alpha_bar[10]
    assert a == pytest.approx(math.sqrt(schedule.alpha_bar[10] * schedule.alpha_bar[11]))
    assert schedule.alpha_bar_at(10) == schedule.alpha_bar[10]


def test_check_timestep(schedule):
    assert schedule.check_timestep(5) == 5
    with pytest.raises(ValueError):
        schedule.check_timestep(1001)
    with pytest.raises(ValueError):
        schedule.check_timestep(0, allow_zero=False)


@given(n=st.integers(1, 400), lo=st.floats(1e-5, 0.05), span=st.floats(0.0, 0.5))
def test_alpha_bar_matches_brute_force_product(n, lo, span):
    hi = min(lo + span, 0.9)
    s = make_vp_schedule(n, lo, hi)
    brute = np.array([math.prod(1.0 - b for b in s.beta[:t]) for t in range(n + 1)])
    np.testing.assert_allclose(s.alpha_bar, brute, rtol=1e-12)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.beta > 0) & (s.beta < 1))


def test_linear_decay_example():
    assert make_purification_schedule(10, 400, 0).times == (400, 356, 311, 267, 222, 178, 133,
                                                            89, 44, 0)


def test_single_element_schedule():
    assert make_purification_schedule(1, 200, 200).times == (200,)


def test_noise_robust_schedule_ends_at_T_end():
    times = make_purification_schedule(10, 400, 200).times
    assert times[0] == 400 and times[-1] == 200
    assert times == (400, 378, 356, 333, 311, 289, 267, 244, 222, 200)


@pytest.mark.parametrize("args", [(0, 400, 0), (5, 100, 200), (5, 400, -1), (1, 400, 0)])
def test_purification_schedule_rejects(args):
    with pytest.raises((ValueError, TypeError)):
        make_purification_schedule(*args)


def test_purification_schedule_bounded_by_n_steps():
    with pytest.raises(ValueError):
        make_purification_schedule(3, 1200, 0, n_steps=1000)


def test_purification_schedule_container():
    s = PurificationSchedule((5, 3, 3, 0))
    assert len(s) == 4 and list(s) == [5, 3, 3, 0] and s[1] == 3
    with pytest.raises(ValueError):
        PurificationSchedule((1, 2))
    assert constant_schedule(3, 40).times == (40, 40, 40)


@given(K=st.integers(1, 60), a=st.integers(0, 1000), b=st.integers(0, 1000))
def test_purification_schedule_monotone(K, a, b):
    start, end = max(a, b), min(a, b)
    if K == 1:
        end = start
    times = make_purification_schedule(K, start, end).times
    assert len(times) == K
    assert times[0] == start and times[-1] == end
    assert all(x >= y for x, y in zip(times, times[1:]))
    # every entry is the rounded linear interpolant
    for k, t in enumerate(times):
        exact = start + (end - start) * k / max(K - 1, 1)
        assert abs(t - exact) <= 0.5 + 1e-9
