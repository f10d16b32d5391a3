import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dcdp.operators import ImageShape
from dcdp.schedule import make_vp_schedule
from dcdp.score import GaussianMixture, SpectralCovariance

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def schedule():
    return make_vp_schedule()


@pytest.fixture(scope="session")
def small_shape():
    return ImageShape(8, 8, 1)


def random_gmm(rng, n, n_components=3, kind="mixed"):
    """Random well-conditioned mixture with diagonal, full or low-rank covariances."""
    w = rng.uniform(0.5, 1.5, n_components)
    w /= w.sum()
    means = rng.normal(0.0, 1.0, (n_components, n))
    covs = []
    for i in range(n_components):
        choice = kind if kind != "mixed" else ("diag", "full", "lowrank")[i % 3]
        if choice == "diag":
            covs.append(rng.uniform(0.2, 1.5, n))
        elif choice == "full":
            a = rng.normal(size=(n, n))
            covs.append(a @ a.T / n + 0.3 * np.eye(n))
        else:
            r = max(1, n // 3)
            q, _ = np.linalg.qr(rng.normal(size=(n, r)))
            covs.append(SpectralCovariance(q, rng.uniform(0.5, 2.0, r), 0.3))
    return GaussianMixture(w, means, covs)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request, capsys):
    """``criterion(number, title, passed, detail)`` prints and records one verdict line."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        lines.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
