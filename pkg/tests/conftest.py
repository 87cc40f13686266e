from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


class ConstantSource:
    """Uniform source returning a fixed value for every key."""

    def __init__(self, u: float):
        self.u = u

    def uniform(self, level, x, t, replica=0, stream=0):
        return np.full(np.broadcast_shapes(np.shape(x), np.shape(t), np.shape(replica)), self.u)

    __call__ = uniform


def type1_family(rng: np.random.Generator):
    """A random family meeting the shared-interval hypothesis, with (e0, eps, gamma)."""
    from pcacftp.coupling import FiniteDistribution

    n_s = int(rng.integers(1, 9))
    n_e = int(rng.integers(1, 7))
    eps = float(rng.uniform(0.001, 0.5))
    gamma = float(rng.uniform(eps, 1.0)) if rng.random() < 0.5 else eps**0.5
    base = rng.dirichlet(np.ones(n_s) * rng.uniform(0.3, 3))
    fam = []
    for _ in range(n_e):
        q = rng.dirichlet(np.ones(n_s))
        s = eps / n_s * rng.uniform(0, 1)
        fam.append(FiniteDistribution.of((1 - s) * base + s * q))
    e0 = int(rng.integers(n_e))
    fam[e0] = FiniteDistribution.of(base)
    return fam, e0, eps, gamma


def type2_family(rng: np.random.Generator):
    from pcacftp.coupling import FiniteDistribution

    n_s = int(rng.integers(1, 9))
    n_e = int(rng.integers(1, 7))
    alpha = rng.uniform(0.2, 3)
    fam = []
    for _ in range(n_e):
        p = rng.dirichlet(np.ones(n_s) * alpha)
        if rng.random() < 0.2:
            p[rng.integers(n_s)] += 0.5
            p /= p.sum()
        fam.append(FiniteDistribution.of(p))
    return fam, int(rng.integers(n_e))


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
