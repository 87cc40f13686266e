from __future__ import annotations

import numpy as np
from scipy import stats

from pcacftp.grid import STREAM_BASIC, STREAM_FORWARD, STREAM_TV, RandomGrid


def test_uniform_is_a_pure_function_of_the_key():
    g = RandomGrid(7)
    x = np.arange(-50, 50)
    a = g.uniform(3, x, -12, 5)
    b = RandomGrid(7).uniform(3, x, -12, 5)
    assert np.array_equal(a, b)
    # evaluation order and batching do not matter
    c = np.array([g.uniform(3, xi, -12, 5) for xi in x]).ravel()
    assert np.array_equal(a, c)


def test_keys_are_distinguished():
    g = RandomGrid(0)
    base = g.uniform(0, 0, 0, 0, STREAM_BASIC)
    for other in (
        g.uniform(1, 0, 0, 0, STREAM_BASIC),
        g.uniform(0, 1, 0, 0, STREAM_BASIC),
        g.uniform(0, 0, 1, 0, STREAM_BASIC),
        g.uniform(0, 0, 0, 1, STREAM_BASIC),
        g.uniform(0, 0, 0, 0, STREAM_FORWARD),
        RandomGrid(1).uniform(0, 0, 0, 0, STREAM_BASIC),
    ):
        assert other != base


def test_uniform_range_and_distribution():
    g = RandomGrid(11)
    u = g.uniform(0, np.arange(200_000), 0, 0, STREAM_TV)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    # neighbouring keys are uncorrelated
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.01


def test_broadcasting_shapes():
    g = RandomGrid(2)
    u = g.uniform(np.arange(3)[:, None], np.arange(4)[None, :], 0, 0)
    assert u.shape == (3, 4)
    assert u[2, 1] == g.uniform(2, 1, 0, 0)
