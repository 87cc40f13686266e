from __future__ import annotations

import numpy as np
import pytest

from pcacftp.core import Alphabet
from pcacftp.experiments import loglinear_fit, parse_initial, tv_decay, tv_plugin
from pcacftp.models import constant_rows, noisy_majority


def test_loglinear_fit_recovers_exact_decay():
    t = np.arange(1, 11)
    A, B, sA, sB, res = loglinear_fit(t, 3.0 * np.exp(-0.7 * t))
    assert A == pytest.approx(3.0) and B == pytest.approx(0.7)
    assert np.abs(res).max() < 1e-12 and sB < 1e-10


def test_parse_initial():
    assert parse_initial("01", Alphabet.binary()).tolist() == [0, 1]
    assert parse_initial("b,a", Alphabet(("a", "b"))).tolist() == [1, 0]
    with pytest.raises(KeyError):
        parse_initial("2", Alphabet.binary())


def test_tv_plugin():
    assert tv_plugin(np.array([1.0, 1.0]), np.array([3.0, 1.0])) == pytest.approx(0.25)


def test_identical_initials_give_noise_level_tv():
    res = tv_decay(noisy_majority(0.3), (-1, 1), 10, 20_000, initials=("0", "0"), seed=1)
    assert res.tv.max() < 2 * res.bias_bound
    assert res.fit is None


def test_input_independent_kernel_forgets_immediately():
    res = tv_decay(constant_rows([0.3, 0.7]), (-1, 1), 5, 20_000, seed=2)
    assert res.tv.max() < 2 * res.bias_bound


def test_noisy_majority_decay():
    res = tv_decay(noisy_majority(0.3), (-1, 1), 20, 20_000, seed=3)
    assert res.tv[0] > 0.5
    assert res.tv[-1] < 2 * res.bias_bound
    assert res.fit is not None and res.fit.b_hat > 0 and res.fit.b_stderr < res.fit.b_hat
    assert res.fit.runs == 20_000


def test_tv_decay_is_deterministic_across_threads():
    a = tv_decay(noisy_majority(0.3), (-1, 1), 8, 20_000, seed=4, threads=1)
    b = tv_decay(noisy_majority(0.3), (-1, 1), 8, 20_000, seed=4, threads=4)
    assert np.array_equal(a.tv, b.tv)


def test_large_window_warns():
    with pytest.warns(UserWarning, match="categories"):
        res = tv_decay(noisy_majority(0.3), (0, 5), 2, 1000)
    assert res.warnings


def test_tv_decay_argument_errors():
    with pytest.raises(ValueError):
        tv_decay(noisy_majority(0.3), (1, 0), 5, 100)
    with pytest.raises(ValueError):
        tv_decay(noisy_majority(0.3), (0, 0), 5, 100, initials=("0",))
