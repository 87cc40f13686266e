from __future__ import annotations

import json

import numpy as np
import pytest

from pcacftp.certifier import (
    cp_interval,
    cp_upper,
    decompose,
    estimate_rho,
    exact_rho_small,
    max_epsilon,
    perturbation_transfer,
    search_L,
    tile_cells,
    transfer_bound,
)
from pcacftp.cftp import FlowSpec
from pcacftp.core import Alphabet, Kernel, is_singleton_mask
from pcacftp.models import constant_rows, noisy_majority, point_mass, stavskaya_noisy
from pcacftp.trapezoid import CapExceeded

GOLDEN = {0.3: 0.684003598336, 0.4: 0.248817586176}


def brute_force_noncoalescence(k: Kernel, L: int) -> float:
    """Sum over every atom assignment of the group's cells (independent of the row DP)."""
    rf = k.random_function
    widths = [4 * L + 1 - 2 * m for m in range(1, L + 1)]
    n = sum(widths)
    A = rf.n_atoms
    assign = np.indices((A,) * n).reshape(n, -1).T
    weight = np.prod(rf.lengths[assign], axis=1)
    masks = np.full((len(assign), 4 * L + 1), k.alphabet.full_mask, dtype=np.uint64)
    col = 0
    for w in widths:
        masks = rf.envelope(assign[:, col:col + w], masks)
        col += w
    ok = is_singleton_mask(masks).all(axis=1)
    return float(weight[~ok].sum())


@pytest.mark.parametrize("eps", sorted(GOLDEN))
def test_exact_oracle_golden_values(eps):
    k = noisy_majority(eps)
    ex = exact_rho_small(k, 2)
    assert ex.p_noncoalescence == pytest.approx(GOLDEN[eps], abs=1e-12)
    assert ex.rho == pytest.approx(9 * GOLDEN[eps], abs=1e-11)
    assert brute_force_noncoalescence(k, 2) == pytest.approx(GOLDEN[eps], abs=1e-12)


def test_exact_oracle_on_asymmetric_kernel():
    k = stavskaya_noisy(0.3, 0.1)
    assert k.random_function.n_atoms == 3
    assert exact_rho_small(k, 2).p_noncoalescence == pytest.approx(
        brute_force_noncoalescence(k, 2), abs=1e-12
    )


def test_exact_oracle_trivial_kernels():
    assert exact_rho_small(point_mass(1), 3).rho == 0
    assert exact_rho_small(constant_rows([0.3, 0.7]), 2).rho == pytest.approx(0, abs=1e-12)


def test_exact_oracle_cap():
    with pytest.raises(CapExceeded):
        exact_rho_small(noisy_majority(0.3), 5, cap=1000)


@pytest.mark.parametrize("eps", sorted(GOLDEN))
def test_monte_carlo_matches_oracle(eps):
    cert = estimate_rho(noisy_majority(eps), 2, 100_000, seed=1)
    lo, hi = cp_interval(cert.count, cert.trials, 0.999)
    assert lo <= GOLDEN[eps] <= hi
    assert cert.p_noncoalescence + cert.p_coalescence == pytest.approx(1.0)
    assert cert.verdict == "inconclusive"  # exact rho > 1: never certified


def test_zero_trials_is_vacuous():
    cert = estimate_rho(noisy_majority(0.3), 3, 0)
    assert cert.rho_upper == 13
    assert cert.verdict == "inconclusive"


def test_input_independent_kernel_certified():
    cert = estimate_rho(constant_rows([0.5, 0.5]), 2, 5000)
    assert cert.count == 0 and cert.rho_hat == 0 and cert.certified
    # zero count: upper bound is 1 - (1 - confidence)^(1/n)
    assert cert.rho_upper == pytest.approx(9 * (1 - 0.001 ** (1 / 5000)), rel=1e-9)
    res = search_L(constant_rows([0.5, 0.5]), 6, 2000)
    assert res.certified and res.certificate.L == 2 and len(res.history) == 1


def test_search_reports_history():
    res = search_L(noisy_majority(0.3), 3, 2000)
    assert not res.certified
    assert [c.L for c in res.history] == [2, 3]


def test_certificate_reproducible():
    k = noisy_majority(0.3)
    a = estimate_rho(k, 8, 20_000, seed=3)
    b = estimate_rho(k, 8, 20_000, seed=3, threads=4)
    assert a.to_json() == b.to_json()
    assert json.loads(a.to_json())["kernel_hash"] == k.digest()
    assert estimate_rho(k, 8, 20_000, seed=4).count != a.count


def test_clopper_pearson_bounds():
    assert cp_upper(0, 0, 0.99) == 1.0
    lo, hi = cp_interval(5, 100, 0.95)
    assert lo < 0.05 < hi
    assert cp_upper(5, 100, 0.975) == pytest.approx(hi)


# --- perturbations ---------------------------------------------------------------


def rows_kernel(p1: float) -> Kernel:
    return Kernel(Alphabet.binary(), np.broadcast_to([1 - p1, p1], (2, 2, 2, 2)))


def test_decompose_example():
    K, K2 = rows_kernel(0.5), rows_kernel(0.55)
    assert max_epsilon(K, K2) == pytest.approx(0.1)
    d = decompose(K, K2, 0.1)
    assert np.allclose(d.residual.table[..., 0], 0) and np.allclose(d.residual.table[..., 1], 1)
    assert d.reconstruction_error() < 1e-12
    with pytest.raises(ValueError):
        decompose(K, K2, 0.05)


def test_decompose_identical_kernels():
    K = noisy_majority(0.3)
    assert max_epsilon(K, K) == 0
    for eps in (0.1, 0.5, 1.0):
        assert np.allclose(decompose(K, K, eps).residual.table, K.table)


def test_zero_entries_impose_no_constraint():
    t = np.zeros((2,) * 4)
    t[..., 0] = 1
    K = Kernel(Alphabet.binary(), t)
    assert max_epsilon(K, rows_kernel(0.25)) == pytest.approx(0.25)


def test_tile_cells():
    for L in (2, 3, 7):
        T = FlowSpec(noisy_majority(0.3), L).group_trapezoid(0, 0)
        assert tile_cells(L) == T.n_cells() - (4 * L + 1) == 3 * L * L


def test_transfer_bound_algebra():
    assert transfer_bound(4, 0.0, 0.01) == pytest.approx(17 * 0.01)
    vals = [transfer_bound(L, 0.01, 0.01) for L in range(2, 12)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_perturbation_transfer_report():
    K, K2 = noisy_majority(0.3), noisy_majority(0.31)
    rep = perturbation_transfer(K, K2, 2, 20_000, seed=2)
    eps = 1 - 0.69 / 0.7
    assert rep.epsilon == pytest.approx(eps)
    keep = (1 - eps) ** 12
    assert rep.bound == pytest.approx(9 * (keep * rep.p_hat + 1 - keep), rel=1e-12)
    assert rep.base.count / 20_000 == rep.p_hat
    assert rep.direct.kernel_hash == K2.digest()
