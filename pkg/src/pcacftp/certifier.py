"""Finite-size certification of ergodicity and its transfer to nearby kernels.

The certified quantity is ``rho = (4L + 1) * P(tile group does not coalesce)``
under the basic flow; ``rho < 1`` forces the backward recursion to die out
geometrically.  Monte-Carlo estimates carry one-sided Clopper-Pearson bounds.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import beta

from .cftp import BATCH, FlowSpec, groups_coalesced
from .core import Kernel, KernelError, ROW_TOL, validate_kernel
from .trapezoid import CapExceeded

DEFAULT_CONFIDENCE = 0.999
EXACT_STATE_CAP = 10**6


def cp_upper(count: int, trials: int, confidence: float) -> float:
    """One-sided upper Clopper-Pearson bound for a binomial proportion."""
    if trials == 0 or count >= trials:
        return 1.0
    return float(beta.ppf(confidence, count + 1, trials - count))


def cp_interval(count: int, trials: int, confidence: float) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval at level ``confidence``."""
    a = (1 - confidence) / 2
    lo = 0.0 if count == 0 else float(beta.ppf(a, count, trials - count + 1))
    hi = 1.0 if count >= trials else float(beta.ppf(1 - a, count + 1, trials - count))
    return lo, hi


@dataclass(frozen=True)
class Certificate:
    kernel_hash: str
    L: int
    trials: int
    count: int
    rho_hat: float
    rho_upper: float
    confidence: float
    seed: int
    verdict: str
    p_noncoalescence: float
    p_coalescence: float
    variant: str = "basic"

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def make_certificate(
    kernel: Kernel, L: int, trials: int, count: int, confidence: float, seed: int,
    variant: str = "basic",
) -> Certificate:
    size = 4 * L + 1
    p = count / trials if trials else float("nan")
    rho_hat = size * p if trials else float("nan")
    rho_upper = size * cp_upper(count, trials, confidence)
    return Certificate(
        kernel.digest(), L, trials, count, rho_hat, rho_upper, confidence, seed,
        "certified" if rho_upper < 1 else "inconclusive",
        p, 1 - p if trials else float("nan"), variant,
    )


def count_noncoalesced(spec: FlowSpec, trials: int, threads: int = 1) -> int:
    """Independent tile groups keyed by replica ``0..trials-1`` at level 0."""
    chunks = [(i, min(i + BATCH, trials)) for i in range(0, trials, BATCH)]

    def job(c):
        reps = np.arange(*c)
        return int((~groups_coalesced(spec, np.zeros_like(reps), 0, reps)).sum())

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return sum(ex.map(job, chunks))
    return sum(job(c) for c in chunks)


def estimate_rho(
    kernel: Kernel,
    L: int,
    trials: int,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    variant: str = "basic",
    threads: int = 1,
) -> Certificate:
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if trials < 0:
        raise ValueError("trials must be >= 0")
    spec = FlowSpec(kernel, L, seed, variant)
    count = count_noncoalesced(spec, trials, threads) if trials else 0
    return make_certificate(kernel, L, trials, count, confidence, seed, variant)


# --- exact oracle ---------------------------------------------------------------


@dataclass(frozen=True)
class ExactRho:
    L: int
    p_noncoalescence: float
    n_states: int

    @property
    def rho(self) -> float:
        return (4 * self.L + 1) * self.p_noncoalescence


def _cell_mask_law(kernel: Kernel) -> dict:
    """For each neighbour-mask triple: {output mask: total atom length}."""
    rf = kernel.random_function
    k = kernel.size
    lens = rf.lengths
    law: dict = {}
    nm = 1 << k
    for m in np.ndindex(nm, nm, nm):
        if 0 in m:
            continue
        masks = np.array(m, dtype=np.uint64)
        out = rf.envelope(np.arange(rf.n_atoms)[:, None], np.broadcast_to(masks, (rf.n_atoms, 3)))[:, 0]
        d: dict = {}
        for o, l in zip(out.tolist(), lens):
            d[o] = d.get(o, 0.0) + float(l)
        law[m] = d
    return law


def exact_rho_small(kernel: Kernel, L: int, cap: int = EXACT_STATE_CAP) -> ExactRho:
    """Exact envelope non-coalescence probability of a tile group (basic flow).

    Row-by-row dynamic programme over envelope rows; each cell's output mask
    law is the total length of the atoms producing it.
    """
    if L < 1:
        raise ValueError("L must be positive")
    law = _cell_mask_law(kernel)
    full = (1 << kernel.size) - 1
    states = {(full,) * (4 * L + 1): 1.0}
    seen = 0
    for _ in range(L):
        new: dict = {}
        for row, p in states.items():
            partial = {(): p}
            for i in range(len(row) - 2):
                d = law[row[i:i + 3]]
                nxt: dict = {}
                for pre, q in partial.items():
                    for o, l in d.items():
                        key = pre + (o,)
                        nxt[key] = nxt.get(key, 0.0) + q * l
                partial = nxt
                seen += len(partial)
                if seen > cap:
                    raise CapExceeded(f"exact oracle exceeded {cap} partial states")
            for key, q in partial.items():
                new[key] = new.get(key, 0.0) + q
        states = new
    single = lambda m: (m & (m - 1)) == 0
    p_coal = sum(p for row, p in states.items() if all(single(m) for m in row))
    return ExactRho(L, 1.0 - p_coal, seen)


# --- L search ---------------------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    certificate: Certificate
    history: tuple[Certificate, ...]

    @property
    def certified(self) -> bool:
        return self.certificate.certified


def search_L(
    kernel: Kernel,
    L_max: int,
    trials: int,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    L_min: int = 2,
    threads: int = 1,
) -> SearchResult:
    """Try L = L_min..L_max and stop at the first certificate.

    An inconclusive result says nothing about ergodicity: the test is one-sided.
    """
    if L_max < 2:
        raise ValueError("L_max must be >= 2")
    hist = []
    for L in range(max(2, L_min), L_max + 1):
        c = estimate_rho(kernel, L, trials, confidence, seed, threads=threads)
        hist.append(c)
        if c.certified:
            break
    return SearchResult(hist[-1], tuple(hist))


# --- perturbations ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PerturbationDecomposition:
    """``target = (1 - epsilon) * base + epsilon * residual`` entrywise."""

    base: Kernel
    target: Kernel
    epsilon: float
    residual: Kernel

    def reconstruction_error(self) -> float:
        rec = (1 - self.epsilon) * self.base.table + self.epsilon * self.residual.table
        return float(np.abs(rec - self.target.table).max())


def _same_alphabet(K: Kernel, K2: Kernel):
    if K.alphabet != K2.alphabet:
        raise KernelError(f"alphabets differ: {K.alphabet.symbols} vs {K2.alphabet.symbols}")


def max_epsilon(K: Kernel, K2: Kernel) -> float:
    """Smallest epsilon with K2 >= (1 - epsilon) K entrywise."""
    _same_alphabet(K, K2)
    pos = K.table > 0
    if not pos.any():
        return 0.0
    return float(max(0.0, 1.0 - (K2.table[pos] / K.table[pos]).min()))


def decompose(K: Kernel, K2: Kernel, epsilon: float) -> PerturbationDecomposition:
    _same_alphabet(K, K2)
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    need = max_epsilon(K, K2)
    if epsilon < need - ROW_TOL:
        raise ValueError(f"epsilon={epsilon} below the feasible minimum {need}")
    res = (K2.table - (1 - epsilon) * K.table) / epsilon
    if (res < -ROW_TOL).any():
        idx = tuple(int(i) for i in np.argwhere(res < -ROW_TOL)[0])
        raise ValueError(f"target entry {idx} is below (1 - epsilon) times the base entry")
    res = np.clip(res, 0.0, 1.0)  # round-off only; larger excursions were rejected above
    residual = Kernel(K.alphabet, res)
    validate_kernel(residual)
    return PerturbationDecomposition(K, K2, epsilon, residual)


def transfer_bound(L: int, epsilon: float, p: float) -> float:
    """(4L+1) ((1-eps)^m p + 1 - (1-eps)^m) with m = 3 L^2 non-top cells."""
    keep = (1 - epsilon) ** tile_cells(L)
    return (4 * L + 1) * (keep * p + 1 - keep)


def tile_cells(L: int) -> int:
    """Cells of a tile group below its top row."""
    return sum(4 * L + 1 - 2 * m for m in range(1, L + 1))


@dataclass(frozen=True)
class TransferReport:
    L: int
    epsilon: float
    m: int
    p_hat: float
    bound: float
    bound_upper: float
    base: Certificate
    direct: Certificate

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)


def perturbation_transfer(
    K: Kernel,
    K2: Kernel,
    L: int,
    trials: int,
    confidence: float = DEFAULT_CONFIDENCE,
    seed: int = 0,
    threads: int = 1,
) -> TransferReport:
    eps = max_epsilon(K, K2)
    if eps > 0:
        decompose(K, K2, eps)  # feasibility check
    base = estimate_rho(K, L, trials, confidence, seed, threads=threads)
    direct = estimate_rho(K2, L, trials, confidence, seed, threads=threads)
    p_hat = base.count / trials if trials else 1.0
    p_up = base.rho_upper / (4 * L + 1)
    return TransferReport(
        L, eps, tile_cells(L), p_hat, transfer_bound(L, eps, p_hat), transfer_bound(L, eps, p_up),
        base, direct,
    )
