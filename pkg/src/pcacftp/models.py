"""Concrete kernels used by the experiments and the test-suite."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import Alphabet, Kernel, validate_kernel


def noisy_majority(epsilon: float) -> Kernel:
    """Binary strict 2-of-3 majority, flipped with probability ``epsilon``."""
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    t = np.empty((2, 2, 2, 2))
    for a, b, c in itertools.product(range(2), repeat=3):
        maj = int(a + b + c >= 2)
        t[a, b, c, maj] = 1 - epsilon
        t[a, b, c, 1 - maj] = epsilon
    k = Kernel(Alphabet.binary(), t)
    validate_kernel(k)
    return k


def stavskaya_noisy(p: float, delta: float) -> Kernel:
    """Stavskaya's rule (1 iff left or self is 1) with error rates.

    The deterministic image is replaced by 1 with probability ``p`` when the
    rule gives 0, and every row is floored so that each symbol has mass at
    least ``delta``.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not 0 <= delta <= 0.5:
        raise ValueError(f"delta must lie in [0, 0.5], got {delta}")
    t = np.empty((2, 2, 2, 2))
    for a, b, c in itertools.product(range(2), repeat=3):
        one = 1.0 if (a or b) else p
        one = min(max(one, delta), 1 - delta)
        t[a, b, c] = (1 - one, one)
    k = Kernel(Alphabet.binary(), t)
    validate_kernel(k)
    return k


def uniform_mixture(k: Kernel, delta: float) -> Kernel:
    """(1 - delta) K + delta * uniform."""
    if not 0 <= delta <= 1:
        raise ValueError(f"delta must lie in [0, 1], got {delta}")
    out = Kernel(k.alphabet, (1 - delta) * k.table + delta / k.size)
    validate_kernel(out)
    return out


def random_kernel(seed: int, delta_min: float = 0.0, size: int = 2) -> Kernel:
    """Rows drawn uniformly from the simplex restricted to entries >= delta_min."""
    if size < 1:
        raise ValueError("size must be positive")
    if not 0 <= delta_min * size <= 1:
        raise ValueError(f"delta_min={delta_min} infeasible for |A|={size}")
    rng = np.random.default_rng(seed)
    raw = rng.dirichlet(np.ones(size), size=(size, size, size))
    t = delta_min + (1 - size * delta_min) * raw
    t /= t.sum(axis=-1, keepdims=True)
    symbols = tuple(str(i) for i in range(size)) if size <= 10 else tuple(f"s{i}" for i in range(size))
    k = Kernel(Alphabet(symbols), t)
    validate_kernel(k)
    return k


def point_mass(symbol: int = 0, size: int = 2) -> Kernel:
    t = np.zeros((size,) * 4)
    t[..., symbol] = 1.0
    return Kernel(Alphabet(tuple(str(i) for i in range(size))), t)


def constant_rows(nu) -> Kernel:
    """Input-independent kernel: every row equals ``nu``."""
    nu = np.asarray(nu, dtype=float)
    n = len(nu)
    k = Kernel(Alphabet(tuple(str(i) for i in range(n))), np.broadcast_to(nu, (n, n, n, n)))
    validate_kernel(k)
    return k


def is_monotone(k: Kernel) -> bool:
    """Stochastic monotonicity w.r.t. alphabet order and the product order on triples.

    For every pair of comparable triples v <= v' and every threshold s, the
    upper tail K(v, [s, ...]) must not exceed K(v', [s, ...]).
    """
    tail = np.cumsum(k.table[..., ::-1], axis=-1)[..., ::-1]
    tol = 1e-12
    return bool(
        (tail[1:, :, :] >= tail[:-1, :, :] - tol).all()
        and (tail[:, 1:, :] >= tail[:, :-1, :] - tol).all()
        and (tail[:, :, 1:] >= tail[:, :, :-1] - tol).all()
    )


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)

    def build(self) -> Kernel:
        try:
            ctor = MODELS[self.name]
        except KeyError:
            raise ValueError(f"unknown model {self.name!r}; choose from {sorted(MODELS)}") from None
        return ctor(**self.params)


MODELS = {
    "noisy-majority": lambda eps: noisy_majority(eps),
    "stavskaya": lambda p, delta: stavskaya_noisy(p, delta),
    "random": lambda seed, delta_min=0.0, size=2: random_kernel(seed, delta_min, size),
    "constant": lambda nu: constant_rows(nu),
}
