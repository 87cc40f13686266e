"""Forward-simulation experiments: decay of total variation between initial conditions."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Kernel
from .grid import STREAM_TV, RandomGrid

BATCH = 1 << 13


@dataclass(frozen=True)
class FitResult:
    """Least-squares estimates; never certified constants.

    ``a_hat, b_hat`` fit ``TV_t ~ a |I| exp(-b t)``; ``c_hat, d_hat`` fit a
    coalescence tail ``P(T > n) ~ c exp(-d n)`` when one is supplied.
    """

    a_hat: float
    b_hat: float
    a_stderr: float
    b_stderr: float
    c_hat: float = float("nan")
    d_hat: float = float("nan")
    c_stderr: float = float("nan")
    d_stderr: float = float("nan")
    residuals: tuple[float, ...] = ()
    n_points: int = 0
    runs: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def loglinear_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, np.ndarray]:
    """Fit ``log y = log A - B t``; returns (A, B, se(A), se(B), residuals)."""
    t = np.asarray(t, dtype=float)
    ly = np.log(np.asarray(y, dtype=float))
    X = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    res = ly - X @ coef
    dof = len(t) - 2
    if dof > 0:
        cov = float(res @ res) / dof * np.linalg.inv(X.T @ X)
        se0, se1 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    else:
        se0 = se1 = float("nan")
    A = math.exp(coef[0])
    return A, float(-coef[1]), A * se0, se1, res


def parse_initial(spec: str, alphabet) -> np.ndarray:
    """A periodic initial word, e.g. ``"0"`` or ``"01"`` or ``"a,b"``."""
    parts = spec.split(",") if "," in spec else list(spec)
    if not parts or any(p == "" for p in parts):
        raise ValueError(f"bad initial word {spec!r}")
    return np.array([alphabet.index(p) for p in parts], dtype=np.int64)


def tv_plugin(a: np.ndarray, b: np.ndarray) -> float:
    pa = a / a.sum()
    pb = b / b.sum()
    return 0.5 * float(np.abs(pa - pb).sum())


@dataclass
class TVDecay:
    window: tuple[int, int]
    horizon: int
    runs: int
    initials: tuple[str, ...]
    tv: np.ndarray  # (horizon,), t = 1..horizon
    bias_bound: float
    fit: FitResult | None
    warnings: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple[int, float]]:
        return [(t + 1, float(v)) for t, v in enumerate(self.tv)]


def _window_codes(
    kernel: Kernel, grid: RandomGrid, window, horizon, word, replicas, stream=STREAM_TV,
) -> np.ndarray:
    """Codes of the window word at t = 1..horizon, shape (horizon, R)."""
    lo, hi = window
    rf = kernel.random_function
    k = kernel.size
    a = lo - horizon
    width = hi - lo + 1 + 2 * horizon
    x = np.broadcast_to(np.resize(word, width), (len(replicas), width)).copy()
    rp = np.asarray(replicas)[:, None]
    place = k ** np.arange(hi - lo, -1, -1)
    out = np.empty((horizon, len(replicas)), dtype=np.int64)
    off = a
    for t in range(1, horizon + 1):
        xs = np.arange(off + 1, off + x.shape[1] - 1)
        u = grid.uniform(0, xs[None, :], t, rp, stream)
        x = rf.step(rf.atom_of(u), x)
        off += 1
        s = lo - off
        out[t - 1] = (x[:, s:s + hi - lo + 1] * place).sum(axis=1)
    return out


def tv_decay(
    kernel: Kernel,
    window: tuple[int, int],
    horizon: int,
    runs: int,
    initials: tuple[str, ...] | None = None,
    seed: int = 0,
    threads: int = 1,
) -> TVDecay:
    """Plug-in TV between window laws started from periodic initial words.

    With more than two initial words the maximum pairwise TV is reported.
    The default compares every constant configuration.
    """
    lo, hi = window
    if hi < lo:
        raise ValueError("empty window")
    if horizon < 1 or runs < 1:
        raise ValueError("horizon and runs must be positive")
    k = kernel.size
    if initials is None:
        initials = tuple(kernel.alphabet.label(s) for s in range(k))
    if len(initials) < 2:
        raise ValueError("need at least two initial words")
    n_cat = k ** (hi - lo + 1)
    notes = []
    if n_cat > runs / 30:
        msg = f"|A|^|I| = {n_cat} categories for {runs} runs: plug-in TV will be strongly biased"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    grid = RandomGrid(seed)
    hist = np.zeros((len(initials), horizon, n_cat))
    for i, w in enumerate(initials):
        word = parse_initial(w, kernel.alphabet)
        reps = np.arange(runs) + i * runs  # independent runs per initial word
        chunks = [reps[j:j + BATCH] for j in range(0, runs, BATCH)]
        job = lambda r: _window_codes(kernel, grid, window, horizon, word, r)
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as ex:
                parts = list(ex.map(job, chunks))
        else:
            parts = [job(c) for c in chunks]
        for codes in parts:
            for t in range(horizon):
                hist[i, t] += np.bincount(codes[t], minlength=n_cat)
    tv = np.array([
        max(tv_plugin(hist[i, t], hist[j, t]) for i in range(len(initials)) for j in range(i))
        for t in range(horizon)
    ])
    bias = math.sqrt(n_cat / (2 * runs))
    fit = None
    ts = np.arange(1, horizon + 1)
    good = tv > 2 * bias
    if good.sum() >= 2:
        A, B, sA, sB, res = loglinear_fit(ts[good], tv[good])
        size = hi - lo + 1
        fit = FitResult(A / size, B, sA / size, sB, residuals=tuple(float(r) for r in res),
                        n_points=int(good.sum()), runs=runs)
    return TVDecay((lo, hi), horizon, runs, tuple(initials), tv, bias, fit, notes)
