"""Coupling from the past on the W-tiling.

Level ``n >= 0`` of the flow maps the configuration at time ``-(n+1)L`` to the
one at time ``-nL``.  Cell ``(x, t)`` of level ``n`` reads the grid variate
keyed by ``(n, x, t)`` so backward extension never alters consumed randomness.

The tile group with centre index ``lam`` (centre site ``z = 2 L lam``) is the
union T_a(lam), T_b(lam), T_a(lam + 1): its top is ``[z - 2L, z + 2L]`` and its
base ``[z - L, z + L]``.  Under the basic flow the group is exactly the light
cone of its base, so the group coalesces iff the envelope started from the
full alphabet on the top collapses to singletons on the base.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .core import Kernel, KernelError, RandomFunction, is_singleton_mask
from .coupling import (
    CouplingError,
    FiniteDistribution,
    type1_coupling,
    type2_coupling,
)
from .geometry import Tiling, Trapezoid
from .grid import STREAM_BASIC, STREAM_STRUCTURED, RandomGrid
from .models import is_monotone
from .trapezoid import CapExceeded

VARIANTS = ("basic", "structured")
DEFAULT_MAX_DEPTH = 10**4
STRUCTURED_CAP = 1 << 14  # (#top configurations) x (#base configurations)
BATCH = 1 << 14


class TruncationError(RuntimeError):
    """The backward recursion hit ``max_depth`` before the query set emptied."""


# --- structured first-row layer ----------------------------------------------


@dataclass(frozen=True, eq=False)
class StructuredLayer:
    """Exact coupling of the first-row law of a T_a tile over all its top words.

    ``values[atom, e, j]`` is the symbol of first-row cell ``j`` when the
    coupling variate falls in ``atom`` and the top word has code ``e``;
    ``masks[atom, j]`` is the union over ``e`` (the envelope from a full top).
    """

    edges: np.ndarray
    values: np.ndarray
    masks: np.ndarray
    kind: str  # "type1" | "type2"
    epsilon: float

    def atom_of(self, u) -> np.ndarray:
        return np.searchsorted(self.edges[1:-1], u, side="right")


def _digits(codes: np.ndarray, width: int, k: int) -> np.ndarray:
    """Base-k digits, most significant first."""
    p = k ** np.arange(width - 1, -1, -1)
    return (np.asarray(codes)[..., None] // p) % k


def build_structured_layer(kernel: Kernel, L: int, cap: int = STRUCTURED_CAP) -> StructuredLayer:
    k = kernel.size
    n_top, n_base = 2 * L + 1, 2 * L - 1
    n_e, n_s = k**n_top, k**n_base
    if n_e * n_s > cap:
        raise CapExceeded(f"structured layer needs {n_e} x {n_s} entries, above cap {cap}")
    tops = _digits(np.arange(n_e), n_top, k)
    bases = _digits(np.arange(n_s), n_base, k)
    # law of the first row given the top: product of kernel rows
    probs = np.ones((n_e, n_s))
    for j in range(n_base):
        row = kernel.table[tops[:, j], tops[:, j + 1], tops[:, j + 2]]  # (n_e, k)
        probs *= row[:, bases[:, j]]
    family = [FiniteDistribution.of(p / p.sum()) for p in probs]
    eps = n_s * max(0.5 * float(np.abs(p - probs[0]).sum()) for p in probs)
    table = None
    kind = "type2"
    if 0 < eps < 1:
        try:
            table = type1_coupling(family, 0, eps)
            kind = "type1"
        except CouplingError:
            table = None
    if table is None:
        table = type2_coupling(family, 0)
    edges, outcomes = table.refinement()
    values = bases[outcomes]  # (atoms, n_e, n_base)
    one = np.uint64(1)
    masks = np.zeros((len(values), n_base), dtype=np.uint64)
    for s in range(k):
        masks |= np.where((values == s).any(axis=1), one << np.uint64(s), np.uint64(0))
    return StructuredLayer(edges, values.astype(np.int8), masks, kind, eps)


# --- flow parameters ----------------------------------------------------------


UniformSource = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class FlowSpec:
    kernel: Kernel
    L: int
    seed: int = 0
    variant: str = "basic"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.L < 2:
            raise ValueError(f"tile height L must be >= 2, got {self.L}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown flow variant {self.variant!r}; choose from {VARIANTS}")
        if self.kernel.witness is None:
            raise KernelError("kernel does not satisfy the positive rates condition")

    @property
    def tiling(self) -> Tiling:
        return Tiling(self.L)

    @property
    def grid(self) -> RandomGrid:
        return RandomGrid(self.seed)

    @property
    def rf(self) -> RandomFunction:
        return self.kernel.random_function

    @cached_property
    def layer(self) -> StructuredLayer | None:
        return build_structured_layer(self.kernel, self.L) if self.variant == "structured" else None

    def with_seed(self, seed: int) -> "FlowSpec":
        return FlowSpec(self.kernel, self.L, seed, self.variant)

    def group_trapezoid(self, lam: int, level: int) -> Trapezoid:
        """The group's light cone: one downward trapezoid on the group top."""
        L = self.L
        return Trapezoid("down", 2 * L * lam - L, -(level + 1) * L, L, 2 * L)

    def uniforms(self, source: UniformSource | None = None) -> UniformSource:
        g = self.grid
        return source if source is not None else g.uniform


def band_time(L: int, level, m):
    """Absolute time of row ``m`` (0 = input row) of band ``level``."""
    return -(np.asarray(level) + 1) * L + m


# --- tile group coalescence ---------------------------------------------------


def group_envelopes(
    spec: FlowSpec,
    levels,
    centers,
    replicas,
    source: UniformSource | None = None,
) -> np.ndarray:
    """Base envelopes (bitmasks, shape (B, 2L+1)) of tile groups from a full top."""
    levels, centers, replicas = np.broadcast_arrays(
        np.asarray(levels, dtype=np.int64), np.asarray(centers, dtype=np.int64),
        np.asarray(replicas, dtype=np.int64),
    )
    L, rf = spec.L, spec.rf
    uni = spec.uniforms(source)
    full = np.uint64((1 << spec.kernel.size) - 1)
    offs = np.arange(-2 * L, 2 * L + 1)
    z = 2 * L * centers[:, None]
    lv, rp = levels[:, None], replicas[:, None]
    masks = np.full((len(levels), 4 * L + 1), full, dtype=np.uint64)
    m0 = 1
    if spec.variant == "structured":
        lay = spec.layer
        top_t = band_time(L, lv, 0)
        left = lay.masks[lay.atom_of(uni(lv, centers[:, None], top_t, rp, STREAM_STRUCTURED))][:, 0]
        right = lay.masks[lay.atom_of(uni(lv, centers[:, None] + 1, top_t, rp, STREAM_STRUCTURED))][:, 0]
        u = uni(lv, z, band_time(L, lv, 1), rp, STREAM_BASIC)
        mid = rf.envelope(rf.atom_of(u), masks[:, 2 * L - 1: 2 * L + 2])
        masks = np.concatenate([left, mid, right], axis=1)
        m0 = 2
    for m in range(m0, L + 1):
        xs = z + offs[m:len(offs) - m]
        u = uni(lv, xs, band_time(L, lv, m), rp, STREAM_BASIC)
        masks = rf.envelope(rf.atom_of(u), masks)
    return masks


def groups_coalesced(spec: FlowSpec, levels, centers, replicas, source=None) -> np.ndarray:
    return is_singleton_mask(group_envelopes(spec, levels, centers, replicas, source)).all(axis=1)


def tile_coalesced(spec: FlowSpec, tile: tuple[int, int], replica: int = 0) -> bool:
    """Coalescence of the tile group with id ``(lam1, lam2)``, ``lam2 = -level`` (cached)."""
    lam1, lam2 = tile
    if lam2 > 0:
        raise ValueError("tile ids have lam2 <= 0")
    key = (lam1, -lam2, replica)
    hit = spec._cache.get(key)
    if hit is None:
        hit = bool(groups_coalesced(spec, [-lam2], [lam1], [replica])[0])
        spec._cache[key] = hit
    return hit


def group_forward(
    spec: FlowSpec, lam: int, level: int, top, replica: int = 0, source=None,
) -> np.ndarray:
    """Concrete base of a tile group for top word(s) ``top`` (..., 4L+1)."""
    top = np.atleast_2d(np.asarray(top))
    L = spec.L
    out, off = forward_band(spec, level, 2 * L * lam - 2 * L, top, np.full(len(top), replica), source)
    lo = 2 * L * lam - L - int(off[0])
    return out[:, lo:lo + 2 * L + 1]


def monotone_sandwich(spec: FlowSpec, levels, centers, replicas) -> np.ndarray | None:
    """Coalescence from the two extreme tops only; ``None`` if no monotone fast path."""
    if spec.variant != "basic" or not (spec.rf.is_monotone() and is_monotone(spec.kernel)):
        return None
    levels = np.asarray(levels)
    L, k = spec.L, spec.kernel.size
    res = []
    for c in (0, k - 1):
        tops = np.full((len(levels), 4 * L + 1), c, dtype=np.int64)
        base, off = forward_band(spec, levels, 2 * L * np.asarray(centers) - 2 * L, tops, replicas)
        res.append(base)
    return (res[0] == res[1]).all(axis=1)


# --- forward evaluation -------------------------------------------------------


def forward_band(
    spec: FlowSpec, level, offset, config: np.ndarray, replicas, source=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run one band on words ``config`` (B, W) starting at site ``offset``.

    Returns the output words and their new offsets; the output keeps every
    site whose value is determined by the input window.
    """
    L, rf = spec.L, spec.rf
    uni = spec.uniforms(source)
    x = np.asarray(config)
    B, W = x.shape
    lv = np.broadcast_to(np.asarray(level), (B,))[:, None]
    rp = np.broadcast_to(np.asarray(replicas), (B,))[:, None]
    off = np.broadcast_to(np.asarray(offset, dtype=np.int64), (B,)).copy()
    m0 = 1
    if spec.variant == "structured":
        x, off = _structured_first_row(spec, lv, off, x, rp, uni)
        m0 = 2
    for m in range(m0, L + 1):
        xs = off[:, None] + 1 + np.arange(x.shape[1] - 2)
        u = uni(lv, xs, band_time(L, lv, m), rp, STREAM_BASIC)
        x = rf.step(rf.atom_of(u), x)
        off = off + 1
    return x, off


def _structured_first_row(spec, lv, off, x, rp, uni):
    L, k, rf, lay = spec.L, spec.kernel.size, spec.rf, spec.layer
    B, W = x.shape
    if len(np.unique(off)) != 1:
        raise ValueError("structured forward needs a common offset")
    a = int(off[0])
    lam_lo = -((-(a + 2 * L)) // (2 * L))  # first T_a whose top starts at >= a
    lam_hi = (a + W - 1) // (2 * L)  # last T_a whose top ends at <= a + W - 1
    if lam_hi <= lam_lo:
        raise ValueError("window too narrow for the structured layer")
    lams = np.arange(lam_lo, lam_hi + 1)
    n_top = 2 * L + 1
    starts = 2 * L * lams - 2 * L - a
    idx = starts[:, None] + np.arange(n_top)
    words = x[:, idx]  # (B, n_lam, n_top)
    codes = (words * (k ** np.arange(n_top - 1, -1, -1))).sum(axis=-1)
    top_t = band_time(L, lv, 0)
    atoms = lay.atom_of(uni(lv, lams[None, :], top_t, rp, STREAM_STRUCTURED))
    bases = lay.values[atoms, codes]  # (B, n_lam, 2L-1)
    # centre cells 2L lam between consecutive T_a tiles use the basic coupling
    zc = 2 * L * lams[:-1]
    u = uni(lv, zc[None, :], band_time(L, lv, 1), rp, STREAM_BASIC)
    ci = zc - a
    mids = rf.table[rf.atom_of(u), x[:, ci - 1], x[:, ci], x[:, ci + 1]]
    row = np.empty((B, len(lams) * (2 * L) - 1), dtype=x.dtype)
    for i in range(len(lams)):
        row[:, 2 * L * i: 2 * L * i + 2 * L - 1] = bases[:, i]
        if i < len(lams) - 1:
            row[:, 2 * L * i + 2 * L - 1] = mids[:, i]
    new_off = np.full(B, 2 * L * lam_lo - 2 * L + 1, dtype=np.int64)
    return row, new_off


# --- backward recursion -------------------------------------------------------


def _interval_union_size(centers: np.ndarray, L: int) -> int:
    """|union of [2Lc - 2L, 2Lc + 2L]| for sorted unique centres."""
    return int(_union_sizes(np.zeros(len(centers), dtype=np.int64), np.asarray(centers), L, 1)[0])


def _union_sizes(rid: np.ndarray, cen: np.ndarray, L: int, R: int) -> np.ndarray:
    """Per replica |union of [2Lc - 2L, 2Lc + 2L]|; input sorted by (rid, cen), unique."""
    if len(rid) == 0:
        return np.zeros(R, dtype=np.int64)
    same = rid[1:] == rid[:-1]
    d = np.diff(cen)
    overlap = np.where(same & (d == 1), 2 * L + 1, np.where(same & (d == 2), 1, 0))
    total = np.bincount(rid, minlength=R) * (4 * L + 1)
    total -= np.bincount(rid[1:], weights=overlap, minlength=R).astype(np.int64)
    return total


@dataclass
class BackwardState:
    """Outcome of the backward recursion for one query.

    ``open_centers`` are the groups of the last evaluated level that did not
    coalesce; ``P`` is the site set they spawn and ``sizes[j] = |P_j|``.
    """

    query: tuple[int, int]
    n: int
    open_centers: tuple[int, ...]
    sizes: list[int]
    truncated: bool
    L: int

    @property
    def P(self) -> frozenset:
        L = self.L
        return frozenset(
            x for c in self.open_centers for x in range(2 * L * c - 2 * L, 2 * L * c + 2 * L + 1)
        )


@dataclass
class BackwardBatch:
    """Vectorised backward recursion over replicas."""

    depth: np.ndarray  # first n with P_n empty (max_depth if truncated)
    truncated: np.ndarray
    sizes: np.ndarray  # (levels reached + 1, R): |P_n| per replica

    @property
    def mean_sizes(self) -> np.ndarray:
        return self.sizes.mean(axis=1)


CoalesceFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _spread(rid: np.ndarray, cen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(rid) == 0:
        return rid, cen
    rid = np.repeat(rid, 3)
    cen = (cen[:, None] + np.array([-1, 0, 1])).ravel()
    key = np.unique(np.stack([rid, cen], axis=1), axis=0)
    return key[:, 0], key[:, 1]


def backward_batch(
    spec: FlowSpec,
    window: tuple[int, int],
    replicas,
    max_depth: int = DEFAULT_MAX_DEPTH,
    coalesce: CoalesceFn | None = None,
) -> BackwardBatch:
    """Iterate P_{n+1} = union of J(y, n) for every replica until emptiness or the cap."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    lo, hi = window
    if hi < lo:
        raise ValueError("empty query window")
    L = spec.L
    replicas = np.asarray(replicas, dtype=np.int64)
    R = len(replicas)
    if coalesce is None:
        coalesce = lambda lv, c, r: groups_coalesced(spec, lv, c, r)
    T = Tiling(L)
    c0 = np.arange(T.center(lo), T.center(hi) + 1)
    rid = np.repeat(np.arange(R), len(c0))
    cen = np.tile(c0, R)
    depth = np.full(R, max_depth, dtype=np.int64)
    sizes = [np.full(R, hi - lo + 1, dtype=np.int64)]
    n = 0
    while len(rid) and n < max_depth:
        ok = np.asarray(coalesce(np.full(len(rid), n), cen, replicas[rid]), dtype=bool)
        rid, cen = rid[~ok], cen[~ok]
        sizes.append(_union_sizes(rid, cen, L, R))
        alive = np.zeros(R, dtype=bool)
        alive[rid] = True
        n += 1
        depth[~alive & (depth == max_depth)] = n
        rid, cen = _spread(rid, cen)
    truncated = np.zeros(R, dtype=bool)
    truncated[rid] = True
    depth[truncated] = max_depth
    return BackwardBatch(depth, truncated, np.stack(sizes))


def backward_run(
    spec: FlowSpec,
    query,
    max_depth: int = DEFAULT_MAX_DEPTH,
    replica: int = 0,
    coalesce: CoalesceFn | None = None,
) -> BackwardState:
    """Backward recursion for a single site or window ``(lo, hi)``, using the tile cache."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    lo, hi = (query, query) if np.isscalar(query) else tuple(query)
    L = spec.L
    T = Tiling(L)
    centers = list(range(T.center(lo), T.center(hi) + 1))
    sizes = [hi - lo + 1]
    openc: list[int] = []
    n = 0
    while centers and n < max_depth:
        if coalesce is None:
            openc = [c for c in centers if not tile_coalesced(spec, (c, -n), replica)]
        else:
            cs = np.array(centers)
            ok = np.asarray(coalesce(np.full(len(cs), n), cs, np.full(len(cs), replica)), dtype=bool)
            openc = [int(c) for c in cs[~ok]]
        sizes.append(_interval_union_size(np.array(openc, dtype=np.int64), L))
        centers = sorted({c + d for c in openc for d in (-1, 0, 1)})
        n += 1
    return BackwardState((lo, hi), n, tuple(openc), sizes, bool(centers), L)


# --- perfect sampling ---------------------------------------------------------


@dataclass
class WindowSamples:
    """Exact samples of a window, one row per replica."""

    window: tuple[int, int]
    values: np.ndarray  # (R, |I|) symbol indices
    depth: np.ndarray  # levels needed per replica

    def labels(self, alphabet) -> list[list[str]]:
        return [[alphabet.label(int(v)) for v in row] for row in self.values]


def forward_margin(spec: FlowSpec, depth: int) -> int:
    """Sites needed on each side of the query to evaluate ``depth`` levels exactly."""
    L = spec.L
    if spec.variant == "basic":
        return depth * L
    # the structured first row needs whole T_a tops: up to 2L extra per level
    return depth * 3 * L + 2 * L


def sample_window(
    spec: FlowSpec,
    window: tuple[int, int],
    replicas,
    max_depth: int = DEFAULT_MAX_DEPTH,
    fill=None,
    source=None,
) -> WindowSamples:
    """Exact samples of the invariant law on ``window`` for each replica.

    ``fill`` chooses the arbitrary input at time ``-nL`` (default: the
    positive-rates witness everywhere); it is called as ``fill(shape, offset)``.
    """
    lo, hi = window
    replicas = np.asarray(replicas, dtype=np.int64)
    bb = backward_batch(spec, window, replicas, max_depth)
    if bb.truncated.any():
        bad = replicas[bb.truncated]
        raise TruncationError(
            f"{len(bad)} replica(s) did not coalesce within {max_depth} levels (first: {bad[0]})"
        )
    out = np.empty((len(replicas), hi - lo + 1), dtype=np.int8)
    w = spec.rf.witness.w
    for N in np.unique(bb.depth):
        sel = np.flatnonzero(bb.depth == N)
        a = lo - forward_margin(spec, int(N))
        width = hi - lo + 1 + 2 * forward_margin(spec, int(N))
        if fill is None:
            x = np.full((len(sel), width), w, dtype=np.int64)
        else:
            x = np.asarray(fill((len(sel), width), a), dtype=np.int64)
        off = np.full(len(sel), a, dtype=np.int64)
        for n in range(int(N) - 1, -1, -1):
            x, off = forward_band(spec, n, off, x, replicas[sel], source)
        start = lo - int(off[0])
        out[sel] = x[:, start:start + hi - lo + 1]
    return WindowSamples((lo, hi), out, bb.depth)


def step_samples(spec: FlowSpec, samples: WindowSamples, replicas, stream: int, time: int = 1):
    """Apply one basic PCA step to sampled windows with fresh keyed variates."""
    lo, hi = samples.window
    xs = np.arange(lo + 1, hi)
    u = spec.grid.uniform(0, xs[None, :], time, np.asarray(replicas)[:, None], stream)
    rf = spec.rf
    return rf.step(rf.atom_of(u), samples.values.astype(np.int64))


# --- coalescence times ----------------------------------------------------------


@dataclass
class TailReport:
    """Survival of the coalescence depth ``D`` (``T_x <= D L``).

    ``survival[n] = P(D > n)`` for ``n = 0..len - 1``.
    """

    site: int
    runs: int
    survival: np.ndarray
    truncated: int
    c: float
    d: float
    d_stderr: float
    n_fit: int

    def bound(self, rho: float) -> np.ndarray:
        return rho ** np.arange(len(self.survival))

    def violations(self, rho: float) -> list[int]:
        return [int(n) for n in np.flatnonzero(self.survival > self.bound(rho))]


def fit_log_tail(survival: np.ndarray) -> tuple[float, float, float, int]:
    """Least-squares fit of ``log P(D > n) = log c - d n`` over positive entries."""
    n = np.flatnonzero(survival > 0)
    if len(n) < 2:
        raise ValueError("too few uncensored tail points for a fit")
    y = np.log(survival[n])
    A = np.stack([np.ones(len(n)), n], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = len(n) - 2
    if dof > 0:
        sigma2 = float(((y - A @ coef) ** 2).sum()) / dof
        cov = sigma2 * np.linalg.inv(A.T @ A)
        se = float(math.sqrt(cov[1, 1]))
    else:
        se = float("nan")
    return float(math.exp(coef[0])), float(-coef[1]), se, len(n)


def depths(spec: FlowSpec, site: int, runs: int, max_depth: int = DEFAULT_MAX_DEPTH,
           threads: int = 1) -> BackwardBatch:
    """Backward recursion for ``runs`` replicas of one site, chunked over threads."""
    reps = np.arange(runs)
    chunks = [reps[i:i + BATCH] for i in range(0, runs, BATCH)]
    job = lambda r: backward_batch(spec, (site, site), r, max_depth)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    n_max = max(p.sizes.shape[0] for p in parts)
    sizes = np.concatenate(
        [np.pad(p.sizes, ((0, n_max - p.sizes.shape[0]), (0, 0))) for p in parts], axis=1
    )
    return BackwardBatch(
        np.concatenate([p.depth for p in parts]), np.concatenate([p.truncated for p in parts]), sizes,
    )


def coalescence_tail(
    spec: FlowSpec, site: int = 0, runs: int = 10**4, max_depth: int = DEFAULT_MAX_DEPTH,
    threads: int = 1,
) -> TailReport:
    bb = depths(spec, site, runs, max_depth, threads)
    D = bb.depth
    n_max = int(D.max())
    survival = np.array([(D > n).mean() for n in range(n_max + 1)])
    try:
        c, d, se, k = fit_log_tail(survival)
    except ValueError:
        c, d, se, k = float("nan"), float("nan"), float("nan"), 0
    return TailReport(site, runs, survival, int(bb.truncated.sum()), c, d, se, k)
