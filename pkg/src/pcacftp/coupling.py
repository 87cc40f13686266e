"""Couplings of finite families of distributions, materialised as interval layouts.

A coupling is stored as, for every index ``e``, a list of segments of [0, 1)
labelled by outcomes.  Drawing one uniform ``U`` and reading every index's
segment realises all coordinates at once; because the layout is explicit, the
probability of any event is an exact sum of interval lengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TOL = 1e-12
DEFAULT_ATOM_CAP = 10**7


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "support", tuple(self.support))
        if p.shape != (len(self.support),):
            raise CouplingError("probability vector does not match the support")
        if (p < -TOL).any():
            raise CouplingError(f"negative probability in {p.tolist()}")
        if abs(p.sum() - 1) > TOL:
            raise CouplingError(f"probabilities sum to {p.sum():.15g}")

    @classmethod
    def of(cls, probs, support=None) -> "FiniteDistribution":
        probs = np.asarray(probs, dtype=float)
        return cls(tuple(range(len(probs))) if support is None else tuple(support), probs)


def _check_same_support(family: Sequence[FiniteDistribution]):
    s0 = family[0].support
    for i, d in enumerate(family):
        if d.support != s0:
            raise CouplingError(f"distribution {i} has support {d.support}, expected {s0}")


def tv_distance(p: FiniteDistribution, q: FiniteDistribution) -> float:
    if p.support != q.support:
        raise CouplingError(f"mismatched supports {p.support} vs {q.support}")
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """Interval layout of a coupling.

    ``segments[e]`` is a list of ``(lo, hi, outcome_index)`` covering [0, 1).
    ``shared_mass`` is the length of the region on which the construction
    forces all coordinates to agree (zero when the construction has none).
    """

    support: tuple
    segments: tuple
    e0: int
    shared_mass: float = 0.0

    @property
    def n_indices(self) -> int:
        return len(self.segments)

    def marginals(self) -> np.ndarray:
        out = np.zeros((self.n_indices, len(self.support)))
        for e, segs in enumerate(self.segments):
            for lo, hi, s in segs:
                out[e, s] += hi - lo
        return out

    def refinement(self, cap: int = DEFAULT_ATOM_CAP) -> tuple[np.ndarray, np.ndarray]:
        """Common refinement: atom edges and the outcome index vector on each atom."""
        cuts = sorted({b for segs in self.segments for lo, hi, _ in segs for b in (lo, hi)})
        edges = [0.0]
        for c in cuts:
            if c - edges[-1] > TOL:
                edges.append(c)
        edges[-1] = 1.0
        if len(edges) - 1 > cap:
            raise CouplingError(f"refinement has {len(edges) - 1} atoms, above cap {cap}")
        edges = np.asarray(edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        outcomes = np.stack([self._read(e, mids) for e in range(self.n_indices)], axis=1)
        return edges, outcomes

    def _read(self, e: int, u: np.ndarray) -> np.ndarray:
        segs = sorted((lo, hi, s) for lo, hi, s in self.segments[e] if hi - lo > 0)
        starts = np.array([lo for lo, _, _ in segs])
        labels = np.array([s for _, _, s in segs])
        idx = np.clip(np.searchsorted(starts, u, side="right") - 1, 0, len(segs) - 1)
        return labels[idx]

    def sample(self, u) -> np.ndarray:
        """Outcome indices of all coordinates for uniform(s) ``u``; shape (..., |E|)."""
        u = np.asarray(u, dtype=float)
        return np.stack([self._read(e, u) for e in range(self.n_indices)], axis=-1)

    def outcome(self, s_index: int):
        return self.support[s_index]


def coupling_event_probability(
    table: CouplingTable,
    event: Callable[[np.ndarray], bool],
    cap: int = DEFAULT_ATOM_CAP,
) -> float:
    """Exact probability of ``event`` (a predicate on the outcome-index vector)."""
    edges, outcomes = table.refinement(cap)
    lens = np.diff(edges)
    return float(sum(l for l, o in zip(lens, outcomes) if event(o)))


def all_equal(o: np.ndarray) -> bool:
    return bool((o == o[0]).all())


def pair_equal(i: int, j: int) -> Callable[[np.ndarray], bool]:
    return lambda o: bool(o[i] == o[j])


def _layout(pieces) -> list:
    """Lay ``(length, outcome)`` pieces left to right starting at ``start``."""
    out = []
    for start, length, s in pieces:
        if length > 0:
            out.append((start, start + length, s))
    return out


def type1_coupling(
    family: Sequence[FiniteDistribution],
    e0: int,
    epsilon: float,
    gamma: float | None = None,
) -> CouplingTable:
    """Shared-interval coupling; all-equal probability >= (1-gamma)(1-epsilon/gamma)."""
    if not family:
        raise CouplingError("empty family")
    _check_same_support(family)
    if gamma is None:
        gamma = math.sqrt(epsilon)
    if not 0 < epsilon < gamma < 1:
        raise CouplingError(f"need 0 < epsilon < gamma < 1, got epsilon={epsilon}, gamma={gamma}")
    n_s = len(family[0].support)
    base = family[e0].probs
    for e, d in enumerate(family):
        gap = 0.5 * float(np.abs(d.probs - base).sum())
        if gap > epsilon / n_s + TOL:
            raise CouplingError(
                f"hypothesis violated at index {e}: TV {gap:.6g} > epsilon/|S| = {epsilon / n_s:.6g}"
            )
    in_a = base <= epsilon / (gamma * n_s)
    shared = np.where(in_a, 0.0, (1 - gamma) * base)
    starts = np.concatenate([[0.0], np.cumsum(shared)[:-1]])
    shared_pieces = [(starts[s], shared[s], s) for s in range(n_s)]
    shared_end = float(shared.sum())
    segments = []
    for d in family:
        fill = np.where(in_a, d.probs, d.probs - shared)
        fill = np.maximum(fill, 0.0)
        fstarts = shared_end + np.concatenate([[0.0], np.cumsum(fill)[:-1]])
        segs = _layout(shared_pieces) + _layout((fstarts[s], fill[s], s) for s in range(n_s))
        segments.append(tuple(_close(segs)))
    return CouplingTable(family[0].support, tuple(segments), e0, shared_end)


def type2_coupling(family: Sequence[FiniteDistribution], e0: int) -> CouplingTable:
    """Maximal coupling of every index with ``e0``: P(Z_e != Z_e0) = TV(nu_e, nu_e0)."""
    if not family:
        raise CouplingError("empty family")
    _check_same_support(family)
    n_s = len(family[0].support)
    base = family[e0].probs
    bstarts = np.concatenate([[0.0], np.cumsum(base)[:-1]])
    segments = []
    for e, d in enumerate(family):
        if e == e0:
            segs = _layout((bstarts[s], base[s], s) for s in range(n_s))
            segments.append(tuple(_close(segs)))
            continue
        p = d.probs
        segs = []
        holes = []  # parts of the e0 layout released by outcomes in A_e
        for s in range(n_s):
            if base[s] >= p[s]:
                segs.append((bstarts[s], bstarts[s] + p[s], s))
                holes.append([bstarts[s] + p[s], bstarts[s] + base[s]])
            else:
                segs.append((bstarts[s], bstarts[s] + base[s], s))
        hi = 0
        for s in range(n_s):
            need = p[s] - base[s]
            while need > TOL and hi < len(holes):
                lo_h, hi_h = holes[hi]
                take = min(need, hi_h - lo_h)
                if take > 0:
                    segs.append((lo_h, lo_h + take, s))
                holes[hi][0] = lo_h + take
                need -= take
                if holes[hi][1] - holes[hi][0] <= TOL:
                    hi += 1
        segs = [x for x in segs if x[1] - x[0] > 0]
        segments.append(tuple(_close(sorted(segs))))
    return CouplingTable(family[0].support, tuple(segments), e0, 0.0)


def _close(segs: list) -> list:
    """Absorb float round-off so the last segment ends exactly at 1."""
    segs = sorted(segs)
    if segs:
        lo, hi, s = segs[-1]
        if abs(hi - 1.0) <= 1e-9:
            segs[-1] = (lo, 1.0, s)
    return segs
