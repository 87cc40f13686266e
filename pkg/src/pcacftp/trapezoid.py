"""PCA dynamics restricted to trapezoids, envelopes on trapezoids, exact small laws.

Every cell ``(x, t)`` of a trapezoid consumes the grid variate keyed by its
absolute coordinates (plus level and replica), so overlapping constructions
see the same randomness.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import (
    Configuration,
    EnvelopeConfiguration,
    Kernel,
    WindowError,
    is_singleton_mask,
    mask_to_set,
)
from .geometry import Trapezoid, outer_boundary
from .grid import STREAM_BASIC, RandomGrid

DEFAULT_ENUM_CAP = 10**7


class CapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class TrapezoidField:
    trapezoid: Trapezoid
    rows: tuple[tuple[int, ...], ...]

    def value(self, x: int, t: int) -> int:
        m = t - self.trapezoid.tau
        lo, _ = self.trapezoid.row(m)
        return self.rows[m][x - lo]

    @property
    def base(self) -> tuple[int, ...]:
        return self.rows[-1]

    def interior(self) -> tuple[int, ...]:
        return tuple(v for r in self.rows[1:] for v in r)

    def to_json(self) -> str:
        T = self.trapezoid
        return json.dumps({"trapezoid": T.__dict__, "rows": [list(r) for r in self.rows]})


@dataclass(frozen=True)
class EnvelopeField:
    trapezoid: Trapezoid
    rows: tuple[np.ndarray, ...]  # bitmask per site

    @property
    def base(self) -> np.ndarray:
        return self.rows[-1]

    def sets(self, m: int) -> list[frozenset]:
        return [mask_to_set(int(v)) for v in self.rows[m]]


def _check_top(T: Trapezoid, zeta: Configuration):
    lo, hi = T.top
    if zeta.offset != lo or len(zeta) != hi - lo + 1:
        raise WindowError(f"top configuration covers {zeta.sites}, trapezoid top is [{lo}, {hi}]")


def _chi_row(T: Trapezoid, chi: Mapping, m: int) -> tuple[list[int], list[int]]:
    lo, hi = T.row(m)
    t = T.tau + m
    try:
        left = [chi[(lo - 2, t)], chi[(lo - 1, t)]]
        right = [chi[(hi + 1, t)], chi[(hi + 2, t)]]
    except KeyError as err:
        raise WindowError(f"boundary condition missing site {err.args[0]}") from None
    return left, right


def downward_run(
    k: Kernel, T: Trapezoid, zeta: Configuration, grid: RandomGrid, level: int = 0,
    replica: int = 0, stream: int = STREAM_BASIC,
) -> TrapezoidField:
    if T.orientation != "down":
        raise WindowError("downward_run needs a downward trapezoid")
    _check_top(T, zeta)
    rf = k.random_function
    rows = [tuple(zeta.word)]
    cur = np.asarray(zeta.word)
    for m in range(1, T.height + 1):
        lo, hi = T.row(m)
        u = grid.uniform(level, np.arange(lo, hi + 1), T.tau + m, replica, stream)
        cur = rf.step(rf.atom_of(u), cur)
        rows.append(tuple(int(v) for v in cur))
    return TrapezoidField(T, tuple(rows))


def upward_run(
    k: Kernel, T: Trapezoid, zeta: Configuration, chi: Mapping, grid: RandomGrid,
    level: int = 0, replica: int = 0, stream: int = STREAM_BASIC,
) -> TrapezoidField:
    """Dynamics with boundary condition ``chi`` given on the outer boundary."""
    if T.orientation != "up":
        raise WindowError("upward_run needs an upward trapezoid")
    _check_top(T, zeta)
    rf = k.random_function
    rows = [tuple(zeta.word)]
    for m in range(T.height):
        left, right = _chi_row(T, chi, m)
        ext = np.asarray(left + list(rows[-1]) + right)
        lo, hi = T.row(m + 1)
        u = grid.uniform(level, np.arange(lo, hi + 1), T.tau + m + 1, replica, stream)
        rows.append(tuple(int(v) for v in rf.step(rf.atom_of(u), ext)))
    return TrapezoidField(T, tuple(rows))


def envelope_run(
    k: Kernel, T: Trapezoid, grid: RandomGrid, level: int = 0, replica: int = 0,
    top: EnvelopeConfiguration | None = None, chi: Mapping | None = None,
    stream: int = STREAM_BASIC,
) -> EnvelopeField:
    """Envelope dynamics on T; unspecified top / boundary sets default to the full alphabet.

    ``chi`` maps boundary sites to symbol sets (or single symbols).
    """
    full = np.uint64(k.alphabet.full_mask)
    lo, hi = T.top
    if top is None:
        cur = np.full(hi - lo + 1, full, dtype=np.uint64)
    else:
        if top.offset != lo or len(top) != hi - lo + 1:
            raise WindowError("top envelope does not match the trapezoid top")
        cur = top.masks()
    rf = k.random_function
    rows = [cur]
    for m in range(T.height):
        if T.orientation == "up":
            t = T.tau + m
            rlo, rhi = T.row(m)
            sites = [(rlo - 2, t), (rlo - 1, t), (rhi + 1, t), (rhi + 2, t)]
            bm = [_as_mask(chi.get(s) if chi else None, full) for s in sites]
            cur = np.concatenate([bm[:2], cur, bm[2:]]).astype(np.uint64)
        nlo, nhi = T.row(m + 1)
        u = grid.uniform(level, np.arange(nlo, nhi + 1), T.tau + m + 1, replica, stream)
        cur = rf.envelope(rf.atom_of(u), cur)
        rows.append(cur)
    return EnvelopeField(T, tuple(rows))


def _as_mask(v, full) -> np.uint64:
    if v is None:
        return full
    if isinstance(v, (int, np.integer)):
        return np.uint64(1 << int(v))
    m = 0
    for s in v:
        m |= 1 << int(s)
    return np.uint64(m)


def coalesced(field: EnvelopeField) -> bool:
    return bool(is_singleton_mask(field.base).all())


def locked_sites(field: EnvelopeField) -> set[tuple[int, int]]:
    T = field.trapezoid
    lo, _ = T.base
    ok = is_singleton_mask(field.base)
    return {(lo + i, T.base_time) for i in np.flatnonzero(ok)}


# --- exact laws ---------------------------------------------------------------


@dataclass(frozen=True)
class ExactTrapezoidLaw:
    """Exact law of the cells below the top row, keyed by row-major value tuples."""

    trapezoid: Trapezoid
    fields: dict

    def base(self) -> dict:
        nb = self.trapezoid.base[1] - self.trapezoid.base[0] + 1
        out: dict = {}
        for f, p in self.fields.items():
            key = f[-nb:] if f else ()
            out[key] = out.get(key, 0.0) + p
        return out

    def total(self) -> float:
        return float(sum(self.fields.values()))


def _cell_distribution(k: Kernel) -> np.ndarray:
    """Per-triple value distribution obtained by summing atom lengths."""
    rf = k.random_function
    n = k.size
    out = np.zeros((n, n, n, n))
    for i, l in enumerate(rf.lengths):
        for a, b, c in itertools.product(range(n), repeat=3):
            out[a, b, c, rf.table[i, a, b, c]] += l
    return out


def exact_law(
    k: Kernel, T: Trapezoid, zeta: Configuration, chi: Mapping | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> ExactTrapezoidLaw:
    """Law of the field below the top by enumerating atoms cell by cell, row by row."""
    _check_top(T, zeta)
    if T.orientation == "up" and chi is None:
        raise WindowError("upward trapezoids need a boundary condition")
    n = k.size
    n_int = T.n_cells() - (T.top[1] - T.top[0] + 1)
    if n ** n_int > cap and k.random_function.n_atoms ** n_int > cap:
        raise CapExceeded(f"{n_int} cells exceed the enumeration cap {cap}")
    dist = _cell_distribution(k)
    states = {(): (1.0, tuple(zeta.word))}  # history -> (prob, last row)
    for m in range(T.height):
        if T.orientation == "up":
            left, right = _chi_row(T, chi, m)
        new: dict = {}
        for hist, (p, last) in states.items():
            ext = list(last) if T.orientation == "down" else left + list(last) + right
            per_cell = [dist[ext[i], ext[i + 1], ext[i + 2]] for i in range(len(ext) - 2)]
            supports = [np.flatnonzero(d > 0) for d in per_cell]
            for vals in itertools.product(*supports):
                q = p
                for d, v in zip(per_cell, vals):
                    q *= d[v]
                new[hist + vals] = (q, vals)
        if len(new) > cap:
            raise CapExceeded(f"{len(new)} partial fields exceed the cap {cap}")
        states = new
    return ExactTrapezoidLaw(T, {h: p for h, (p, _) in states.items()})


# --- restriction lemmas ---------------------------------------------------------


@dataclass(frozen=True)
class RestrictionReport:
    max_deviation: float
    n_conditions: int
    n_cells: int
    n_out_cells: int


def _ambient_rows(T: Trapezoid, s: int, margin: int) -> list[tuple[int, int, int]]:
    blo, bhi = T.base
    end = T.base_time
    return [(t, blo - margin - (end - t), bhi + margin + (end - t)) for t in range(s, end + 1)]


def _shadow(T: Trapezoid, rows) -> set:
    """Ambient cells depending on randomness of T below its top (T included)."""
    sh = set()
    for t, lo, hi in rows:
        for x in range(lo, hi + 1):
            if t > T.tau and (
                T.contains(x, t) or any((y, t - 1) in sh for y in (x - 1, x, x + 1))
            ):
                sh.add((x, t))
    return sh


def out_region(T: Trapezoid, s: int, margin: int = 1, rule: str = "cone") -> set:
    """Conditioning region within the finite ambient window.

    ``rule="cone"``: every ambient cell outside the forward light cone of
    T minus its top (for upward trapezoids this is every cell outside T, plus
    the top).  ``rule="lateral"``: downward only, cells outside T whose
    horizontal distance to the lateral side at their own time is >= t - tau.
    """
    rows = _ambient_rows(T, s, margin)
    cells = {(x, t) for t, lo, hi in rows[1:] for x in range(lo, hi + 1)}
    if rule == "cone":
        return cells - _shadow(T, rows)
    if rule == "lateral":
        if T.orientation != "down":
            raise ValueError("lateral rule is defined for downward trapezoids")
        out = set()
        for x, t in cells:
            if t <= T.tau:
                out.add((x, t))
                continue
            lo, hi = T.row(t - T.tau)
            if x < lo and lo - x >= t - T.tau or x > hi and x - hi >= t - T.tau:
                out.add((x, t))
        return out
    raise ValueError(f"unknown rule {rule!r}")


def ambient_joint(k: Kernel, rows, xi: Configuration) -> tuple[list, np.ndarray, np.ndarray]:
    """Exact joint law of all ambient cells by enumerating values with kernel weights.

    Returns (cell list, value matrix (n_assign, n_cells), probabilities).
    """
    t0, lo0, hi0 = rows[0]
    if xi.offset != lo0 or len(xi) != hi0 - lo0 + 1:
        raise WindowError(f"initial configuration must cover [{lo0}, {hi0}]")
    n = k.size
    cells = [(x, t) for t, lo, hi in rows[1:] for x in range(lo, hi + 1)]
    nc = len(cells)
    if n ** nc > DEFAULT_ENUM_CAP:
        raise CapExceeded(f"{nc} ambient cells exceed the enumeration cap")
    vals = np.indices((n,) * nc).reshape(nc, -1).T if nc else np.zeros((1, 0), dtype=int)
    prob = np.ones(len(vals))
    col = {c: i for i, c in enumerate(cells)}
    x0 = {x: v for x, v in zip(range(lo0, hi0 + 1), xi.word)}
    for j, (x, t) in enumerate(cells):
        nb = []
        for y in (x - 1, x, x + 1):
            if t - 1 == t0:
                nb.append(np.full(len(vals), x0[y]))
            else:
                nb.append(vals[:, col[(y, t - 1)]])
        prob = prob * k.table[nb[0], nb[1], nb[2], vals[:, j]]
    return cells, vals, prob


def restriction_check(
    k: Kernel, T: Trapezoid, s: int, xi: Configuration, margin: int = 1, rule: str = "cone",
) -> RestrictionReport:
    """Compare the conditional law of T given the out-region with :func:`exact_law`."""
    if s > T.tau:
        raise ValueError("start time must not exceed the top ordinate")
    rows = _ambient_rows(T, s, margin)
    cells, vals, prob = ambient_joint(k, rows, xi)
    out = out_region(T, s, margin, rule)
    t_cells = T.interior_cells()
    col = {c: i for i, c in enumerate(cells)}
    x0 = dict(zip(xi.sites, xi.word))
    out_idx = [col[c] for c in sorted(out, key=lambda c: (c[1], c[0]))]
    t_idx = [col[c] for c in t_cells]
    keep = prob > 0
    vals, prob = vals[keep], prob[keep]
    o_rows, o_inv = np.unique(vals[:, out_idx], axis=0, return_inverse=True)
    f_rows, f_inv = np.unique(vals[:, t_idx], axis=0, return_inverse=True)
    joint = np.zeros((len(o_rows), len(f_rows)))
    np.add.at(joint, (o_inv.ravel(), f_inv.ravel()), prob)
    f_keys = {tuple(int(v) for v in r): j for j, r in enumerate(f_rows)}
    cond = joint / joint.sum(axis=1, keepdims=True)
    top_lo, top_hi = T.top
    bnd = outer_boundary(T) if T.orientation == "up" else []
    # the exact law depends on the out-region only through (top, boundary)
    pos = {c: i for i, c in enumerate(cells[i] for i in out_idx)}
    key_cells = [(x, T.tau) for x in range(top_lo, top_hi + 1)] + list(bnd)
    key_cols = np.stack(
        [o_rows[:, pos[c]] if c in pos else np.full(len(o_rows), x0[c[0]]) for c in key_cells],
        axis=1,
    )
    keys, k_inv = np.unique(key_cols, axis=0, return_inverse=True)
    k_inv = k_inv.ravel()
    n_top = top_hi - top_lo + 1
    worst = 0.0
    for g, key in enumerate(keys):
        zeta = Configuration(top_lo, tuple(int(v) for v in key[:n_top]))
        chi = {c: int(v) for c, v in zip(bnd, key[n_top:])}
        ref = exact_law(k, T, zeta, chi if bnd else None).fields
        vec = np.zeros(len(f_rows))
        for f, p in ref.items():
            j = f_keys.get(tuple(f))
            if j is None:
                worst = max(worst, p)
            else:
                vec[j] += p
        worst = max(worst, float(np.abs(cond[k_inv == g] - vec).max()))
    return RestrictionReport(worst, len(o_rows), len(cells), len(out))
