"""Integer space-time geometry: trapezoids, nesting and slicing plans, W tiles.

Coordinates are ``(x, t)`` with time increasing downward.  A downward
trapezoid with anchor ``z``, top ordinate ``tau``, height ``L`` and base
length ``K`` has top ``[z-L, z+K+L] x {tau}`` and base ``[z, z+K] x {tau+L}``;
an upward one with top length ``M`` has top ``[z, z+M] x {tau}`` and base
``[z-L, z+M+L] x {tau+L}``.  Intervals are closed and given as ``(lo, hi)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Literal

Orientation = Literal["down", "up"]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Trapezoid:
    orientation: Orientation
    z: int
    tau: int
    height: int
    length: int

    def __post_init__(self):
        if self.orientation not in ("down", "up"):
            raise GeometryError(f"bad orientation {self.orientation!r}")
        if self.height < 0 or self.length < 0:
            raise GeometryError("height and length must be non-negative")

    def row(self, m: int) -> tuple[int, int]:
        """Sites of the row at ordinate ``tau + m``."""
        if not 0 <= m <= self.height:
            raise GeometryError(f"row {m} outside 0..{self.height}")
        L, z = self.height, self.z
        if self.orientation == "down":
            return (z - L + m, z + self.length + L - m)
        return (z - m, z + self.length + m)

    @property
    def top(self) -> tuple[int, int]:
        return self.row(0)

    @property
    def base(self) -> tuple[int, int]:
        return self.row(self.height)

    @property
    def base_time(self) -> int:
        return self.tau + self.height

    def rows(self) -> Iterator[tuple[int, int, int]]:
        for m in range(self.height + 1):
            lo, hi = self.row(m)
            yield self.tau + m, lo, hi

    def cells(self) -> set[tuple[int, int]]:
        return {(x, t) for t, lo, hi in self.rows() for x in range(lo, hi + 1)}

    def interior_cells(self) -> list[tuple[int, int]]:
        """Cells below the top row, in row-major order."""
        return [(x, t) for t, lo, hi in self.rows() if t > self.tau for x in range(lo, hi + 1)]

    def n_cells(self) -> int:
        return sum(hi - lo + 1 for _, lo, hi in self.rows())

    def contains(self, x: int, t: int) -> bool:
        m = t - self.tau
        if not 0 <= m <= self.height:
            return False
        lo, hi = self.row(m)
        return lo <= x <= hi

    def shifted(self, dx: int, dt: int) -> "Trapezoid":
        return Trapezoid(self.orientation, self.z + dx, self.tau + dt, self.height, self.length)


def row(T: Trapezoid, m: int) -> tuple[int, int]:
    return T.row(m)


def outer_boundary(T: Trapezoid) -> list[tuple[int, int]]:
    """Sites at horizontal distance 1 and 2 outside the lateral sides of an upward trapezoid.

    Ordered row by row, each row as ``(left-1, left-2, right+1, right+2)``.
    """
    if T.orientation != "up":
        raise GeometryError("outer boundary is defined for upward trapezoids only")
    out = []
    for m in range(T.height):
        lo, hi = T.row(m)
        t = T.tau + m
        out += [(lo - 1, t), (lo - 2, t), (hi + 1, t), (hi + 2, t)]
    return out


# --- self-similar nesting ---------------------------------------------------


def _even_floor(v) -> int:
    f = math.floor(v)
    return f - (f % 2)


def _exact(alpha) -> Fraction:
    return Fraction(str(alpha)) if isinstance(alpha, float) else Fraction(alpha)


def selfsim_sequences(alpha, ell0: int, n: int) -> tuple[list[int], list[int]]:
    """Heights and base lengths of the nested trapezoid sizes 0..n."""
    a = _exact(alpha)
    if a <= 0:
        raise GeometryError("alpha must be positive")
    if ell0 % 2 or ell0 < 4 * a:
        raise GeometryError(f"ell0 must be even and >= 4*alpha, got {ell0}")
    if n < 0:
        raise GeometryError("n must be non-negative")
    ell, kk = [ell0], []
    for i in range(n + 1):
        kk.append(_even_floor(Fraction(ell[i]) / a))
        if i < n:
            ell.append(kk[i] // 2 + 2 * ell[i])
    return ell, kk


@dataclass(frozen=True)
class SelfSimilarPlan:
    alpha: float
    ell: tuple[int, ...]
    kk: tuple[int, ...]
    q: int
    enclosing: Trapezoid
    placements: tuple[tuple[int, Trapezoid], ...]
    leftover: tuple[tuple[int, int], ...]  # base intervals not covered by any placement
    f: float

    @property
    def n(self) -> int:
        return len(self.ell) - 1

    @property
    def K(self) -> int:
        return self.enclosing.length

    @property
    def L(self) -> int:
        return self.enclosing.height

    @property
    def r(self) -> int:
        return len(self.placements)

    @property
    def uncovered(self) -> int:
        return sum(hi - lo for lo, hi in self.leftover)


def nested_plan(alpha, ell0: int, n: int, q: int, z: int = 0, tau: int = 0) -> SelfSimilarPlan:
    """Place ``q`` generation-0 trapezoids and recursively fill the gaps between them."""
    if q < 2:
        raise GeometryError("q must be at least 2")
    ell, kk = selfsim_sequences(alpha, ell0, n)
    Ln, kn = ell[n], kk[n]
    K = q * kn + (2 * q - 2) * Ln
    enclosing = Trapezoid("down", z, tau, Ln, K)
    base_t = tau + Ln
    placements: list[tuple[int, Trapezoid]] = []
    # pending upward triangles: (generation of the trapezoid they receive, apex x, size index)
    triangles: list[tuple[int, int, int]] = []
    for j in range(q):
        a = z + j * (kn + 2 * Ln)
        placements.append((0, Trapezoid("down", a, tau, Ln, kn)))
        if j < q - 1:
            triangles.append((1, a + kn + Ln, n))
    leftover = []
    while triangles:
        gen, c, j = triangles.pop(0)
        if j == 0:
            leftover.append((c - ell[0], c + ell[0]))
            continue
        h, k = ell[j - 1], kk[j - 1]
        b = c - ell[j] + 2 * h
        placements.append((gen, Trapezoid("down", b, base_t - h, h, k)))
        triangles.append((gen + 1, c - ell[j] + h, j - 1))
        triangles.append((gen + 1, b + k + h, j - 1))
    f = (2 * q - 2) * Ln * (8 * float(alpha) / (1 + 8 * float(alpha))) ** n
    return SelfSimilarPlan(
        float(alpha), tuple(ell), tuple(kk), q, enclosing, tuple(placements),
        tuple(sorted(leftover)), f,
    )


def check_selfsim_plan(plan: SelfSimilarPlan) -> list[str]:
    """Exact geometric checks; returns human-readable violations (empty if none)."""
    bad = []
    T = plan.enclosing
    traps = sorted((p for _, p in plan.placements), key=lambda p: p.z)
    for p in traps:
        if p.base_time != T.base_time:
            bad.append(f"placement {p} does not sit on the enclosing base")
        lo, hi = p.base
        if lo < T.base[0] or hi > T.base[1] or p.height > T.height:
            bad.append(f"placement {p} leaves the enclosing trapezoid")
    # two downward trapezoids on a common base line are interior-disjoint iff the
    # gap between their bases is at least twice the smaller height
    for i, p in enumerate(traps):
        for s in traps[i + 1:]:
            if s.base[0] - p.base[1] < 2 * min(p.height, s.height):
                bad.append(f"placements {p} and {s} overlap")
    covered = sum(p.length for p in traps)
    if covered + plan.uncovered != plan.K:
        bad.append(f"coverage mismatch: {covered} + {plan.uncovered} != {plan.K}")
    expected_gap = (plan.q - 1) * 2 ** plan.n * 2 * plan.ell[0]
    if plan.uncovered != expected_gap:
        bad.append(f"uncovered {plan.uncovered} != {expected_gap}")
    if plan.uncovered > plan.f + 1e-9:
        bad.append(f"uncovered {plan.uncovered} exceeds f = {plan.f:.6g}")
    if plan.r > plan.q * 2 ** plan.n:
        bad.append(f"r = {plan.r} exceeds q 2^n = {plan.q * 2 ** plan.n}")
    if plan.r != plan.q + (plan.q - 1) * (2 ** plan.n - 1):
        bad.append(f"r = {plan.r} disagrees with the generation count")
    a = _exact(plan.alpha)
    for l, k in zip(plan.ell, plan.kk):
        if not (Fraction(1, 2) / a <= Fraction(k, l) <= 1 / a):
            bad.append(f"ratio k/l = {k}/{l} outside [1/(2 alpha), 1/alpha]")
    return bad


# --- slicing of upward trapezoids --------------------------------------------


@dataclass(frozen=True)
class Slice:
    i: int
    trapezoid: Trapezoid
    intervals: tuple[tuple[int, int], ...]  # I_1..I_7, consecutive, sharing endpoints
    subs: tuple[Trapezoid, Trapezoid, Trapezoid]

    @property
    def g(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.intervals)


@dataclass(frozen=True)
class SlicePlan:
    L: int
    M: int
    b: float
    t: int
    q: int
    k: int
    g_side: int
    i_min: int
    outer: Trapezoid

    def slice(self, i: int) -> Slice:
        T, t, k = self.outer, self.t, self.k
        Ti = Trapezoid("up", T.z - (i - 1) * t, T.tau + (i - 1) * t, t, self.M + 2 * (i - 1) * t)
        lo, hi = Ti.base
        g_mid = (hi - lo) - 4 * k - 2 * self.g_side
        lengths = (k, self.g_side, k, g_mid, k, self.g_side, k)
        cuts = [lo]
        for g in lengths:
            cuts.append(cuts[-1] + g)
        iv = tuple((cuts[j], cuts[j + 1]) for j in range(7))
        bt = Ti.base_time
        h1 = k // 2
        subs = (
            Trapezoid("down", iv[1][0], bt - h1, h1, self.g_side),
            Trapezoid("down", iv[3][0], bt - t, t, max(g_mid, 0)),
            Trapezoid("down", iv[5][0], bt - h1, h1, self.g_side),
        )
        return Slice(i, Ti, iv, subs)

    def slices(self) -> Iterator[Slice]:
        for i in range(self.i_min, self.q + 1):
            yield self.slice(i)


def slice_plan(L: int, M: int, b: float, z: int = 0, tau: int = 0) -> SlicePlan:
    if L < 3:
        raise GeometryError("slice plans need L >= 3 (log log L must be positive)")
    if M < 0 or M > L:
        raise GeometryError("need 0 <= M <= L")
    if b <= 0:
        raise GeometryError("b must be positive")
    lg = math.log(L)
    t = math.ceil(2 * lg / b)
    q = L // t
    k = _even_floor((6 / b) * math.log(lg))
    g_side = math.ceil(lg**2)
    i_min = math.ceil(lg**3)
    return SlicePlan(L, M, b, t, q, max(k, 0), g_side, i_min, Trapezoid("up", z, tau, L, M))


def slice_feasible(plan: SlicePlan) -> bool:
    """At least one slice exists and every slice has ``g_4 >= 0`` (g_4 grows with i)."""
    if plan.i_min > plan.q:
        return False
    return plan.slice(plan.i_min).g[3] >= 0


def smallest_feasible_L(b: float, M: int = 0, L_max: int = 10**4) -> int | None:
    """Smallest ``3 <= L <= L_max`` whose slice plan is feasible, or None."""
    for L in range(max(3, M), L_max + 1):
        if slice_feasible(slice_plan(L, M, b)):
            return L
    return None


def check_slice_plan(plan: SlicePlan) -> list[str]:
    bad = []
    T = plan.outer
    for s in plan.slices():
        Ti = s.trapezoid
        lo, hi = Ti.base
        g = s.g
        if any(x < 0 for x in g):
            bad.append(f"slice {s.i}: negative interval length {g}")
        if sum(g) != hi - lo:
            bad.append(f"slice {s.i}: lengths sum to {sum(g)} != base length {hi - lo}")
        if s.intervals[0][0] != lo or s.intervals[-1][1] != hi:
            bad.append(f"slice {s.i}: intervals do not span the base")
        if Ti.top != T.row(Ti.tau - T.tau) or Ti.base != T.row(Ti.base_time - T.tau):
            bad.append(f"slice {s.i}: not a slice of the outer trapezoid")
        for j, sub in zip((2, 4, 6), s.subs):
            if sub.base != s.intervals[j - 1] and not (j == 4 and g[3] < 0):
                bad.append(f"slice {s.i}: sub-trapezoid {j} not on I_{j}")
            h = sub.height
            if sub.base_time != Ti.base_time or h > Ti.height:
                bad.append(f"slice {s.i}: sub-trapezoid on I_{j} leaves the slice vertically")
            if sub.base[0] - lo < 2 * h or hi - sub.base[1] < 2 * h:
                bad.append(f"slice {s.i}: sub-trapezoid on I_{j} crosses the lateral sides")
        a, c, e = s.subs
        for p, r in ((a, c), (c, e), (a, e)):
            if r.base[0] - p.base[1] < 2 * min(p.height, r.height):
                bad.append(f"slice {s.i}: sub-trapezoids overlap")
    return bad


# --- the W construction and the CFTP tiling -----------------------------------


@dataclass(frozen=True)
class WPlan:
    L: int
    L1: int
    K1: int
    Ta: Trapezoid
    Tb: Trapezoid
    Tc: Trapezoid
    T1: Trapezoid
    T2: Trapezoid
    T3: Trapezoid
    S1: Trapezoid  # triangle below T1
    S2: Trapezoid  # triangle below T2

    @property
    def K(self) -> int:
        return 2 * self.L

    @property
    def L2(self) -> int:
        return self.L - self.L1

    @property
    def M2(self) -> int:
        return 2 * self.L1 - 2


def w_plan(L: int, L1: int, K1: int, z: int = 0, tau: int | None = None) -> WPlan:
    """The T_a, T_b, T_c group of height ``L`` centred at ``z``; base at time ``tau + L``.

    By default the group is anchored as in the CFTP tiling: top at time ``-L``,
    base at time 0.
    """
    if K1 % 2:
        raise GeometryError(f"K1 must be even, got {K1}")
    if not 0 < L1 < L:
        raise GeometryError(f"need 0 < L1 < L, got L1={L1}, L={L}")
    if L != L1 + K1 // 2:
        raise GeometryError(f"L = {L} but L1 + K1/2 = {L1 + K1 // 2}")
    if tau is None:
        tau = -L
    Ta = Trapezoid("down", z - L, tau, L, 0)
    Tc = Trapezoid("down", z + L, tau, L, 0)
    Tb = Trapezoid("up", z, tau + 1, L - 1, 0)
    T1 = Trapezoid("down", z - 2 * L + L1, tau, L1, K1)
    T2 = Trapezoid("down", z + L1, tau, L1, K1)
    S1 = Trapezoid("down", z - L, tau + L1, K1 // 2, 0)
    S2 = Trapezoid("down", z + L, tau + L1, K1 // 2, 0)
    T3 = Trapezoid("up", z - (L1 - 1), tau + L1, L - L1, 2 * L1 - 2)
    return WPlan(L, L1, K1, Ta, Tb, Tc, T1, T2, T3, S1, S2)


def default_w_plan(L: int, z: int = 0, tau: int | None = None) -> WPlan:
    return w_plan(L, 1, 2 * (L - 1), z, tau)


def check_w_plan(p: WPlan) -> list[str]:
    bad = []
    L, K = p.L, p.K
    if p.Ta.top[1] - p.Ta.top[0] != K or p.Ta.height != L or p.Ta.length != 0:
        bad.append("T_a is not a downward triangle of top length K and height L")
    if p.Tc.top[1] - p.Tc.top[0] != K or p.Tc.height != L or p.Tc.length != 0:
        bad.append("T_c is not a downward triangle of top length K and height L")
    if p.Tb.height != L - 1 or p.Tb.base[1] - p.Tb.base[0] != K - 2:
        bad.append("T_b is not an upward triangle of height L-1 and base length K-2")
    for t, lo, hi in p.Tb.rows():
        a_hi = p.Ta.row(t - p.Ta.tau)[1]
        c_lo = p.Tc.row(t - p.Tc.tau)[0]
        if lo - a_hi != 1 or c_lo - hi != 1:
            bad.append(f"T_b not at horizontal distance 1 from T_a, T_c at time {t}")
    top_lo, top_hi = p.Ta.top[0], p.Tc.top[1]
    if top_hi - top_lo + 1 != 4 * L + 1:
        bad.append(f"top span {top_hi - top_lo + 1} != 4L+1")
    base_sites = {p.Ta.base[0], p.Tc.base[0], *range(p.Tb.base[0], p.Tb.base[1] + 1)}
    if base_sites != set(range(p.Ta.base[0], p.Tc.base[1] + 1)) or len(base_sites) != 2 * L + 1:
        bad.append("base of T_a u T_b u T_c is not a contiguous span of 2L+1 sites")
    ca, cb, cc = p.Ta.cells(), p.Tb.cells(), p.Tc.cells()
    if ca & cb or cc & cb or (ca & cc) != {(p.Ta.top[1], p.Ta.tau)}:
        bad.append("T_a, T_b, T_c overlap beyond the shared top corner")
    if p.K1 % 2:
        bad.append("K1 odd")
    if p.T1.cells() | p.S1.cells() != ca or p.T2.cells() | p.S2.cells() != cc:
        bad.append("T_1 u S_1 != T_a or T_2 u S_2 != T_c")
    if not p.T3.cells() <= cb:
        bad.append("T_3 not inside T_b")
    if p.T3.length != p.M2 or p.T3.height != p.L2 or p.T3.base[1] - p.T3.base[0] != K - 2:
        bad.append("T_3 dimensions disagree with (M_2, L_2, K-2)")
    if not set(outer_boundary(p.T3)) <= (p.S1.cells() | p.S2.cells()):
        bad.append("outer boundary of T_3 not inside S_1 u S_2")
    return bad


@dataclass(frozen=True)
class Tiling:
    """Tiling of Z x (-N) by translates of T_a and T_b by lam1 (2L, 0) + lam2 (0, L).

    Band ``n = -lam2`` holds the cells at times ``-(n+1)L+1 .. -nL``; its top row
    at time ``-(n+1)L`` is the input of the band.
    """

    L: int

    def __post_init__(self):
        if self.L < 1:
            raise GeometryError("L must be positive")

    def tile(self, kind: str, lam1: int, lam2: int) -> Trapezoid:
        if lam2 > 0:
            raise GeometryError("lam2 must be <= 0")
        L = self.L
        base = (
            Trapezoid("down", -L, -L, L, 0) if kind == "a" else Trapezoid("up", 0, -L + 1, L - 1, 0)
        )
        return base.shifted(2 * L * lam1, L * lam2)

    def band(self, t: int) -> int:
        if t > 0:
            raise GeometryError("times must be <= 0")
        return (-t) // self.L

    def tile_of(self, x: int, t: int) -> tuple[str, int, int]:
        """The tile owning cell (x, t), never counting band top rows."""
        L = self.L
        n = self.band(t)
        m = t + (n + 1) * L
        r = x % (2 * L)
        lam = (x - r) // (2 * L)
        if r <= m - 1:
            return ("b", lam, -n)
        if r >= 2 * L - m + 1:
            return ("b", lam + 1, -n)
        return ("a", lam + 1, -n)

    def center(self, x: int) -> int:
        """Centre index lam of the tile group whose base covers x (ties go right)."""
        return (x + self.L) // (2 * self.L)

    def group_top(self, lam: int) -> tuple[int, int]:
        z = 2 * self.L * lam
        return (z - 2 * self.L, z + 2 * self.L)


def tiling(L: int) -> Tiling:
    return Tiling(L)


def check_tiling(T: Tiling, lam_range: range, n_bands: int) -> list[str]:
    """Every non-top cell in a window owned by exactly one tile, consistently with tile_of."""
    bad = []
    L = T.L
    owners: dict[tuple[int, int], list] = {}
    for lam2 in range(0, -n_bands, -1):
        for lam1 in range(lam_range.start - 1, lam_range.stop + 2):
            for kind in "ab":
                tr = T.tile(kind, lam1, lam2)
                for x, t in tr.cells():
                    if t == tr.tau and kind == "a":
                        continue
                    owners.setdefault((x, t), []).append((kind, lam1, lam2))
    x_lo, x_hi = 2 * L * lam_range.start, 2 * L * lam_range.stop
    for t in range(-n_bands * L + 1, 1):
        for x in range(x_lo, x_hi):
            own = owners.get((x, t), [])
            if len(own) != 1:
                bad.append(f"cell {(x, t)} owned by {own}")
            elif own[0] != T.tile_of(x, t):
                bad.append(f"tile_of{(x, t)} = {T.tile_of(x, t)} but owner is {own[0]}")
    return bad
