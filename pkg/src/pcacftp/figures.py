"""Deterministic SVG renderings of plans, tilings and experiment curves."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon  # noqa: E402

from .geometry import SelfSimilarPlan, SlicePlan, Tiling, Trapezoid, WPlan  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "pcacftp",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
})

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3")


def save_svg(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _outline(T: Trapezoid) -> np.ndarray:
    """Polygon around the unit cells of T (x right, time downwards)."""
    (tlo, thi), (blo, bhi) = T.top, T.base
    t0, t1 = T.tau - 0.5, T.base_time + 0.5
    return np.array([(tlo - 0.5, t0), (thi + 0.5, t0), (bhi + 0.5, t1), (blo - 0.5, t1)])


def draw_trapezoid(ax, T: Trapezoid, color="#4c72b0", alpha=0.35, label=None, **kw):
    ax.add_patch(Polygon(_outline(T), closed=True, fc=color, ec=color, alpha=alpha, lw=0.8, **kw))
    if label:
        (lo, hi), tm = T.base, 0.5 * (T.tau + T.base_time)
        ax.text(0.5 * (lo + hi), tm, label, ha="center", va="center", fontsize=7)


def _frame(ax, traps, title):
    xs = np.concatenate([_outline(T)[:, 0] for T in traps])
    ts = np.concatenate([_outline(T)[:, 1] for T in traps])
    ax.set_xlim(xs.min() - 1, xs.max() + 1)
    ax.set_ylim(ts.max() + 1, ts.min() - 1)
    ax.set_xlabel("site x")
    ax.set_ylabel("time t")
    ax.set_title(title)


def plot_selfsim(plan: SelfSimilarPlan):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    draw_trapezoid(ax, plan.enclosing, color="#bbbbbb", alpha=0.25)
    for gen, T in plan.placements:
        draw_trapezoid(ax, T, color=PALETTE[gen % len(PALETTE)])
    bt = plan.enclosing.base_time
    for lo, hi in plan.leftover:
        ax.plot([lo, hi], [bt + 0.5, bt + 0.5], color="k", lw=2)
    _frame(ax, [plan.enclosing], f"self-similar plan: q={plan.q}, n={plan.n}, r={plan.r}")
    return fig


def plot_wplan(plan: WPlan):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    parts = [("Ta", plan.Ta), ("Tb", plan.Tb), ("Tc", plan.Tc), ("T1", plan.T1), ("T2", plan.T2),
             ("S1", plan.S1), ("S2", plan.S2), ("T3", plan.T3)]
    for i, (name, T) in enumerate(parts):
        draw_trapezoid(ax, T, color=PALETTE[i % len(PALETTE)], alpha=0.25, label=name)
    _frame(ax, [plan.Ta, plan.Tc], f"W group: L={plan.L}, L1={plan.L1}, K1={plan.K1}")
    return fig


def plot_slices(plan: SlicePlan, max_slices: int = 12):
    fig, ax = plt.subplots(figsize=(8, 4))
    draw_trapezoid(ax, plan.outer, color="#bbbbbb", alpha=0.2)
    for j, s in enumerate(plan.slices()):
        if j >= max_slices:
            break
        draw_trapezoid(ax, s.trapezoid, color=PALETTE[j % len(PALETTE)], alpha=0.15)
        for sub in s.subs:
            draw_trapezoid(ax, sub, color=PALETTE[j % len(PALETTE)], alpha=0.5)
    _frame(ax, [plan.outer], f"slices: L={plan.L}, M={plan.M}, b={plan.b:g}, t={plan.t}")
    return fig


def plot_tiling(T: Tiling, lam_range: range, n_bands: int):
    fig, ax = plt.subplots(figsize=(8, 3.5))
    traps = []
    for lam2 in range(0, -n_bands, -1):
        for lam1 in lam_range:
            for kind, col in (("a", PALETTE[0]), ("b", PALETTE[1])):
                tr = T.tile(kind, lam1, lam2)
                draw_trapezoid(ax, tr, color=col, alpha=0.35)
                traps.append(tr)
    _frame(ax, traps, f"tiling: L={T.L}")
    return fig


def plot_tail(survival: np.ndarray, rho: float | None = None, title: str = "coalescence tail"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    n = np.arange(len(survival))
    pos = survival > 0
    ax.semilogy(n[pos], survival[pos], "o-", ms=3, label="P(D > n)")
    if rho is not None and rho > 0:
        ax.semilogy(n, np.minimum(rho ** n.astype(float), 1e300), "--", label=f"rho^n, rho={rho:.3g}")
    ax.set_xlabel("levels n")
    ax.set_ylabel("survival")
    ax.set_title(title)
    ax.legend(frameon=False)
    return fig


def plot_tv(tv: np.ndarray, bias: float, fit=None, size: int = 1, title: str = "TV decay"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    t = np.arange(1, len(tv) + 1)
    ax.semilogy(t, np.maximum(tv, 1e-12), "o-", ms=3, label="plug-in TV")
    ax.axhline(bias, color="k", lw=0.8, ls=":", label="bias bound")
    if fit is not None:
        ax.semilogy(t, fit.a_hat * size * np.exp(-fit.b_hat * t), "--", label=f"fit b={fit.b_hat:.3g}")
    ax.set_xlabel("t")
    ax.set_ylabel("TV")
    ax.set_title(title)
    ax.legend(frameon=False)
    return fig
