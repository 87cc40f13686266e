"""Command-line interface: ``pcacftp <verb> [options]``.

Every run writes its artifacts plus ``meta.json`` into ``--out``.  The metadata
holds the resolved parameters and a canonical argument list; feeding either back
(``--config meta.json`` or the argument list) regenerates identical bytes.
The worker count never influences results, so it is not part of the metadata.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certifier import (
    DEFAULT_CONFIDENCE,
    estimate_rho,
    max_epsilon,
    perturbation_transfer,
    search_L,
)
from .cftp import DEFAULT_MAX_DEPTH, FlowSpec, TruncationError, coalescence_tail, sample_window
from .core import Kernel, KernelError, load_kernel
from .experiments import tv_decay
from .geometry import (
    GeometryError,
    Tiling,
    check_selfsim_plan,
    check_slice_plan,
    check_tiling,
    check_w_plan,
    nested_plan,
    slice_plan,
    smallest_feasible_L,
    w_plan,
)
from .models import ModelSpec, noisy_majority, uniform_mixture

log = logging.getLogger("pcacftp")

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2
SCHEMA = 1
_GLOBAL = ("seed", "threads", "out", "config")
_EXCLUDED = ("threads", "out", "config", "func", "verbose")


# --- helpers ------------------------------------------------------------------


def _window(s: str) -> tuple[int, int]:
    try:
        a, b = s.split(":")
        lo, hi = int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must look like LO:HI, got {s!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("window upper end below lower end")
    return lo, hi


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    log.info("wrote %s", path)


def build_kernel(a) -> Kernel:
    if a.kernel:
        return load_kernel(a.kernel)
    params = {
        "noisy-majority": lambda: {"eps": a.eps},
        "stavskaya": lambda: {"p": a.p, "delta": a.delta},
        "random": lambda: {"seed": a.model_seed, "delta_min": a.delta_min, "size": a.size},
        "constant": lambda: {"nu": [float(v) for v in a.nu.split(",")]},
    }
    if a.model not in params:
        raise ValueError(f"unknown model {a.model!r}")
    k = ModelSpec(a.model, params[a.model]()).build()
    if a.mix:
        k = uniform_mixture(k, a.mix)
    return k


def _params(a) -> dict:
    return {k: v for k, v in sorted(vars(a).items()) if k not in _EXCLUDED}


def canonical_argv(params: dict) -> list[str]:
    argv = [params["command"]]
    if params.get("kind"):
        argv.append(params["kind"])
    for k, v in params.items():
        if k in ("command", "kind") or v is None:
            continue
        flag = "--" + k.replace("_", "-")
        if isinstance(v, (list, tuple)) and k != "window":
            argv += [flag, *map(str, v)]
        elif k == "window":
            argv.append(f"{flag}={v[0]}:{v[1]}")
        else:
            argv.append(f"{flag}={v}")
    return argv


def _meta(a, kernel: Kernel | None, extra=None) -> dict:
    p = _params(a)
    m = {
        "schema": SCHEMA,
        "tool": "pcacftp",
        "version": __version__,
        "command": a.command,
        "params": p,
        "argv": canonical_argv(p),
    }
    if kernel is not None:
        m["kernel_hash"] = kernel.digest()
        m["kernel"] = kernel.to_json()
    if extra:
        m.update(extra)
    return m


# --- verbs --------------------------------------------------------------------


def cmd_certify(a) -> int:
    k = build_kernel(a)
    out = Path(a.out)
    if a.search:
        res = search_L(k, a.search, a.trials, a.confidence, a.seed, L_min=a.L, threads=a.threads)
        cert = res.certificate
        hist = [json.loads(c.to_json()) for c in res.history]
    else:
        cert = estimate_rho(k, a.L, a.trials, a.confidence, a.seed, a.variant, a.threads)
        hist = None
    body = json.loads(cert.to_json())
    if hist is not None:
        body["search_history"] = hist
    _write(out / "certificate.json", _dump(body))
    _write(out / "meta.json", _dump(_meta(a, k)))
    print(f"L={cert.L} trials={cert.trials} count={cert.count} rho_hat={cert.rho_hat:.6g} "
          f"rho_upper={cert.rho_upper:.6g} ({cert.confidence:g}) -> {cert.verdict}")
    return EXIT_OK if cert.certified else EXIT_INCONCLUSIVE


def _chunked_samples(spec, window, count, max_depth, threads):
    from concurrent.futures import ThreadPoolExecutor

    step = 4096
    chunks = [np.arange(i, min(i + step, count)) for i in range(0, count, step)]
    job = lambda r: sample_window(spec, window, r, max_depth)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    return parts


def cmd_sample(a) -> int:
    k = build_kernel(a)
    spec = FlowSpec(k, a.L, a.seed, a.variant)
    out = Path(a.out)
    parts = _chunked_samples(spec, a.window, a.count, a.max_depth, a.threads)
    lines = []
    depth_max = 0
    rep = 0
    for p in parts:
        for vals, d in zip(p.values, p.depth):
            lines.append(json.dumps({
                "replica": rep, "depth": int(d), "offset": a.window[0],
                "window": [k.alphabet.label(int(v)) for v in vals],
            }, separators=(",", ":")))
            depth_max = max(depth_max, int(d))
            rep += 1
    _write(out / "samples.jsonl", "\n".join(lines) + "\n")
    _write(out / "meta.json", _dump(_meta(a, k, {"truncations": 0, "max_depth_seen": depth_max})))
    print(f"{a.count} windows on [{a.window[0]}, {a.window[1]}], truncations 0, "
          f"deepest level {depth_max}")
    return EXIT_OK


def cmd_tail(a) -> int:
    from .figures import plot_tail, save_svg

    k = build_kernel(a)
    spec = FlowSpec(k, a.L, a.seed, a.variant)
    out = Path(a.out)
    rep = coalescence_tail(spec, a.site, a.runs, a.max_depth, a.threads)
    cert = estimate_rho(k, a.L, a.trials, a.confidence, a.seed, a.variant, a.threads)
    n = np.arange(len(rep.survival))
    rows = [
        (int(i), float(s), float(cert.rho_hat ** i), float(cert.rho_upper ** i))
        for i, s in zip(n, rep.survival)
    ]
    _write_csv(out / "tail.csv", ["n", "survival", "bound_rho_hat", "bound_rho_upper"], rows)
    viol = rep.violations(cert.rho_upper)
    summary = {
        "runs": rep.runs, "truncated": rep.truncated, "c_hat": rep.c, "d_hat": rep.d,
        "d_stderr": rep.d_stderr, "n_fit": rep.n_fit, "certificate": json.loads(cert.to_json()),
        "bound_violations": viol,
    }
    _write(out / "tail.json", _dump(summary))
    save_svg(plot_tail(rep.survival, cert.rho_upper), out / "tail.svg")
    _write(out / "meta.json", _dump(_meta(a, k)))
    print(f"runs={rep.runs} truncated={rep.truncated} d_hat={rep.d:.4g} (se {rep.d_stderr:.2g}) "
          f"rho_upper={cert.rho_upper:.4g} bound violations: {len(viol)}")
    return EXIT_OK


def cmd_tv_decay(a) -> int:
    from .figures import plot_tv, save_svg

    k = build_kernel(a)
    out = Path(a.out)
    res = tv_decay(k, a.window, a.horizon, a.runs, tuple(a.initials) if a.initials else None,
                   a.seed, a.threads)
    _write_csv(out / "tv_decay.csv", ["t", "tv", "bias_bound"],
               [(t, v, res.bias_bound) for t, v in res.rows()])
    fit = res.fit.to_dict() if res.fit else None
    _write(out / "fit.json", _dump({"fit": fit, "bias_bound": res.bias_bound, "warnings": res.warnings,
                                     "initials": list(res.initials)}))
    size = a.window[1] - a.window[0] + 1
    save_svg(plot_tv(res.tv, res.bias_bound, res.fit, size), out / "tv_decay.svg")
    _write(out / "meta.json", _dump(_meta(a, k)))
    if res.fit:
        print(f"b_hat={res.fit.b_hat:.4g} (se {res.fit.b_stderr:.2g}) from {res.fit.n_points} points; "
              f"bias bound {res.bias_bound:.3g}")
    else:
        print(f"TV below twice the bias bound {res.bias_bound:.3g} almost everywhere: no fit")
    return EXIT_OK


def cmd_geometry(a) -> int:
    from .figures import plot_selfsim, plot_slices, plot_tiling, plot_wplan, save_svg

    out = Path(a.out)
    if a.kind == "selfsim":
        plan = nested_plan(a.alpha, a.ell0, a.n, a.q)
        bad = check_selfsim_plan(plan)
        data = {"ell": plan.ell, "k": plan.kk, "q": plan.q, "K": plan.K, "L": plan.L, "r": plan.r,
                "uncovered": plan.uncovered, "f": plan.f,
                "placements": [[g, T.z, T.tau, T.height, T.length] for g, T in plan.placements],
                "leftover": plan.leftover}
        fig = plot_selfsim(plan)
    elif a.kind == "w":
        L1 = a.L1 if a.L1 is not None else 1
        K1 = a.K1 if a.K1 is not None else 2 * (a.L - L1)
        plan = w_plan(a.L, L1, K1)
        bad = check_w_plan(plan)
        data = {name: [T.orientation, T.z, T.tau, T.height, T.length]
                for name, T in (("Ta", plan.Ta), ("Tb", plan.Tb), ("Tc", plan.Tc), ("T1", plan.T1),
                                ("T2", plan.T2), ("T3", plan.T3), ("S1", plan.S1), ("S2", plan.S2))}
        data["top"] = [plan.Ta.top[0], plan.Tc.top[1]]
        fig = plot_wplan(plan)
    elif a.kind == "slice":
        plan = slice_plan(a.L, a.M, a.b)
        bad = check_slice_plan(plan)
        data = {"t": plan.t, "q": plan.q, "k": plan.k, "g_side": plan.g_side, "i_min": plan.i_min,
                "slices": [{"i": s.i, "g": s.g} for s in plan.slices()],
                "smallest_feasible_L": smallest_feasible_L(a.b, a.M)}
        fig = plot_slices(plan)
    else:
        T = Tiling(a.L)
        lam = range(a.lam_lo, a.lam_hi + 1)
        bad = check_tiling(T, lam, a.bands)
        data = {"L": a.L, "tiles": [[kind, l1, l2] for l2 in range(0, -a.bands, -1) for l1 in lam
                                    for kind in "ab"]}
        fig = plot_tiling(T, lam, a.bands)
    data["violations"] = bad
    _write(out / f"geometry_{a.kind}.json", _dump(data))
    save_svg(fig, out / f"geometry_{a.kind}.svg")
    _write(out / "meta.json", _dump(_meta(a, None)))
    print(f"{a.kind}: {len(bad)} violation(s)")
    for b in bad[:10]:
        print("  " + b)
    return EXIT_OK if not bad else EXIT_ERROR


def cmd_perturb(a) -> int:
    k = build_kernel(a)
    if a.target:
        k2 = load_kernel(a.target)
    elif a.target_eps is not None:
        k2 = noisy_majority(a.target_eps)
    elif a.target_mix is not None:
        k2 = uniform_mixture(k, a.target_mix)
    else:
        raise ValueError("give --target, --target-eps or --target-mix")
    out = Path(a.out)
    eps = max_epsilon(k, k2)
    rep = perturbation_transfer(k, k2, a.L, a.trials, a.confidence, a.seed, a.threads)
    _write(out / "perturbation.json", rep.to_json() + "\n")
    _write(out / "meta.json", _dump(_meta(a, k, {"target_hash": k2.digest(), "target": k2.to_json()})))
    print(f"epsilon={eps:.6g} m={rep.m} bound={rep.bound:.6g} (upper {rep.bound_upper:.6g}); "
          f"direct rho_upper={rep.direct.rho_upper:.6g} -> {rep.direct.verdict}")
    return EXIT_OK if rep.direct.certified else EXIT_INCONCLUSIVE


# --- parser -------------------------------------------------------------------


def _add_globals(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads (results do not depend on it)")
    p.add_argument("--out", default=d("out"), help="artifact directory (default ./out)")
    p.add_argument("--config", default=d(None), help="JSON file of option defaults (or a meta.json)")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", default="noisy-majority",
                   choices=["noisy-majority", "stavskaya", "random", "constant"])
    g.add_argument("--kernel", help="kernel JSON file (overrides --model)")
    g.add_argument("--eps", type=float, default=0.3)
    g.add_argument("--p", type=float, default=0.0)
    g.add_argument("--delta", type=float, default=0.05)
    g.add_argument("--model-seed", type=int, default=0)
    g.add_argument("--delta-min", type=float, default=0.05)
    g.add_argument("--size", type=int, default=2)
    g.add_argument("--nu", default="0.5,0.5")
    g.add_argument("--mix", type=float, default=None, help="mix with the uniform kernel")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcacftp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pcacftp {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def verb(name, func, help):
        p = sub.add_parser(name, help=help)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = verb("certify", cmd_certify, "estimate rho and emit a certificate")
    _add_model(p)
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--trials", type=int, default=10**4)
    p.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    p.add_argument("--variant", choices=["basic", "structured"], default="basic")
    p.add_argument("--search", type=int, default=None, metavar="L_MAX",
                   help="try L, L+1, ..., L_MAX and stop at the first certificate")

    p = verb("sample", cmd_sample, "exact samples of a window of the invariant law")
    _add_model(p)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--window", type=_window, default=(-2, 2))
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
    p.add_argument("--variant", choices=["basic", "structured"], default="basic")

    p = verb("tail", cmd_tail, "coalescence-depth tail against rho^n")
    _add_model(p)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--site", type=int, default=0)
    p.add_argument("--runs", type=int, default=10**4)
    p.add_argument("--trials", type=int, default=10**4, help="tile groups for the rho estimate")
    p.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    p.add_argument("--max-depth", type=int, default=DEFAULT_MAX_DEPTH)
    p.add_argument("--variant", choices=["basic", "structured"], default="basic")

    p = verb("tv-decay", cmd_tv_decay, "plug-in TV between initial conditions over time")
    _add_model(p)
    p.add_argument("--window", type=_window, default=(-1, 1))
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--runs", type=int, default=10**4)
    p.add_argument("--initials", nargs="+", default=None, help="periodic initial words, e.g. 0 1 01")

    p = verb("geometry", cmd_geometry, "build, check and draw a geometric plan")
    p.add_argument("kind", choices=["selfsim", "w", "slice", "tiling"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ell0", type=int, default=4)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--L1", type=int, default=None)
    p.add_argument("--K1", type=int, default=None)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--b", type=float, default=5.0)
    p.add_argument("--lam-lo", type=int, default=-2)
    p.add_argument("--lam-hi", type=int, default=2)
    p.add_argument("--bands", type=int, default=3)

    p = verb("perturb", cmd_perturb, "transfer a certificate to a nearby kernel")
    _add_model(p)
    p.add_argument("--target", help="target kernel JSON file")
    p.add_argument("--target-eps", type=float, default=None, help="noisy-majority target")
    p.add_argument("--target-mix", type=float, default=None, help="uniform mixture of the base")
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--trials", type=int, default=10**4)
    p.add_argument("--confidence", type=float, default=DEFAULT_CONFIDENCE)
    return ap


def _load_config(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "params" in data and isinstance(data["params"], dict):
        data = data["params"]
    return {k.replace("-", "_"): v for k, v in data.items()}


def _join_window(argv: list[str]) -> list[str]:
    """Let ``--window -2:2`` through: argparse would read ``-2:2`` as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--window":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--window={nxt}")
        else:
            out.append(tok)
    return out


def parse(argv=None) -> argparse.Namespace:
    """Parse with precedence flags > config file > built-in defaults."""
    ap = build_parser()
    argv = _join_window(list(sys.argv[1:] if argv is None else argv))
    a = ap.parse_args(argv)
    if not getattr(a, "config", None):
        return a
    cfg = _load_config(a.config)
    cfg.pop("command", None)
    cfg.pop("kind", None)
    if "window" in cfg and isinstance(cfg["window"], list):
        cfg["window"] = tuple(cfg["window"])
    # re-parse with the config as defaults, so explicit flags still win
    ap2 = build_parser()
    sub = next(x for x in ap2._actions if isinstance(x, argparse._SubParsersAction))
    target = sub.choices[a.command]
    known = {act.dest for act in target._actions}
    unknown = sorted(set(cfg) - known - set(_GLOBAL))
    if unknown:
        raise SystemExit(f"pcacftp: error: unknown config keys {unknown}")
    ap2.set_defaults(**{k: v for k, v in cfg.items() if k in _GLOBAL and k != "config"})
    target.set_defaults(**{k: v for k, v in cfg.items() if k in known})
    return ap2.parse_args(argv)


def main(argv=None) -> int:
    try:
        a = parse(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(message)s")
    if a.threads < 1:
        print("pcacftp: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    Path(a.out).mkdir(parents=True, exist_ok=True)
    try:
        return a.func(a)
    except (ValueError, KernelError, GeometryError, TruncationError, OSError) as e:
        print(f"pcacftp: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
