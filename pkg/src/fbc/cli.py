"""Command-line front end.

    fbc bound    sweep a converse family over blocklengths and write CSV
    fbc verify   check a dual certificate (builtin or from files)
    fbc sandwich OPT(SC), OPT(LP), OPT(LP') for a small instance
    fbc lp       solve (or list) the relaxation of an instance
    fbc plot     turn a sweep CSV into a static SVG line chart
    fbc export   write a builtin instance or certificate as JSON

Exit codes: 0 success, 1 runtime failure (including an infeasible
certificate), 2 usage error.  ``FBC_MODE`` picks the default numeric mode.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from fractions import Fraction

from . import converse_bounds as cb
from .core_model import FLOAT, MODES, RATIONAL, DimensionMismatch, load_instance, matched_instance, save_instance
from .dual_certificates import DualPoint, bsc_instance, bsc_naive, bsc_strong, check, matched_concave, \
    matched_family, objective

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _num(text: str):
    text = text.strip()
    if "/" in text:
        return Fraction(text)
    v = float(text)
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def parse_range(text: str) -> list[int]:
    """"a:b:c" (inclusive), "a:b", "a" or a comma list."""
    if "," in text:
        return [int(v) for v in text.split(",") if v.strip()]
    parts = [int(v) for v in text.split(":")]
    if len(parts) == 1:
        return parts
    if len(parts) == 2:
        lo, hi, step = parts[0], parts[1], 1
    elif len(parts) == 3:
        lo, hi, step = parts
    else:
        raise UsageError(f"bad range {text!r}")
    if step <= 0 or hi < lo:
        raise UsageError(f"bad range {text!r}")
    return list(range(lo, hi + 1, step))


def default_mode() -> str:
    m = os.environ.get("FBC_MODE", FLOAT).strip().lower()
    if m not in MODES:
        raise UsageError(f"FBC_MODE must be one of {MODES}, got {m!r}")
    return m


# ---------------------------------------------------------------------------
# bound families

def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for family {args.family}")


def _log2M(args, length: int) -> float:
    if args.log2M is not None:
        return float(args.log2M)
    if args.M is not None:
        return math.log2(args.M)
    if args.rate is not None:
        return float(args.rate) * length
    raise UsageError(f"one of --rate, --M, --log2M is required for family {args.family}")


def _channel_grid(args):
    _need(args, "eps", "n")
    return [{"n": n, "eps": float(args.eps), "log2M": _log2M(args, n)} for n in parse_range(args.n)]


def _bms_bsc_grid(args):
    _need(args, "p", "eps", "level", "k")
    ks = parse_range(args.k)
    ns = parse_range(args.n) if args.n else [max(1, round(args.bandwidth * k)) for k in ks]
    if len(ns) != len(ks):
        raise UsageError("--n and --k ranges must have the same length")
    return [{"k": k, "n": n, "p": float(args.p), "eps": float(args.eps), "level": float(args.level)}
            for k, n in zip(ks, ns)]


def _bms_sc_grid(args):
    _need(args, "p", "level", "k")
    return [{"k": k, "p": float(args.p), "level": float(args.level), "log2M": _log2M(args, k)}
            for k in parse_range(args.k)]


def _family_table():
    """family -> (callable, grid builder)."""
    import functools as ft

    t = {
        "bsc-naive": (cb.bsc_naive_bound, _channel_grid),
        "bsc-strong": (cb.bsc_strong_bound, _channel_grid),
        "bsc-wolfowitz": (ft.partial(cb.bsc_channel_bound, family="wolfowitz"), _channel_grid),
        "bsc-improved": (ft.partial(cb.bsc_channel_bound, family="improved"), _channel_grid),
        "qary-matched": (cb.qary_matched_bound, None),
    }
    for fam in ("kv", "improved", "tighter", "hypothesis"):
        t[f"bms-bsc-{fam}"] = (ft.partial(cb.bms_bsc_jscc_bound, family=fam), _bms_bsc_grid)
    for fam in ("kv", "improved", "further", "hypothesis"):
        t[f"bms-sc-{fam}"] = (ft.partial(cb.bms_sc_bound, family=fam), _bms_sc_grid)
    return t


FAMILIES = tuple(sorted(_family_table()))


def _matched_grid(args):
    _need(args, "q", "eps", "n")
    # the sum is cheap to do exactly, so exact is the default unless FBC_MODE says otherwise
    mode = args.mode or (default_mode() if os.environ.get("FBC_MODE") else RATIONAL)
    eps = args.eps if mode == RATIONAL else float(args.eps)
    return [{"n": n, "q": int(args.q), "eps": eps, "mode": mode} for n in parse_range(args.n)]


def cmd_bound(args) -> int:
    table = _family_table()
    if args.family not in table:
        raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(FAMILIES)}")
    fn, grid_of = table[args.family]
    grid = _matched_grid(args) if args.family == "qary-matched" else grid_of(args)
    rows = cb.sweep(args.family, fn, grid, jobs=args.jobs)
    for r in rows:
        r.pop("mode", None)
        if isinstance(r.get("eps"), Fraction):
            r["eps"] = float(r["eps"])
    _emit_csv(rows, args.out)
    return 0


def _emit_csv(rows, out):
    cb.write_csv(rows, out if out and out != "-" else sys.stdout)


# ---------------------------------------------------------------------------
# verify / export


def _builtin(args):
    """(instance, DualPoint) for a builtin certificate."""
    mode = args.mode or default_mode()
    name = args.builtin
    if name == "bsc-naive":
        _need(args, "n", "eps", "M")
        n = int(args.n)
        inst = bsc_instance(n, args.eps, int(args.M), mode=mode)
        return inst, bsc_naive(n, args.eps, int(args.M), mode=mode)
    if name == "bsc-strong":
        _need(args, "n", "eps", "M", "delta")
        n = int(args.n)
        inst = bsc_instance(n, args.eps, int(args.M), mode=mode)
        return inst, bsc_strong(n, args.eps, args.delta, int(args.M), mode=mode)
    if name == "matched":
        _need(args, "q", "n", "eps")
        q, n = int(args.q), int(args.n)
        inst = matched_instance(q, n, args.eps, mode=mode)
        return inst, matched_concave(inst, matched_family(q, n, args.eps, mode=inst.mode))
    raise UsageError(f"unknown builtin {name!r}; choose from bsc-naive, bsc-strong, matched")


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        s = f"{float(v):.12g}"
        return s if Fraction(s) == v else f"{v} (~{s})"
    return f"{float(v):.12g}"


def cmd_verify(args) -> int:
    if args.builtin:
        inst, dp = _builtin(args)
    else:
        if not (args.instance and args.certificate):
            raise UsageError("give --builtin NAME, or both --instance and --certificate")
        inst = load_instance(args.instance, args.mode)
        with open(args.certificate) as fh:
            dp = DualPoint.from_dict(json.load(fh))
    try:
        rep = check(inst, dp, tol=args.tol)
    except DimensionMismatch as exc:
        raise UsageError(str(exc)) from exc
    obj = objective(inst, dp)
    if rep.feasible:
        print(f"feasible, objective {_fmt(obj)}")
        return 0
    print(f"infeasible, objective {_fmt(obj)}")
    for line in rep.violations():
        print("  " + line)
    return RUNTIME_ERROR


def cmd_export(args) -> int:
    if not args.builtin:
        raise UsageError("export needs --builtin")
    inst, dp = _builtin(args)
    if args.out:
        save_instance(inst, args.out)
    if args.certificate:
        with open(args.certificate, "w") as fh:
            json.dump(dp.to_dict(inst), fh, indent=1)
            fh.write("\n")
    if not args.out and not args.certificate:
        raise UsageError("export needs --out and/or --certificate")
    return 0


def _instance_from(args):
    if args.instance:
        return load_instance(args.instance, args.mode)
    if args.builtin:
        return _builtin(args)[0]
    raise UsageError("give --instance FILE or --builtin NAME")


def cmd_sandwich(args) -> int:
    from .oracle import sandwich

    inst = _instance_from(args)
    res = sandwich(inst, mode=args.mode or inst.mode)
    print(f"OPT(SC)  {_fmt(res.opt_sc)}")
    print(f"OPT(LP)  {_fmt(res.opt_lp)}")
    print(f"OPT(LP') {_fmt(res.opt_lp_prime)}")
    return 0


def cmd_lp(args) -> int:
    from .lp_relaxation import build_lp, build_lp_prime, lp_text
    from .simplex_solver import OPTIMAL, solve

    inst = _instance_from(args)
    lp = build_lp_prime(inst) if args.prime else build_lp(inst)
    if args.text:
        with open(args.text, "w") as fh:
            fh.write(lp_text(lp))
    sol = solve(lp, mode=args.mode or inst.mode)
    if sol.status != OPTIMAL:
        print(f"status {sol.status}")
        return RUNTIME_ERROR
    print(f"{lp.tag} optimal {_fmt(sol.value)} ({sol.method}, {sol.iterations} iterations)")
    return 0


# ---------------------------------------------------------------------------
# SVG charts

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 960, 540
MARGIN = (70, 30, 40, 60)  # left, right, top, bottom


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _num_fmt(v: float) -> str:
    return f"{v:.6g}"


def render_svg(series: dict, xlabel: str, ylabel: str, logy: bool = False, title: str = "") -> str:
    """Line chart of {name: [(x, y), ...]} as a standalone SVG string."""
    pts = {k: [(x, y) for x, y in v if math.isfinite(x) and math.isfinite(y) and (y > 0 or not logy)]
           for k, v in series.items()}
    allp = [p for v in pts.values() for p in v]
    if not allp:
        raise UsageError("nothing to plot")
    tf = (lambda y: math.log10(y)) if logy else (lambda y: y)
    xs = [p[0] for p in allp]
    ys = [tf(p[1]) for p in allp]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def px(x):
        return L + (x - x0) / (x1 - x0) * pw

    def py(y):
        return T + (1 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
           f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    out.append(f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{X:.2f}" y1="{T + ph}" x2="{X:.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{T + ph + 18}" text-anchor="middle">{_num_fmt(t)}</text>')
    if logy:
        yt = [float(e) for e in range(math.ceil(y0), math.floor(y1) + 1)] or _ticks(y0, y1)
    else:
        yt = _ticks(y0, y1)
    for t in yt:
        Y = py(t)
        lab = f"1e{int(t)}" if logy and float(t).is_integer() else _num_fmt(10 ** t if logy else t)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<line x1="{L}" y1="{Y:.2f}" x2="{L + pw}" y2="{Y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{L - 8}" y="{Y + 4:.2f}" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{L + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="18" y="{T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {T + ph / 2:.1f})">{_esc(ylabel)}</text>')
    for i, (name, v) in enumerate(pts.items()):
        if not v:
            continue
        col = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(tf(y)):.2f}" for x, y in sorted(v))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="{coords}"/>')
        ly = T + 16 + 18 * i
        out.append(f'<line x1="{L + pw - 170}" y1="{ly}" x2="{L + pw - 145}" y2="{ly}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{L + pw - 140}" y="{ly + 4}">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"



def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def read_series(path, x: str, y: str, group: str) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{path} has no data rows")
    for col in (y, group):
        if col not in rows[0]:
            raise UsageError(f"column {col!r} missing from {path}")
    if x not in rows[0] or all(r[x] == "" for r in rows):
        alt = "k" if x == "n" else "n"
        if alt in rows[0] and any(r[alt] != "" for r in rows):
            x = alt
        else:
            raise UsageError(f"column {x!r} missing from {path}")
    series: dict = {}
    for r in rows:
        try:
            pt = (float(r[x]), float(r[y]))
        except ValueError:
            continue
        series.setdefault(r[group], []).append(pt)
    return series, x


def cmd_plot(args) -> int:
    series, xcol = read_series(args.csv, args.x, args.y, args.group)
    svg = render_svg(series, args.xlabel or xcol, args.ylabel or args.y, logy=args.logy, title=args.title or "")
    with open(args.out, "w", newline="\n") as fh:
        fh.write(svg)
    return 0


# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--mode", choices=MODES, default=None, help="numeric backend (default: $FBC_MODE or float)")


def _instance_args(p):
    p.add_argument("--instance", help="instance JSON file")
    p.add_argument("--builtin", help="bsc-naive, bsc-strong or matched")
    for name in ("n", "q", "M"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--eps", type=_num)
    p.add_argument("--delta", type=_num)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbc", description="Finite-blocklength converse toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    b = sub.add_parser("bound", help="sweep a converse family and write CSV")
    b.add_argument("--family", required=True, help=", ".join(FAMILIES))
    b.add_argument("--n", help="blocklength range a:b[:step] or list")
    b.add_argument("--k", help="source length range")
    b.add_argument("--eps", type=_num)
    b.add_argument("--rate", type=float, help="log2 M per channel use (per source symbol for bms-sc)")
    b.add_argument("--M", type=int)
    b.add_argument("--log2M", type=float)
    b.add_argument("--q", type=int)
    b.add_argument("--p", type=float)
    b.add_argument("--level", type=float)
    b.add_argument("--bandwidth", type=float, default=1.0, help="n = round(bandwidth * k) when --n is absent")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", help="CSV path (default stdout)")
    _common(b)
    b.set_defaults(func=cmd_bound)

    v = sub.add_parser("verify", help="check a dual certificate")
    _instance_args(v)
    v.add_argument("--certificate", help="certificate JSON file")
    v.add_argument("--tol", type=float, default=1e-10)
    _common(v)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export", help="write a builtin instance and certificate")
    _instance_args(e)
    e.add_argument("--out", help="instance JSON path")
    e.add_argument("--certificate", help="certificate JSON path")
    _common(e)
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("sandwich", help="OPT(SC) >= OPT(LP) >= OPT(LP')")
    _instance_args(s)
    _common(s)
    s.set_defaults(func=cmd_sandwich)

    lp = sub.add_parser("lp", help="solve the relaxation of an instance")
    _instance_args(lp)
    lp.add_argument("--prime", action="store_true", help="drop the McCormick rows")
    lp.add_argument("--text", help="also write the LP listing here")
    _common(lp)
    lp.set_defaults(func=cmd_lp)

    pl = sub.add_parser("plot", help="CSV sweep to SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--x", default="n")
    pl.add_argument("--y", default="value")
    pl.add_argument("--group", default="family")
    pl.add_argument("--logy", action="store_true")
    pl.add_argument("--title")
    pl.add_argument("--xlabel")
    pl.add_argument("--ylabel")
    pl.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(args.func(args) or 0)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"fbc: error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (cb.BoundDomainError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"fbc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return USAGE_ERROR if isinstance(exc, (cb.BoundDomainError, KeyError)) else RUNTIME_ERROR
    except Exception as exc:  # noqa: BLE001 - the exit code carries the failure
        print(f"fbc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
