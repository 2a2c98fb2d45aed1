#!/usr/bin/env python3
"""Sweep the converse families behind each comparison figure and write CSV + SVG.

    python3 scripts/figures.py --out figures --jobs 4
    python3 scripts/figures.py --only bsc --quick

Each panel gets ``<name>.csv`` (the same columns as ``fbc bound``) and
``<name>.svg``.  ``--quick`` uses n, k = 10..100 step 30 for smoke runs.
"""

from __future__ import annotations

import argparse
import functools as ft
import logging
import time
from pathlib import Path

from fbc import converse_bounds as cb
from fbc.cli import render_svg

log = logging.getLogger("figures")


def bus_bsc_panel(r: float, ns):
    """BUS source over BSC(0.11) with bit-error level 0.11, k = round(r n)."""
    grid = [{"k": round(r * n), "n": n, "p": 0.5, "eps": 0.11, "level": 0.11} for n in ns]
    fams = ("kv", "improved", "tighter", "hypothesis")
    return [(f, ft.partial(cb.bms_bsc_jscc_bound, family=f), grid) for f in fams], "n"


def bsc_panel(R: float, ns):
    grid = [{"n": n, "eps": 0.23, "log2M": R * n} for n in ns]
    fams = ("wolfowitz", "improved")
    return [(f, ft.partial(cb.bsc_channel_bound, family=f), grid) for f in fams], "n"


def bms_sc_panel(R: float, ks):
    grid = [{"k": k, "p": 0.22, "level": 0.11, "log2M": R * k} for k in ks]
    fams = ("kv", "improved", "further", "hypothesis")
    return [(f, ft.partial(cb.bms_sc_bound, family=f), grid) for f in fams], "k"


PANELS = {
    "bus-bsc-r1.2": (bus_bsc_panel, 1.2, "group", "BUS over BSC(0.11), d=0.11, k/n=1.2"),
    "bus-bsc-r0.8": (bus_bsc_panel, 0.8, "group", "BUS over BSC(0.11), d=0.11, k/n=0.8"),
    "bsc-R0.24": (bsc_panel, 0.24, "bsc", "BSC(0.23), R=0.24"),
    "bsc-R0.18": (bsc_panel, 0.18, "bsc", "BSC(0.23), R=0.18"),
    "bms-sc-R0.35": (bms_sc_panel, 0.35, "bms", "BMS(0.22), d=0.11, R=0.35"),
    "bms-sc-R0.2": (bms_sc_panel, 0.2, "bms", "BMS(0.22), d=0.11, R=0.2"),
}


def run_panel(name: str, lengths, out: Path, jobs: int) -> None:
    build, rate, _, title = PANELS[name]
    parts, xcol = build(rate, lengths)
    rows, series = [], {}
    for fam, fn, grid in parts:
        got = cb.sweep(fam, fn, grid, jobs=jobs)
        rows.extend(got)
        series[fam] = [(float(r[xcol]), r["value"]) for r in got]
    cb.write_csv(rows, out / f"{name}.csv")
    svg = render_svg(series, xcol, "lower bound on distortion / error", title=title)
    (out / f"{name}.svg").write_text(svg)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="figures", type=Path)
    ap.add_argument("--only", choices=sorted({p[2] for p in PANELS.values()}),
                    help="restrict to one setting")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    lengths = list(range(10, 101, 30)) if args.quick else list(range(10, 201, 10))
    args.out.mkdir(parents=True, exist_ok=True)
    for name, spec in PANELS.items():
        if args.only and spec[2] != args.only:
            continue
        t0 = time.perf_counter()
        run_panel(name, lengths, args.out, args.jobs)
        log.info("%-14s %6.1fs", name, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
