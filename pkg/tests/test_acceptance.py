"""End-to-end acceptance criteria, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary) and then
asserts, so a failing criterion is visible in both places.
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import highs_value, report

from fbc.converse_bounds import (bms_bsc_jscc_bound, bms_sc_bound, bsc_channel_bound, bsc_naive_bound,
                                 bsc_strong_bound, channel_improved_bound, gamma_grid, qary_matched_bound,
                                 tail_sandwich)
from fbc.core_model import (Alphabet, ChannelKernel, Distribution, LossFunction, ProblemInstance, bms_bsc_instance,
                            bms_source, bsc, channel_coding_instance, matched_instance, normalized_hamming,
                            random_instance, random_stochastic)
from fbc.dual_certificates import (Decomposition, DualPoint, bsc_instance, bsc_naive, bsc_strong, check, complete,
                                   further_improved, kv_improved_general, matched_concave, matched_family,
                                   objective, zero_point)
from fbc.lp_relaxation import build_lp, build_lp_prime, embed_code
from fbc.network_sr import (SRInstance, appendix_certificate, build_lpsr, check_dpsr, sr_objective, sr_oracle,
                            zhou_improved_bound, zhou_pointwise)
from fbc.oracle import lifted_value, opt_sc
from fbc.simplex_solver import OPTIMAL, certify_dual_point, extract_dual_point, solve
from fbc.tilted_information import bms_lam_star, bms_rate, bms_tilted, rate_distortion, tilted

pytestmark = pytest.mark.acceptance


class Checks:
    """Collects named sub-checks so a failure reports which one broke."""

    def __init__(self):
        self.failed: list[str] = []
        self.count = 0
        self.t0 = time.perf_counter()

    def __call__(self, ok, what: str):
        self.count += 1
        if not bool(ok):
            self.failed.append(what)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def finish(self, number: int, title: str, limit: float):
        self(self.elapsed <= limit, f"runtime {self.elapsed:.1f}s > {limit}s")
        ok = not self.failed
        detail = f"{title}: {self.count - len(self.failed)}/{self.count} checks"
        if not ok:
            detail += "; first failure: " + self.failed[0]
        report(number, ok, detail, self.elapsed)
        assert ok, self.failed[:5]


def uncoded(inst):
    n = inst.S.size
    from gmpy2 import mpq

    eye = np.array([[mpq(int(i == j)) for j in range(n)] for i in range(n)], dtype=object)
    return embed_code(inst, eye, eye, check=False).vector()


# ---------------------------------------------------------------------------


def test_c01_matched_tightness_exact():
    ck = Checks()
    for q in (2, 3):
        for n in (1, 2, 3):
            for eps in (Fraction(1, 10), Fraction(1, 5)):
                tag = f"q={q} n={n} eps={eps}"
                inst = matched_instance(q, n, eps, mode="rational")
                dp = matched_concave(inst, matched_family(q, n, eps, mode="rational"))
                ck(check(inst, dp, tol=0).feasible, f"{tag}: matched certificate infeasible")
                ck(objective(inst, dp) == eps, f"{tag}: certificate objective {objective(inst, dp)}")
                ck(qary_matched_bound(n, q, eps).value == eps, f"{tag}: qary_matched_bound")
                lp = build_lp(inst)
                # exact optimum: uncoded transmission and the certificate meet with zero gap
                sol = certify_dual_point(lp, uncoded(inst), dp)
                ck(sol.value == eps, f"{tag}: certified OPT(LP) {sol.value}")
                if q**n <= 4:
                    pivoted = solve(lp, mode="rational")
                    ck(pivoted.status == OPTIMAL and pivoted.value == eps, f"{tag}: simplex OPT(LP) {pivoted.value}")
                if q == 2 and n in (1, 2):
                    ck(opt_sc(inst).value == eps, f"{tag}: oracle {opt_sc(inst).value}")
    ck.finish(1, "matched tightness exact for q in {2,3}, n in {1,2,3}", 60)


def test_c02_weak_duality_sandwich():
    ck = Checks()
    rng = np.random.default_rng(2024)
    tol = 1e-8
    for i in range(200):
        sizes = tuple(int(v) for v in rng.integers(2, 4, size=4))
        inst = random_instance(rng, sizes, loss="table")
        tag = f"instance {i} {sizes}"
        lp = build_lp(inst)
        sol = solve(lp, mode="float")
        sol_p = solve(build_lp_prime(inst), mode="float")
        orc = opt_sc(inst)
        ck(sol.status == OPTIMAL and sol_p.status == OPTIMAL, f"{tag}: not solved")
        # dual points: zero, a random completed one, and the solver's own
        nS, nX, nY, nH = sizes
        la = -rng.random((nS, nH, nY))
        lb = -rng.random((nX, nS, nY))
        ga, gb = complete(la, lb, nS, nY)
        points = {"zero": zero_point(inst), "completed": DualPoint(ga, gb, la, lb),
                  "extracted": extract_dual_point(lp, sol)}
        for name, dp in points.items():
            rep = check(inst, dp, tol=tol)
            ck(rep.feasible, f"{tag}: {name} dual point infeasible {rep.violations()[:1]}")
            ck(float(objective(inst, dp)) <= sol.value + tol, f"{tag}: {name} objective above OPT(LP)")
        lifted = float(lifted_value(inst, orc.code))
        ck(sol.value <= lifted + tol, f"{tag}: OPT(LP) above the lifted optimal code")
        ck(abs(lifted - orc.value) <= tol, f"{tag}: lifted code value differs from opt_sc")
        ck(sol_p.value <= sol.value + tol, f"{tag}: OPT(LP') above OPT(LP)")
        if i % 20 == 0:
            ck(abs(highs_value(lp) - sol.value) <= 1e-7, f"{tag}: simplex disagrees with HiGHS")
    ck.finish(2, "weak-duality sandwich on 200 random instances", 300)


def test_c03_certificate_feasibility():
    ck = Checks()
    tol = 1e-10
    for mode, eps in (("float", 0.1), ("rational", Fraction(1, 10))):
        for n, M in ((2, 4), (3, 4), (3, 8)):
            inst = bsc_instance(n, eps, M, mode=mode)
            ck(np.prod(inst.shape) <= 4096, f"bsc n={n} M={M} has {np.prod(inst.shape)} tuples")
            rep = check(inst, bsc_naive(n, eps, M, mode=mode), tol=tol)
            ck(rep.feasible, f"bsc_naive n={n} M={M} {mode}: {rep.violations()[:1]}")
    n, M, eps = 3, 4, 0.2
    inst = bsc_instance(n, eps, M, mode="float")
    for delta in np.linspace(eps / 6, 5 * eps / 6, 5):
        rep = check(inst, bsc_strong(n, eps, float(delta), M, mode="float"), tol=tol)
        ck(rep.feasible, f"bsc_strong delta={delta:.4f}: {rep.violations()[:1]}")
    # exact arithmetic needs n(eps - delta) integral
    inst_r = bsc_instance(4, Fraction(3, 8), 4, mode="rational")
    rep = check(inst_r, bsc_strong(4, Fraction(3, 8), Fraction(1, 8), 4, mode="rational"), tol=0)
    ck(rep.feasible, "bsc_strong rational n=4 eps=3/8 delta=1/8")
    for p, level in ((0.3, 1 / 3), (0.5, 1 / 3)):
        inst = bms_bsc_instance(3, 3, p, 0.1, level)
        ck(np.prod(inst.shape) <= 4096, f"BMS-BSC instance has {np.prod(inst.shape)} tuples")
        dec = Decomposition.single(inst.channel)  # uniform output law
        j = bms_tilted(3, p, level)
        for g in np.linspace(-2, 6, 10):
            rep = check(inst, kv_improved_general(inst, float(g), dec, tilted=j), tol=tol)
            ck(rep.feasible, f"kv_improved_general p={p} gamma={g:.2f}: {rep.violations()[:1]}")
            rep = check(inst, further_improved(inst, float(g), dec, tilted=j), tol=tol)
            ck(rep.feasible, f"further_improved p={p} gamma={g:.2f}: {rep.violations()[:1]}")
    for q, n in ((2, 1), (2, 2), (2, 3), (3, 1), (4, 1)):
        for mode in ("float", "rational"):
            eps = 0.1 if mode == "float" else Fraction(1, 10)
            inst = matched_instance(q, n, eps, mode=mode)
            rep = check(inst, matched_concave(inst, matched_family(q, n, eps, mode=mode)), tol=tol)
            ck(rep.feasible, f"matched_concave q={q} n={n} {mode}: {rep.violations()[:1]}")
    ck.finish(3, "certificate feasibility, every family", 120)


def test_c04_strong_converse_trend():
    ck = Checks()
    eps, R = 0.11, 0.6
    C = 1 + eps * math.log2(eps) + (1 - eps) * math.log2(1 - eps)
    ck(R > C, "rate above capacity")
    vals = [bsc_strong_bound(n, eps, log2M=R * n).value for n in (10**2, 10**3, 10**4)]
    ck(vals[2] >= 0.99, f"strong bound at n=1e4 is {vals[2]}")
    ck(vals[0] <= vals[1] <= vals[2], f"strong bound not nondecreasing: {vals}")
    naive = bsc_naive_bound(10**4, eps, log2M=R * 10**4).value
    ck(naive < 0, f"naive bound at n=1e4 is {naive}")
    naive_small = [bsc_naive_bound(n, eps, log2M=R * n).value for n in (10, 20, 40)]
    ck(naive_small[0] > naive_small[1] > naive_small[2], f"naive bound not decreasing: {naive_small}")
    ck.finish(4, "BSC strong converse tends to 1, naive bound diverges", 10)


def _shrinks(gaps) -> bool:
    """Block maxima over consecutive quarters of the range do not increase."""
    blocks = np.array_split(np.asarray(gaps), 4)
    peaks = [b.max() for b in blocks]
    return all(a >= b - 1e-12 for a, b in zip(peaks, peaks[1:])) and peaks[-1] < peaks[0]


def test_c05_improvement_orderings():
    ck = Checks()
    ns = list(range(10, 201, 10))
    # BUS over BSC(0.11), d = 0.11, source rate r = k/n above and below C/R(d) = 1
    for r in (1.2, 0.8):
        vals = {f: [] for f in ("kv", "improved", "tighter", "hypothesis")}
        for n in ns:
            k = round(r * n)
            for f in vals:
                vals[f].append(bms_bsc_jscc_bound(k, n, 0.5, 0.11, 0.11, f).value)
        kv, imp, hyp = (np.array(vals[f]) for f in ("kv", "improved", "hypothesis"))
        ck((imp >= kv - 1e-12).all(), f"BUS-BSC r={r}: improved below KV")
        ck((hyp[:10] >= imp[:10] - 1e-12).all(), f"BUS-BSC r={r}: hypothesis below improved at small n")
        ck(_shrinks(imp - kv), f"BUS-BSC r={r}: improvement gap does not shrink")
    # BSC(0.23), R = 0.24 and 0.18 against C = 0.2220
    for R in (0.24, 0.18):
        w = np.array([bsc_channel_bound(n, 0.23, log2M=R * n, family="wolfowitz").value for n in ns])
        i = np.array([bsc_channel_bound(n, 0.23, log2M=R * n).value for n in ns])
        ck((i >= w - 1e-12).all(), f"BSC R={R}: improved below Wolfowitz")
        ck(_shrinks(i - w), f"BSC R={R}: Wolfowitz gap does not shrink")
    # BMS p = 0.22, d = 0.11, log M = kR with R above and below R(d) = 0.2603
    for R in (0.35, 0.2):
        hv, iv, kv = (np.array([bms_sc_bound(k, 0.22, None, 0.11, f, log2M=R * k).value for k in ns])
                      for f in ("hypothesis", "improved", "kv"))
        ck((hv >= iv - 1e-12).all(), f"BMS R={R}: hypothesis below improved")
        ck((iv >= kv - 1e-12).all(), f"BMS R={R}: improved below KV")
        ck(_shrinks(iv - kv), f"BMS R={R}: improvement gap does not shrink")
    ck.finish(5, "improvement orderings on the figure settings", 120)


def test_c06_tilted_information_suite():
    ck = Checks()
    for k in range(1, 7):
        for p in (0.25, 0.5):
            for level in (0.05, 0.11):
                tag = f"k={k} p={p} d={level}"
                src = bms_source(k, p)
                d = np.asarray(normalized_hamming(2, k), dtype=float)
                rd = rate_distortion(src, d, level)
                tt = tilted(src, d, level, rd=rd)
                ck(abs(rd.R - k * bms_rate(p, level)) <= 1e-4, f"{tag}: R {rd.R}")
                ck(np.max(np.abs(tt.j - bms_tilted(k, p, level))) <= 1e-4, f"{tag}: j")
                ck(abs(rd.lam_star - bms_lam_star(k, level)) <= 1e-4 * max(1, bms_lam_star(k, level)),
                   f"{tag}: lambda*")
                ck(tt.inequality(src, d).max() <= 1 + 1e-8, f"{tag}: tilted inequality")
                ck(abs(tt.mean(src) - rd.R) <= 1e-4, f"{tag}: E[j] = R")
    ck.finish(6, "tilted information, closed form vs iteration", 30)


def test_c07_tail_bound_sandwich():
    ck = Checks()
    cases = 0
    for q in (2, 3, 4):
        for n in range(1, 61):
            for i in range(1, n):
                alpha = Fraction(i, n)
                if not alpha < 1 - Fraction(1, q):
                    continue
                lo, hi = tail_sandwich(n, alpha, q)
                cases += 1
                ck(lo, f"lower bound fails at q={q} n={n} alpha={alpha}")
                ck(hi, f"upper bound fails at q={q} n={n} alpha={alpha}")
    ck(cases > 3000, f"only {cases} grid points")
    ck.finish(7, f"tail sandwich on {cases} (q, n, alpha) points", 10)


def test_c08_ppv_chain():
    ck = Checks()
    rng = np.random.default_rng(8)
    channels = [("bsc", bsc(0.1), 2), ("bsc4", ChannelKernel(np.kron(bsc(0.1).matrix, bsc(0.2).matrix)), 4)]
    for t in range(5):
        channels.append((f"rand2-{t}", ChannelKernel(random_stochastic(rng, 2, 2)), 2))
        channels.append((f"rand4-{t}", ChannelKernel(random_stochastic(rng, 4, 4)), 4))
    for name, ch, M in channels:
        inst = channel_coding_instance(ch, M)
        lp = solve(build_lp(inst), mode="float")
        lpp = solve(build_lp_prime(inst), mode="float")
        bound = channel_improved_bound(ch, M).value
        ck(lpp.value >= bound - 1e-8, f"{name}: OPT(LP') {lpp.value} < improved bound {bound}")
        ck(lp.value >= lpp.value - 1e-8, f"{name}: OPT(LP) < OPT(LP')")
        ck(abs(highs_value(build_lp_prime(inst)) - lpp.value) <= 1e-8, f"{name}: LP' disagrees with HiGHS")
    ck.finish(8, "OPT(LP) >= OPT(LP') >= improved channel bound", 60)


def test_c09_successive_refinement():
    ck = Checks()
    d = 1.0 - np.eye(4)
    sr = SRInstance(Distribution(np.full(4, 0.25)), 2, 1, d, d, 0.1, 0.05)
    t1, t2 = tilted(sr.source, d, sr.D1), tilted(sr.source, d, sr.D2)
    sol = solve(build_lpsr(sr), mode="float")
    value, _ = sr_oracle(sr)
    ck(sol.status == OPTIMAL and sol.value <= value + 1e-9, f"OPT(LPSR) {sol.value} > oracle {value}")
    res = zhou_improved_bound(sr, t1, t2)
    F = appendix_certificate(sr, t1, t2, res.witness["gamma1"], res.witness["gamma2"])
    rep = check_dpsr(sr, F, tol=1e-10)
    ck(rep.feasible and rep.worst <= 1e-10, f"certificate residual {rep.worst}")
    ck(abs(sr_objective(sr, F) - res.value) <= 1e-12, f"certificate objective {sr_objective(sr, F)} vs {res.value}")
    ck(sr_objective(sr, F) <= sol.value + 1e-9, "certificate objective above OPT(LPSR)")
    l1, l12 = math.log2(sr.M1), math.log2(sr.M1 * sr.M2)
    g1 = gamma_grid(t1.j.min() - l1 - 4, t1.j.max() - l1 + 4, 128)
    g2 = gamma_grid(t2.j.min() - l12 - 4, t2.j.max() - l12 + 4, 128)
    G1, G2 = np.meshgrid(g1, g2, indexing="ij")
    on = zhou_pointwise(sr, t1, t2, G1, G2, True)
    off = zhou_pointwise(sr, t1, t2, G1, G2, False)
    ck((on >= off).all(), "correction-on below correction-off on the grid")
    ck(res.value >= zhou_improved_bound(sr, t1, t2, correction=False).value, "sup with correction below without")
    ck.finish(9, f"successive refinement (LPSR {sol.value:.4f} <= oracle {value:.4f}, bound {res.value:.4f})", 180)


def test_c10_positivity():
    ck = Checks()
    rng = np.random.default_rng(10)
    for i in range(50):
        nS = int(rng.integers(2, 4))
        nX, nY = (int(v) for v in rng.integers(2, 4, size=2))
        d = rng.random((nS, nS)) + 0.05
        np.fill_diagonal(d, 0.0)
        inst = ProblemInstance(Alphabet(nS), Alphabet(nX), Alphabet(nY), Alphabet(nS),
                               Distribution(random_stochastic(rng, 1, nS)[0]),
                               ChannelKernel(random_stochastic(rng, nX, nY)), LossFunction.expected(d))
        lp = build_lp(inst)
        sol = solve(lp, mode="float")
        ck(sol.status == OPTIMAL and sol.value > 1e-9, f"instance {i}: OPT(LP) = {sol.value}")
        dp = extract_dual_point(lp, sol)
        ck(check(inst, dp, tol=1e-9).feasible and objective(inst, dp) > 1e-9,
           f"instance {i}: no positive dual certificate")
    ck.finish(10, "OPT(LP) > 0 on 50 random instances", 120)
