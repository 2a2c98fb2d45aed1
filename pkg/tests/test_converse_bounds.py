import csv
import io
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbc.converse_bounds import (BinomialKit, BoundDomainError, bms_bsc_jscc_bound, bms_sc_bound,
                                 bms_sc_min_codewords, bms_sc_t_value, bsc_channel_bound, bsc_naive_bound,
                                 bsc_strong_bound, bsc_strong_closed, bus_bsc_gamma_of_r, bus_bsc_hypothesis_test,
                                 bus_bsc_r_value, channel_improved_bound, further_improved_bound,
                                 kv_improved_general_bound, kv_improved_t1_bound, kv_pointwise, l_factor,
                                 lossy_sc_bound, lossy_sc_improved_bound, ns_value, ppv_via_lp_prime,
                                 qary_matched_bound, sweep, tail_sandwich, wolfowitz_bound, write_csv)
from fbc.core_model import (bms_bsc_instance, bms_source, bsc, channel_coding_instance, hamming_matrix,
                            memoryless_product, normalized_hamming, random_stochastic)
from fbc.dual_certificates import bsc_instance, bsc_naive, bsc_strong, kv_improved_general, objective
from fbc.lp_relaxation import build_lp
from fbc.oracle import opt_sc
from fbc.simplex_solver import solve
from fbc.tilted_information import bms_tilted, h2, tilted_for_instance

from conftest import highs_value


# --- binomial kit -----------------------------------------------------------

def test_l_factor_golden():
    assert l_factor(10, 0.5) == pytest.approx(0.24607, abs=1e-5)


def test_l_factor_increases_to_stirling_limit():
    vals = [l_factor(n, 0.5) * math.sqrt(n) for n in (10, 100, 1000, 10000)]
    assert all(0 < v for v in vals)
    assert vals == sorted(vals)
    assert vals[-1] < math.sqrt(2 / math.pi)
    assert 0 < l_factor(100, 0.5) < 1


def test_l_factor_pole_guard():
    with pytest.raises(BoundDomainError):
        l_factor(10, 0.05)


@pytest.mark.parametrize("q", [2, 3, 4, 7])
def test_entropy_peak(q):
    assert BinomialKit.h_q((q - 1) / q, q) == pytest.approx(1.0, abs=1e-15)
    xs = np.linspace(0.01, 0.99, 97)
    assert max(BinomialKit.h_q(x, q) for x in xs) <= 1 + 1e-15


@given(st.integers(0, 300), st.integers(0, 300))
def test_comb_symmetric_and_log_agrees(n, k):
    k = k % (n + 1)
    assert BinomialKit.comb(n, k) == BinomialKit.comb(n, n - k)
    exact = math.log(math.comb(n, k))
    assert BinomialKit.log_comb(n, k) == pytest.approx(exact, rel=1e-10, abs=1e-10)


@given(st.integers(1, 200), st.integers(-2, 200), st.sampled_from([2, 3, 4]))
def test_log_tail_matches_exact(n, m, q):
    m = min(m, n)
    v = BinomialKit.log_tail(n, m, math.log(q - 1))
    if m < 0:
        assert v == -math.inf
    else:
        assert v == pytest.approx(math.log(BinomialKit.tail_exact(n, m, q)), rel=1e-10)


def test_tail_sandwich_small_cases():
    assert tail_sandwich(10, Fraction(3, 10), 2) == (True, True)
    with pytest.raises(BoundDomainError):
        tail_sandwich(10, Fraction(1, 2), 2)


# --- BSC naive and strong -----------------------------------------------------

def test_naive_values():
    assert bsc_naive_bound(1, 0.1, 2).value == pytest.approx(0.1)
    assert bsc_naive_bound(2, 0.1, 4).value == pytest.approx(0.19)
    assert bsc_naive_bound(6, 0, 64).value == 0
    assert bsc_naive_bound(2, Fraction(1, 10), 4, mode="rational").value == Fraction(19, 100)


def test_naive_matches_certificate():
    for n, M in ((1, 2), (2, 4), (3, 4)):
        dp = bsc_naive(n, 0.1, M, "float")
        assert objective(bsc_instance(n, 0.1, M, "float"), dp) == pytest.approx(bsc_naive_bound(n, 0.1, M).value)


def test_strong_witness_reproduces():
    r = bsc_strong_bound(200, 0.11, log2M=0.6 * 200)
    assert bsc_strong_bound(200, 0.11, log2M=120, deltas=[r.witness["delta"]]).value == r.value


@pytest.mark.parametrize("delta", [0.01, 0.03, 0.05, 0.08])
def test_certificate_dominates_closed_form(delta):
    for n, M in ((6, 4), (10, 64)):
        exact = objective(bsc_instance(n, 0.11, M, "float"), bsc_strong(n, 0.11, delta, M, "float"))
        assert exact >= bsc_strong_closed(n, 0.11, delta, math.log2(M)) - 1e-12


def test_strong_n1_bounded():
    assert bsc_strong_bound(1, 0.11, 2).value <= bsc_naive_bound(1, 0.11, 2).value + 1


def test_strong_domain():
    with pytest.raises(BoundDomainError):
        bsc_strong_bound(10, 0.6, 4)
    with pytest.raises(BoundDomainError):
        bsc_strong_bound(10, 0.11, 4, deltas=[0.2])


# --- Kostina-Verdu on dense instances -----------------------------------------

def test_flag_on_dominates_flag_off():
    inst = bms_bsc_instance(2, 2, 0.3, 0.1, 0.25)
    t = tilted_for_instance(inst)
    for g in np.linspace(-3, 6, 37):
        assert kv_pointwise(inst, g, "improved", tilted=t) >= kv_pointwise(inst, g, "kv", tilted=t)
    assert kv_improved_t1_bound(inst, tilted=t).value >= kv_improved_t1_bound(inst, tilted=t, added_term=False).value


@pytest.mark.parametrize("k,n,eps,level", [(2, 2, 0.11, 0.0), (3, 3, 0.11, 1 / 3), (2, 3, 0.2, 0.0), (4, 4, 0.11, 0.25)])
def test_dense_matches_structured_bms_bsc(k, n, eps, level):
    inst = bms_bsc_instance(k, n, 0.5, eps, level)
    j = bms_tilted(k, 0.5, level)
    gs = np.linspace(-3, k + n + 2, 41)
    for fam, kind in (("improved", "improved"), ("kv", "kv"), ("tighter", "further")):
        dense = [kv_pointwise(inst, g, kind, tilted=j) for g in gs]
        fast = [bms_bsc_jscc_bound(k, n, 0.5, eps, level, fam, gammas=[g]).value for g in gs]
        assert np.max(np.abs(np.array(dense) - fast)) <= 1e-10


def test_dense_matches_structured_biased_source():
    inst = bms_bsc_instance(3, 2, 0.3, 0.1, 0.0)
    j = bms_tilted(3, 0.3, 0.0)
    for g in np.linspace(-2, 7, 19):
        assert kv_pointwise(inst, g, tilted=j) == pytest.approx(
            bms_bsc_jscc_bound(3, 2, 0.3, 0.1, 0.0, gammas=[g]).value, abs=1e-10)


def test_dual_consistency_at_argmax():
    inst = bms_bsc_instance(2, 2, 0.3, 0.1, 0.25)
    t = tilted_for_instance(inst)
    r = kv_improved_general_bound(inst, tilted=t)
    g = r.witness["gamma"]
    assert objective(inst, kv_improved_general(inst, g, tilted=t.j)) == pytest.approx(r.value, abs=1e-12)


def test_further_dominates_t1_and_diverges_low():
    inst = bms_bsc_instance(2, 2, 0.3, 0.1, 0.25)
    t = tilted_for_instance(inst)
    for g in np.linspace(-3, 6, 37):
        assert kv_pointwise(inst, g, "further", tilted=t) >= kv_pointwise(inst, g, "improved", tilted=t) - 1e-15
    assert further_improved_bound(inst, tilted=t).value >= kv_improved_t1_bound(inst, tilted=t).value - 1e-15
    vals = [kv_pointwise(inst, g, "improved", tilted=t) for g in (-10, -20, -40)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < -1e11


def test_further_equals_improved_for_channel_coding():
    inst = channel_coding_instance(memoryless_product(bsc(0.1), 3), 4)
    a, b = kv_improved_t1_bound(inst), further_improved_bound(inst)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_witness_reproduces_dense():
    inst = bms_bsc_instance(2, 3, 0.5, 0.11, 0.0)
    for fn in (kv_improved_t1_bound, further_improved_bound, kv_improved_general_bound):
        r = fn(inst)
        assert fn(inst, gammas=[r.witness["gamma"]]).value == r.value


# --- lossy source coding ------------------------------------------------------

def _plain_lossy(ps, j, M, g, added):
    """Symbol-by-symbol evaluation of the source-coding objective."""
    out = 0.0
    for p, js in zip(ps, j):
        if js >= g + math.log2(M):
            out += p
        elif added:
            out += p * 2 ** (js - g) / M
    return out - 2**-g


def test_lossy_matches_plain_sum():
    src = bms_source(4, 0.3)
    d = normalized_hamming(2, 4)
    j = bms_tilted(4, 0.3, 0.25)
    ps = np.asarray(src.mass)
    for g in np.linspace(-3, 4, 29) + 1e-7:
        for added in (False, True):
            v = lossy_sc_bound(src, 3, 0.25, d, tilted=j, gammas=[g], added_term=added).value
            assert v == pytest.approx(_plain_lossy(ps, j, 3, g, added), abs=1e-13)


def test_lossy_orderings():
    src = bms_source(5, 0.22)
    d = normalized_hamming(2, 5)
    j = bms_tilted(5, 0.22, 0.2)
    gs = np.linspace(-3, 5, 33)
    for M in (2, 4, 8):
        kv = [lossy_sc_bound(src, M, 0.2, d, tilted=j, gammas=[g], added_term=False).value for g in gs]
        imp = [lossy_sc_bound(src, M, 0.2, d, tilted=j, gammas=[g]).value for g in gs]
        fur = [lossy_sc_improved_bound(src, M, 0.2, d, tilted=j, gammas=[g]).value for g in gs]
        assert all(b >= a - 1e-15 for a, b in zip(kv, imp))
        assert all(c >= b - 1e-15 for b, c in zip(imp, fur))


def test_lossy_uniform_matches_hypothesis_test():
    k, M, level = 6, 4, 0.2
    src = bms_source(k, 0.5)
    Q = sum(math.comb(k, a) for a in range(int(k * level) + 1))
    want = 1 - 2**-k * M * Q
    got = lossy_sc_improved_bound(src, M, level, normalized_hamming(2, k), tilted=bms_tilted(k, 0.5, level)).value
    assert got == pytest.approx(want, abs=1e-10)
    assert bms_sc_bound(k, 0.5, M, level, "hypothesis").value == pytest.approx(want, abs=1e-12)


def test_lossy_vacuous_regime():
    src = bms_source(3, 0.3)
    d = np.asarray(normalized_hamming(2, 3), dtype=float)
    # at level d_max the rate is 0 and so is the tilted information
    for M in (8, 9, 20):
        assert lossy_sc_bound(src, M, d.max(), d, tilted=np.zeros(8)).value <= 0
        assert lossy_sc_improved_bound(src, M, d.max(), d, tilted=np.zeros(8)).value <= 0
    # lossless with M = |S|: the exact value is 0, so only rounding remains
    j = np.log2(1 / np.asarray(src.mass))
    assert lossy_sc_bound(src, 8, 0.0, d, tilted=j).value <= 1e-15


# --- channel coding -------------------------------------------------------------

def test_wolfowitz_pointwise_below_improved():
    rng = np.random.default_rng(1)
    P = random_stochastic(rng, 4, 5)
    for g in np.linspace(-3, 5, 33):
        assert channel_improved_bound(P, 3, gammas=[g]).value >= wolfowitz_bound(P, 3, gammas=[g]).value


def test_bsc_improved_exceeds_wolfowitz_fig_range():
    for n in range(10, 201, 10):
        w = bsc_channel_bound(n, 0.23, log2M=0.24 * n, family="wolfowitz").value
        i = bsc_channel_bound(n, 0.23, log2M=0.24 * n).value
        assert i > w


def test_bsc_structured_matches_dense():
    n, M = 4, 4
    P = memoryless_product(bsc(0.23), n).matrix
    for g in np.linspace(-2, 4, 25):
        assert bsc_channel_bound(n, 0.23, M, gammas=[g]).value == pytest.approx(
            channel_improved_bound(P, M, gammas=[g]).value, abs=1e-12)
        assert bsc_channel_bound(n, 0.23, M, family="wolfowitz", gammas=[g]).value == pytest.approx(
            wolfowitz_bound(P, M, gammas=[g]).value, abs=1e-12)


def test_gamma_at_log_m_is_finite():
    P = memoryless_product(bsc(0.1), 2).matrix
    assert math.isfinite(wolfowitz_bound(P, 4, gammas=[2.0]).value)


def test_ppv_bsc_single_use():
    inst = channel_coding_instance(bsc(0.1), 2)
    v = ppv_via_lp_prime(inst).value
    lp = solve(build_lp(inst)).value
    assert lp == pytest.approx(0.1)
    assert v <= lp + 1e-12
    assert ns_value(inst.channel, 2, np.zeros(2)) == 0 <= v + 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_improved_channel_is_ns_value(seed):
    rng = np.random.default_rng(seed)
    P = random_stochastic(rng, 3, 3)
    M = 3
    inst = channel_coding_instance(type(bsc(0.1))(P), M)
    opt = ppv_via_lp_prime(inst).value
    for g in np.linspace(-2, 3, 21):
        z = np.full(3, 1 / 3) * M * 2.0**-g
        v = channel_improved_bound(P, M, gammas=[g]).value
        assert v == pytest.approx(ns_value(P, M, z), abs=1e-12)
        assert v <= opt + 1e-9


# --- BMS over BSC and BMS source coding ------------------------------------------

def test_r_form_equals_gamma_form():
    n, k, e, l = 24, 24, 0.11, 0.11
    for r in range(0, n):
        g = bus_bsc_gamma_of_r(n, k, e, l, r)
        assert bus_bsc_r_value(n, k, e, l, r, "improved") == pytest.approx(
            bms_bsc_jscc_bound(k, n, 0.5, e, l, "improved", gammas=[g]).value, abs=1e-10)


def test_hypothesis_dominates_improved_small_n():
    for n in range(2, 31, 2):
        h = bms_bsc_jscc_bound(n, n, 0.5, 0.11, 0.11, "hypothesis").value
        i = bms_bsc_jscc_bound(n, n, 0.5, 0.11, 0.11, "improved").value
        assert h >= i - 1e-12


def test_bms_domain():
    with pytest.raises(BoundDomainError):
        bms_bsc_jscc_bound(4, 4, 0.2, 0.1, 0.25)
    with pytest.raises(BoundDomainError):
        bms_bsc_jscc_bound(4, 4, 0.3, 0.1, 0.1, "hypothesis")
    with pytest.raises(BoundDomainError):
        bms_sc_bound(4, 0.2, 2, 0.2)


def test_bms_sc_uniform_hypothesis():
    for k in (4, 8, 12):
        for M in (2, 16):
            Q = sum(math.comb(k, a) for a in range(int(k * 0.25) + 1))
            assert bms_sc_bound(k, 0.5, M, 0.25, "hypothesis").value == pytest.approx(1 - 2**-k * M * Q, abs=1e-12)


def test_bms_sc_orderings():
    for k in range(5, 61, 5):
        M = 2 ** int(0.5 * k)
        h, i, b = (bms_sc_bound(k, 0.22, M, 0.11, f).value for f in ("hypothesis", "improved", "kv"))
        assert h >= i - 1e-12 and i >= b - 1e-15


def test_bms_sc_base_vacuous_when_m_covers():
    for k in (3, 6):
        assert bms_sc_bound(k, 0.3, 2**k, 0.1, "kv").value <= 0


def test_bms_sc_structured_matches_lossy():
    k, p, level, M = 5, 0.22, 0.2, 4
    src, d, j = bms_source(k, p), normalized_hamming(2, k), bms_tilted(k, p, level)
    for g in np.linspace(-3, 5, 17):
        for fam, kw in (("kv", dict(added_term=False)), ("improved", {})):
            assert bms_sc_bound(k, p, M, level, fam, gammas=[g]).value == pytest.approx(
                lossy_sc_bound(src, M, level, d, tilted=j, gammas=[g], **kw).value, abs=1e-12)
        assert bms_sc_bound(k, p, M, level, "further", gammas=[g]).value == pytest.approx(
            lossy_sc_improved_bound(src, M, level, d, tilted=j, gammas=[g]).value, abs=1e-12)


def test_t_value_limits():
    # t = k - 1 makes the bracket collapse to 1 - M 2^{-k} Q at p = 1/2
    assert bms_sc_t_value(6, 0.5, 2.0, 0.2, 5) == pytest.approx(1 - 4 * 7 / 64, abs=1e-14)


def test_lambda_root_is_exact():
    from fbc.converse_bounds import _lambda_root
    for n, p, d in ((10, Fraction(11, 100), Fraction(1, 10)), (7, Fraction(1, 2), Fraction(1, 3))):
        r, lam = _lambda_root(n, p, d)
        lhs = sum(math.comb(n, t) * p**t * (1 - p) ** (n - t) for t in range(r + 1))
        lhs += lam * p ** (r + 1) * (1 - p) ** (n - r - 1) * math.comb(n, r + 1)
        assert lhs == 1 - d and 0 <= lam < 1


def _best_excess(k, p, level, M):
    """Exact min over codebooks of P[min_c d(S, c) > level] for BMS(p)^k."""
    d = hamming_matrix(2, k)
    ps = np.asarray(bms_source(k, p).mass)
    best = 1.0
    for book in itertools.combinations(range(2**k), M):
        cover = (d[:, list(book)] <= level * k).any(axis=1)
        best = min(best, float(ps[~cover].sum()))
    return best


def test_min_codewords_is_a_converse():
    k, p, level = 3, 0.22, 1 / 3
    for M in range(1, 2**k + 1):
        delta = _best_excess(k, p, level, M)
        if delta >= 1 or delta <= 0:
            continue
        need = bms_sc_min_codewords(k, Fraction(22, 100), Fraction(1, 3), Fraction(delta).limit_denominator(10**12))
        assert M >= need["M_min"] - Fraction(1, 10**9)


def test_bus_bsc_test_holds_for_optimal_codes():
    for eps in (Fraction(1, 10), Fraction(1, 5)):
        inst = bms_bsc_instance(2, 2, 0.5, float(eps), 0.0)
        delta = Fraction(opt_sc(inst).value).limit_denominator(10**12)
        # provided any code has excess probability delta, the necessary condition must hold
        assert bus_bsc_hypothesis_test(2, 2, eps, 0, delta)["feasible"]


# --- the universal converse property on oracle-sized instances -------------------

@pytest.mark.parametrize("k,n,p,eps,level", [(1, 2, 0.5, 0.1, 0.0), (2, 2, 0.5, 0.11, 0.0), (2, 2, 0.3, 0.2, 0.0),
                                             (2, 2, 0.4, 0.11, 0.25)])
def test_bounds_below_oracle(k, n, p, eps, level):
    inst = bms_bsc_instance(k, n, p, eps, level)
    best = opt_sc(inst).value
    j = bms_tilted(k, p, level) if level else None
    vals = [kv_improved_t1_bound(inst, tilted=j).value, further_improved_bound(inst, tilted=j).value,
            kv_improved_t1_bound(inst, tilted=j, added_term=False).value]
    for fam in ("kv", "improved", "tighter"):
        vals.append(bms_bsc_jscc_bound(k, n, p, eps, level, fam).value)
    if p == 0.5:
        vals.append(bms_bsc_jscc_bound(k, n, p, eps, level, "hypothesis").value)
    assert max(vals) <= best + 1e-12
    assert max(vals) <= highs_value(build_lp(inst)) + 1e-9


# --- matched case --------------------------------------------------------------

def test_matched_exact():
    assert qary_matched_bound(1, 2, Fraction(1, 10)).value == Fraction(1, 10)
    assert qary_matched_bound(3, 3, Fraction(1, 5)).value == Fraction(1, 5)


@given(st.integers(1, 40), st.integers(2, 6), st.floats(0.001, 0.999))
@settings(max_examples=20)
def test_matched_float(n, q, t):
    eps = t * (1 - 1 / q)
    assert qary_matched_bound(n, q, eps, mode="float").value == pytest.approx(eps, abs=1e-12)


def test_matched_domain():
    with pytest.raises(BoundDomainError):
        qary_matched_bound(2, 2, Fraction(1, 2))


# --- sweeps and CSV --------------------------------------------------------------

def test_sweep_order_and_columns():
    grid = [{"n": n, "eps": 0.11, "log2M": 0.6 * n} for n in (40, 10, 20)]
    rows = sweep("bsc-strong", bsc_strong_bound, grid, jobs=2)
    assert [r["n"] for r in rows] == [40, 10, 20]
    buf = io.StringIO()
    write_csv(rows, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "family,n,k,eps,log2M,value,witness_delta"
    again = io.StringIO()
    write_csv(sweep("bsc-strong", bsc_strong_bound, grid, jobs=1), again)
    assert again.getvalue() == text
    assert len(list(csv.DictReader(io.StringIO(text)))) == 3


def test_tail_sandwich_interval_edges():
    # alpha with n * alpha integral, close to the (q - 1)/q edge
    from fractions import Fraction

    assert tail_sandwich(60, Fraction(29, 60), 2) == (True, True)
    assert tail_sandwich(60, Fraction(39, 60), 3) == (True, True)
    with pytest.raises(BoundDomainError):
        tail_sandwich(10, Fraction(1, 2), 2)
