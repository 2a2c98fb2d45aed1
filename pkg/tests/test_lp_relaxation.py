import itertools
from fractions import Fraction

import numpy as np
import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from fbc.core_model import (DeterministicCode, LossFunction, ProblemInstance, bsc, channel_coding_instance,
                            matched_instance, random_instance, random_stochastic)
from fbc.lp_relaxation import (build_lp, build_lp_prime, embed_code, is_row_subset, active_rank, lp_text,
                               mccormick_check, row_set)

from conftest import highs_value


def _counts(lp):
    return {f.name: f.size for f in lp.eq_rows.families}, {f.name: f.size for f in lp.ineq_rows.families}


def test_counts_2222():
    lp = build_lp(random_instance(0))
    eq, ineq = _counts(lp)
    assert lp.n_vars == 24
    assert eq == {"enc": 2, "dec": 2, "lam_a": 8, "lam_b": 8}
    assert ineq["mc"] == 16
    assert sum(v for k, v in ineq.items() if k.startswith("nn:")) == 24


def test_counts_3223():
    lp = build_lp(random_instance(1, sizes=(3, 2, 2, 3)))
    eq, _ = _counts(lp)
    assert lp.n_vars == 48
    assert (eq["enc"], eq["dec"], eq["lam_a"], eq["lam_b"]) == (3, 2, 18, 12)


def test_zero_loss_objective():
    inst = random_instance(2)
    zero = ProblemInstance(inst.S, inst.X, inst.Y, inst.Shat, inst.source, inst.channel,
                           LossFunction.from_table(np.zeros((2, 2, 2, 2))))
    assert not np.any(build_lp(zero).c)


def test_objective_coefficients():
    inst = random_instance(3, sizes=(2, 3, 2, 2))
    lp = build_lp(inst)
    W = lp.variables["W"]
    for s, x, y, h in itertools.product(range(2), range(3), range(2), range(2)):
        want = inst.loss.table[s, x, y, h] * inst.source.mass[s] * inst.channel.matrix[x, y]
        assert lp.c[W.index(s, x, y, h)] == pytest.approx(want, rel=1e-15)


def test_catalog_ordering_is_s_major():
    lp = build_lp(random_instance(0))
    W = lp.variables["W"]
    assert lp.variables.label(W.offset) == "W[s=0,x=0,y=0,shat=0]"
    assert lp.variables.label(W.offset + 1) == "W[s=0,x=0,y=0,shat=1]"
    assert lp.variables.label(W.offset + 8) == "W[s=1,x=0,y=0,shat=0]"


def test_lp_prime_drops_only_mccormick():
    inst = random_instance(4)
    lp, lpp = build_lp(inst), build_lp_prime(inst)
    assert lpp.tag == "LP_PRIME" and lp.tag == "LP"
    assert lpp.n_eq == 20
    assert "mc" not in {f.name for f in lpp.ineq_rows.families}
    assert is_row_subset(lpp, lp)
    assert not is_row_subset(lp, lpp)
    assert row_set(lp, "eq") == row_set(lpp, "eq")


def test_lp_prime_channel_coding_objective_identity():
    inst = channel_coding_instance(bsc(0.1), 2)
    lp = build_lp_prime(inst)
    rng = np.random.default_rng(5)
    for _ in range(20):
        pt = embed_code(inst, random_stochastic(rng, 2, 2, False), random_stochastic(rng, 2, 2, False))
        v = pt.vector()
        assert lp.is_feasible(v)
        P = inst.channel.matrix
        ns = 1 - 0.5 * sum(P[x, y] * pt.W[s, x, y, s] for s in range(2) for x in range(2) for y in range(2))
        assert float(lp.objective(v)) == pytest.approx(ns, abs=1e-14)


def test_deterministic_identity_code_embeds_to_indicator(bsc_bit):
    qx, qs = DeterministicCode((0, 1), (0, 1)).kernels(bsc_bit)
    pt = embed_code(bsc_bit, qx, qs)
    assert set(np.unique(pt.W)) <= {0.0, 1.0}
    assert pt.W.sum() == 4


def test_uniform_randomized_code():
    inst = random_instance(6)
    pt = embed_code(inst, np.full((2, 2), 0.5), np.full((2, 2), 0.5))
    assert np.all(pt.W == 0.25)


def test_product_entry():
    inst = random_instance(7)
    pt = embed_code(inst, [[0.3, 0.7], [1, 0]], [[0.6, 0.4], [0, 1]])
    assert pt.W[0, 0, 0, 0] == pytest.approx(0.18)


def test_non_stochastic_rejected():
    with pytest.raises(ValueError):
        embed_code(random_instance(0), [[0.5, 0.6], [1, 0]], np.eye(2))


def test_rational_embedding_exact():
    inst = matched_instance(2, 1, Fraction(1, 10), mode="rational")
    h = mpq(1, 3)
    pt = embed_code(inst, np.array([[h, 1 - h], [mpq(1), mpq(0)]], dtype=object),
                    np.array([[mpq(1, 2), mpq(1, 2)], [mpq(0), mpq(1)]], dtype=object))
    eq, ineq = build_lp(inst).residuals(pt.vector())
    assert eq == 0 and ineq == 0


@settings(max_examples=1000)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2, 2, 2), (3, 2, 2, 3), (2, 3, 3, 2)]))
def test_every_stochastic_pair_lifts_feasibly(seed, sizes):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, sizes=sizes)
    pt = embed_code(inst, random_stochastic(rng, sizes[0], sizes[1], False),
                    random_stochastic(rng, sizes[2], sizes[3], False), check=False)
    eq, ineq = build_lp(inst).residuals(pt.vector())
    assert eq <= 1e-12 and ineq <= 1e-12


def test_deterministic_lifts_are_vertices():
    inst = random_instance(8)
    lp = build_lp(inst)
    for f in itertools.product(range(2), repeat=2):
        for g in itertools.product(range(2), repeat=2):
            qx, qs = DeterministicCode(f, g).kernels(inst)
            assert active_rank(lp, embed_code(inst, qx, qs).vector()) == lp.n_vars


def test_randomized_lift_is_not_vertex():
    inst = random_instance(8)
    lp = build_lp(inst)
    v = embed_code(inst, [[0.5, 0.5], [1, 0]], np.eye(2)).vector()
    assert lp.is_feasible(v)
    assert active_rank(lp, v) < lp.n_vars


def test_mccormick_examples():
    assert mccormick_check(0.12, 0.3, 0.4)
    assert not mccormick_check(0.9, 0.5, 0.5)
    assert not mccormick_check(0, 1, 1)


@given(st.floats(-2, 2), st.floats(0, 3), st.floats(0, 1), st.floats(0, 1))
def test_mccormick_contains_products(l1, w1, t1, t2):
    u1 = l1 + w1
    x1 = l1 + t1 * w1
    x2 = -1 + 2 * t2
    assert mccormick_check(x1 * x2, x1, x2, ((l1, u1), (-1, 1)), tol=1e-9)


@given(st.integers(0, 10**6))
@settings(max_examples=30)
def test_lp_at_least_lp_prime(seed):
    inst = random_instance(seed, sizes=(2, 2, 3, 2))
    assert highs_value(build_lp(inst)) >= highs_value(build_lp_prime(inst)) - 1e-9


def test_lp_text_is_stable():
    inst = matched_instance(2, 1, Fraction(1, 10), mode="rational")
    a, b = lp_text(build_lp(inst)), lp_text(build_lp(inst))
    assert a == b
    head = a.splitlines()[0]
    assert head == "# tag=LP vars=24 eq=20 ineq=40"
    assert "min: +9/20 W[s=0,x=0,y=0,shat=1] +1/20 W[s=0,x=0,y=1,shat=1]" in a
