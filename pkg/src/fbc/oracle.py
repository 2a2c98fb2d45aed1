"""Exhaustive ground truth for tiny instances.

``opt_sc`` enumerates encoders in lexicographic order.  For a fixed encoder the
decoder decouples across channel outputs, so each output gets its own
first-minimizing reproduction; this is exactly the lexicographic (f, g)
tie-break of a full double enumeration.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core_model import (
    RATIONAL,
    CapExceeded,
    DeterministicCode,
    ProblemInstance,
    expected_loss,
    to_fraction,
)
from .lp_relaxation import active_rank, build_lp, build_lp_prime, embed_code
from .simplex_solver import OPTIMAL, solve

DEFAULT_CODE_CAP = 10**6


@dataclass(frozen=True)
class OracleResult:
    value: object
    code: DeterministicCode
    n_codes: int


def _code_count(inst: ProblemInstance) -> int:
    nS, nX, nY, nH = inst.shape
    return nX**nS * nH**nY


def _encoder(index: int, nS: int, nX: int) -> tuple:
    digits = []
    for _ in range(nS):
        index, r = divmod(index, nX)
        digits.append(r)
    return tuple(reversed(digits))


def _best_for_range(args):
    inst, lo, hi = args
    nS, nX, nY, nH = inst.shape
    w = np.broadcast_to(inst.weight(), inst.shape)
    best = None
    srange = np.arange(nS)
    for e in range(lo, hi):
        f = _encoder(e, nS, nX)
        per = w[srange, list(f)].sum(axis=0)  # (Y, Shat)
        g = tuple(int(min(range(nH), key=lambda h, row=row: (row[h], h))) for row in per)
        val = sum(per[y, g[y]] for y in range(nY))
        if best is None or val < best[0]:
            best = (val, f, g)
    return best


def opt_sc(inst: ProblemInstance, cap: int = DEFAULT_CODE_CAP, jobs: int = 1) -> OracleResult:
    """Minimum expected loss over all deterministic codes (exact in rational mode)."""
    total = _code_count(inst)
    if total > cap:
        raise CapExceeded(f"{total} deterministic codes exceed cap {cap}")
    nS, nX = inst.S.size, inst.X.size
    n_enc = nX**nS
    if jobs <= 1 or n_enc < 2 * jobs:
        parts = [_best_for_range((inst, 0, n_enc))]
    else:
        step = -(-n_enc // jobs)
        chunks = [(inst, lo, min(lo + step, n_enc)) for lo in range(0, n_enc, step)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_best_for_range, chunks))
    best = None
    for p in parts:  # chunks arrive in encoder order, so strict < keeps the first minimizer
        if best is None or p[0] < best[0]:
            best = p
    val, f, g = best
    code = DeterministicCode(f, g)
    value = to_fraction(val) if inst.mode == RATIONAL else float(val)
    return OracleResult(value, code, total)


def lifted_value(inst: ProblemInstance, code: DeterministicCode):
    """LP objective at the product lift of ``code``."""
    lp = build_lp(inst)
    qx, qs = code.kernels(inst)
    v = lp.objective(embed_code(inst, qx, qs, check=False).vector())
    return to_fraction(v) if inst.mode == RATIONAL else float(v)


@dataclass(frozen=True)
class Sandwich:
    opt_sc: object
    opt_lp: object
    opt_lp_prime: object
    opt_sc_prime: object
    code: DeterministicCode


def sandwich(inst: ProblemInstance, mode: str | None = None, tol: float = 1e-8,
             cap: int = DEFAULT_CODE_CAP) -> Sandwich:
    """(OPT(SC), OPT(LP), OPT(LP')) with the chain OPT(LP') <= OPT(LP) <= OPT(SC) asserted."""
    mode = mode or inst.mode
    orc = opt_sc(inst, cap=cap)
    lp = solve(build_lp(inst), mode=mode)
    lpp = solve(build_lp_prime(inst), mode=mode)
    if lp.status != OPTIMAL or lpp.status != OPTIMAL:
        raise AssertionError(f"relaxation not solved to optimality ({lp.status}, {lpp.status})")
    lifted = lifted_value(inst, orc.code)
    t = 0 if mode == RATIONAL and inst.mode == RATIONAL else tol
    chain = [("LP' <= LP", lpp.value, lp.value), ("LP <= lifted code", lp.value, lifted),
             ("lifted code == SC", lifted, orc.value)]
    for name, lo, hi in chain:
        if lo > hi + t:
            raise AssertionError(f"{name} violated: {float(lo)!r} > {float(hi)!r}")
    if abs(lifted - orc.value) > t:
        raise AssertionError("lifted value of the optimal code disagrees with expected_loss")
    return Sandwich(orc.value, lp.value, lpp.value, lifted, orc.code)


@dataclass(frozen=True)
class CensusEntry:
    code: DeterministicCode
    feasible: bool
    rank: int
    vertex: bool


@dataclass(frozen=True)
class CensusReport:
    n_vars: int
    entries: tuple

    @property
    def n_codes(self) -> int:
        return len(self.entries)

    @property
    def n_feasible(self) -> int:
        return sum(e.feasible for e in self.entries)

    @property
    def n_vertices(self) -> int:
        return sum(e.vertex for e in self.entries)

    def summary(self) -> str:
        return f"{self.n_codes} codes, {self.n_feasible} feasible, {self.n_vertices}/{self.n_codes} vertices"


def point_status(inst: ProblemInstance, qx, qs, lp=None) -> tuple[bool, int, bool]:
    """(LP-feasible, active-row rank, is a vertex) for the product lift of (qx, qs)."""
    lp = lp or build_lp(inst)
    v = embed_code(inst, qx, qs, check=False).vector()
    feas = lp.is_feasible(v)
    rank = active_rank(lp, v)
    return feas, rank, feas and rank == lp.n_vars


def vertex_census(inst: ProblemInstance, cap: int = DEFAULT_CODE_CAP) -> CensusReport:
    """Check that every deterministic code lifts to an LP vertex."""
    total = _code_count(inst)
    if total > cap:
        raise CapExceeded(f"{total} deterministic codes exceed cap {cap}")
    nS, nX, nY, nH = inst.shape
    lp = build_lp(inst)
    entries = []
    for f in itertools.product(range(nX), repeat=nS):
        for g in itertools.product(range(nH), repeat=nY):
            code = DeterministicCode(f, g)
            qx, qs = code.kernels(inst)
            feas, rank, vert = point_status(inst, qx, qs, lp)
            entries.append(CensusEntry(code, feas, rank, vert))
    return CensusReport(lp.n_vars, tuple(entries))


def enumerate_codes(inst: ProblemInstance):
    nS, nX, nY, nH = inst.shape
    for f in itertools.product(range(nX), repeat=nS):
        for g in itertools.product(range(nH), repeat=nY):
            yield DeterministicCode(f, g)


def brute_force(inst: ProblemInstance) -> OracleResult:
    """Plain double enumeration; slow reference for opt_sc."""
    best = None
    n = 0
    for code in enumerate_codes(inst):
        n += 1
        v = expected_loss(inst, code)
        if best is None or v < best[0]:
            best = (v, code)
    return OracleResult(best[0], best[1], n)


__all__ = ["OracleResult", "Sandwich", "CensusReport", "opt_sc", "sandwich", "vertex_census",
           "brute_force", "point_status", "lifted_value", "DEFAULT_CODE_CAP"]
