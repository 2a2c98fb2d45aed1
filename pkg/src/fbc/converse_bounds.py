"""Closed-form converse evaluators, sweeps over gamma, delta, r and t.

Every evaluator returns a ``BoundResult`` whose ``witness`` holds the parameter
values that achieve the reported maximum; calling the evaluator again with only
that parameter reproduces the value.

Information quantities are in bits, so exp(j - gamma) is 2**(j - gamma).  With
u = 2**-gamma, every Kostina-Verdu type objective has the form

    sum_i w_i * min(p_i, c_i u)  -  K u          (with the added term)
    sum_i w_i * p_i 1{p_i <= c_i u}  -  K u      (original, truncated)

The first is concave and piecewise linear in u; the second is a staircase minus
a line.  Either way the supremum over gamma sits at a breakpoint
gamma_i = -log2(p_i / c_i), so structured evaluators scan all breakpoints
exactly (prefix sums in the log domain) and add the default grid on top.
The limit gamma -> +inf, where every objective tends to 0, is always a
candidate, so a vacuous bound reports 0 with witness gamma = inf.
Dense evaluators take the minimum over channel inputs, which can create kinks
between breakpoints, so they also run one local refinement pass.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import mpmath
import numpy as np
from scipy.special import gammaln

from .core_model import FLOAT, RATIONAL, ChannelKernel, Distribution, ProblemInstance, to_fraction
from .dual_certificates import Decomposition
from .tilted_information import h2, tilted_for_instance

LN2 = math.log(2.0)
GRID_POINTS = 512
EDGE = 1e-12  # relative gamma shift that keeps a breakpoint on the inclusive side


class BoundDomainError(ValueError):
    pass


@dataclass(frozen=True)
class BoundResult:
    value: object
    witness: dict
    family: str
    mode: str = FLOAT
    extra: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)


# ---------------------------------------------------------------------------
# binomial arithmetic


class BinomialKit:
    """Log-domain and exact big-integer binomial helpers."""

    @staticmethod
    def log_comb(n, k):
        """Natural log of C(n, k); vectorized, -inf outside 0 <= k <= n."""
        n = np.asarray(n, dtype=float)
        k = np.asarray(k, dtype=float)
        ok = (k >= 0) & (k <= n)
        with np.errstate(invalid="ignore"):
            out = gammaln(n + 1) - gammaln(np.where(ok, k, 0) + 1) - gammaln(np.where(ok, n - k, 0) + 1)
        out = np.where(ok, out, -np.inf)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def comb(n: int, k: int) -> int:
        return math.comb(n, k) if 0 <= k <= n else 0

    @staticmethod
    def h_q(x, q) -> float:
        """q-ary entropy x log_q(q-1) - x log_q x - (1-x) log_q(1-x); q may be real > 1."""
        x = float(x)
        q = float(q)
        if not 0 <= x <= 1:
            raise BoundDomainError(f"entropy argument {x} outside [0, 1]")
        lq = math.log(q)
        out = x * math.log(q - 1) / lq if x > 0 else 0.0
        if 0 < x:
            out -= x * math.log(x) / lq
        if x < 1:
            out -= (1 - x) * math.log(1 - x) / lq
        return out

    @staticmethod
    def tail_exact(n: int, m: int, q: int = 2) -> int:
        """sum_{i <= m} C(n, i) (q - 1)^i as an exact integer."""
        return sum(math.comb(n, i) * (q - 1) ** i for i in range(0, min(m, n) + 1))

    @staticmethod
    def log_tail(n: int, m, logx: float = 0.0) -> float:
        """Natural log of sum_{i <= m} C(n, i) x^i with x = e^logx."""
        m = int(math.floor(m))
        if m < 0:
            return -math.inf
        i = np.arange(0, min(m, n) + 1)
        terms = BinomialKit.log_comb(n, i) + i * logx
        return float(np.logaddexp.reduce(np.atleast_1d(terms)))

    @staticmethod
    def log_binom_cdf(n: int, m, p: float) -> float:
        """Natural log of P[Bin(n, p) <= m]."""
        m = int(math.floor(m))
        if m < 0:
            return -math.inf
        if m >= n:
            return 0.0
        i = np.arange(0, m + 1)
        lp = math.log(p) if p > 0 else -math.inf
        lq = math.log1p(-p)
        with np.errstate(invalid="ignore"):
            terms = BinomialKit.log_comb(n, i) + np.where(i > 0, i * lp, 0.0) + (n - i) * lq
        return float(np.logaddexp.reduce(np.atleast_1d(terms)))

    @staticmethod
    def l_factor(n, alpha) -> float:
        return l_factor(n, alpha)


def _lam1(x: float) -> float:
    return 1.0 / (12 * x + 1)


def _lam2(x: float) -> float:
    return 1.0 / (12 * x)


def l_factor(n, alpha) -> float:
    """exp(lam1(n) - lam2(n a) - lam2(n(1-a))) / sqrt(2 pi a (1-a) n)."""
    n = float(n)
    a = float(alpha)
    if not 0 < a < 1:
        raise BoundDomainError(f"need 0 < alpha < 1, got {alpha}")
    if n * a < 1 or n * (1 - a) < 1:
        raise BoundDomainError(f"l(n, alpha) needs n*alpha >= 1 and n*(1-alpha) >= 1 (n={n:g}, alpha={a:g})")
    return math.exp(_lam1(n) - _lam2(n * a) - _lam2(n * (1 - a))) / math.sqrt(2 * math.pi * a * (1 - a) * n)


def tail_sandwich(n: int, alpha, q: int, dps: int = 60) -> tuple[bool, bool]:
    """(lower holds, upper holds) for q^{nH_q(a)} l(n,a) <= sum_{i<=floor(na)} C(n,i)(q-1)^i <= q^{nH_q(a)}.

    The tail is an exact integer.  Both sides are enclosed in intervals at
    ``dps`` digits; a side holds when the whole interval is on the right side
    of the integer, and precision doubles (up to 8 times) while an interval
    still contains it.
    """
    if not q > 1 / (1 - float(alpha)):
        raise BoundDomainError(f"tail bounds need q > 1/(1-alpha) (q={q}, alpha={alpha})")
    fa = _frac(alpha)
    if not 0 < fa < 1:
        raise BoundDomainError("need 0 < alpha < 1")
    m = (n * fa.numerator) // fa.denominator
    tail = BinomialKit.tail_exact(n, m, q)
    iv = mpmath.iv
    saved = iv.dps
    try:
        for k in range(8):
            iv.dps = dps << k
            a = iv.mpf(fa.numerator) / fa.denominator
            lq = iv.log(q)
            H = (a * iv.log(q - 1) - a * iv.log(a) - (1 - a) * iv.log(1 - a)) / lq
            top = iv.exp(n * H * lq)
            l = iv.exp(1 / (12 * iv.mpf(n) + 1) - 1 / (12 * n * a) - 1 / (12 * n * (1 - a)))
            low = top * l / iv.sqrt(2 * iv.pi * a * (1 - a) * n)
            if tail not in low and tail not in top:
                return bool(low.b < tail), bool(tail < top.a)
    finally:
        iv.dps = saved
    raise ArithmeticError(f"could not separate the tail bound at n={n}, alpha={alpha}, q={q}")


# ---------------------------------------------------------------------------
# gamma grids and the breakpoint curve


def gamma_grid(lo: float, hi: float, points: int = GRID_POINTS) -> np.ndarray:
    """Uniform in gamma, i.e. geometric in 2^-gamma."""
    if not hi > lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, points)


def _log2M(M) -> float:
    if isinstance(M, (int, np.integer)):
        if M < 1:
            raise BoundDomainError("M must be positive")
        return math.log2(int(M))
    M = float(M)
    if not M > 0:
        raise BoundDomainError("M must be positive")
    return math.log2(M)


def _resolve_log2M(M=None, log2M=None) -> float:
    if (M is None) == (log2M is None):
        raise BoundDomainError("give exactly one of M and log2M")
    return float(log2M) if log2M is not None else _log2M(M)


def _inclusive(g: np.ndarray) -> np.ndarray:
    return g - EDGE * np.maximum(1.0, np.abs(g))


class _MinCurve:
    """f(gamma) = sum_i w_i min(p_i, c_i u) (or the truncated staircase) - K u, u = 2^-gamma."""

    def __init__(self, logw, logp, logc, logK: float, truncated: bool):
        logw = np.ravel(np.asarray(logw, dtype=float))
        logp = np.ravel(np.asarray(logp, dtype=float))
        logc = np.ravel(np.asarray(logc, dtype=float))
        live = np.isfinite(logw) & np.isfinite(logp)
        logw, logp, logc = logw[live], logp[live], logc[live]
        key = logp - logc  # item i is on the p side iff key_i <= ln u
        order = np.argsort(key, kind="stable")
        self.key = key[order]
        self.A = np.logaddexp.accumulate((logw + logp)[order])
        wb = (logw + logc)[order]
        self.B = np.logaddexp.accumulate(wb[::-1])[::-1]
        self.logK = logK
        self.truncated = truncated

    def __call__(self, gammas) -> np.ndarray:
        g = np.atleast_1d(np.asarray(gammas, dtype=float))
        lu = -g * LN2
        idx = np.searchsorted(self.key, lu, side="right")
        N = len(self.key)
        with np.errstate(over="ignore", invalid="ignore"):
            inc = np.where(idx > 0, np.exp(self.A[np.maximum(idx - 1, 0)]), 0.0)
            if not self.truncated and N:
                inc = inc + np.where(idx < N, np.exp(lu + self.B[np.minimum(idx, N - 1)]), 0.0)
            pen = np.exp(self.logK + lu) if self.logK > -math.inf else 0.0
            return inc - pen

    def breakpoints(self) -> np.ndarray:
        return np.unique(-self.key / LN2)


def _best(gs: np.ndarray, vals: np.ndarray):
    vals = np.where(np.isnan(vals), -np.inf, vals)
    i = int(np.argmax(vals))
    return float(gs[i]), float(vals[i])


def _sup_curve(curve: _MinCurve, grid: np.ndarray | None, gammas=None):
    """Maximize over explicit gammas, or over all breakpoints plus ``grid``."""
    if gammas is not None:
        gs = np.atleast_1d(np.asarray(gammas, dtype=float))
    else:
        gs = np.concatenate([_inclusive(curve.breakpoints()), grid if grid is not None else [], [np.inf]])
    return _best(gs, curve(gs))


# ---------------------------------------------------------------------------
# BSC: naive and strong converses


def bsc_naive_bound(n: int, eps, M=None, log2M=None, mode: str = FLOAT) -> BoundResult:
    """1 - (1-eps)^n 2^n / M."""
    if n < 0 or not 0 <= float(eps) < 0.5:
        raise BoundDomainError("need n >= 0 and 0 <= eps < 1/2")
    if mode == RATIONAL:
        if M is None:
            raise BoundDomainError("rational mode needs an integer M")
        e = Fraction(str(eps)) if isinstance(eps, float) else Fraction(eps)
        return BoundResult(1 - (1 - e) ** n * Fraction(2**n, M), {}, "bsc-naive", RATIONAL)
    lm = _resolve_log2M(M, log2M)
    t = n * math.log2(1 - float(eps)) + n - lm if float(eps) < 1 else -math.inf
    with np.errstate(over="ignore"):
        v = 1.0 - float(np.exp2(t))
    return BoundResult(v, {}, "bsc-naive", FLOAT, {"log2_subtracted": t})


def _exp2(t: float) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp2(t))


def bsc_strong_closed(n: int, eps: float, delta: float, log2M: float) -> float:
    """Three-term closed form at a single delta (the l-term is dropped when n(eps-delta) < 1)."""
    e = float(eps)
    a = e - float(delta)
    L = math.log2((1 - e) / e)
    val = 1.0
    if n * a >= 1 and n * (1 - a) >= 1:
        val += _exp2(-n * (h2(e) - h2(a) - delta * L)) * l_factor(n, a)
    val -= _exp2(n * (1 - h2(e) + delta * L) - log2M)
    q = 1 / (1 - e)
    val -= _exp2((n - n * BinomialKit.h_q(a, q)) * math.log2(1 - e))
    return val


def bsc_strong_objective(n: int, eps: float, delta: float, log2M: float) -> float:
    """Exact objective of the clipped certificate, tau = n(eps - delta), in the log domain:
    P[W > tau] + eps^tau (1-eps)^{n-tau} (sum_{k<=tau} C(n,k) - 2^n / M)."""
    e = float(eps)
    tau = n * (e - float(delta))
    m = math.floor(tau + 1e-12)
    lc = BinomialKit.log_binom_cdf(n, m, e)
    upper = -math.expm1(lc) if lc > -math.inf else 1.0
    lf = tau * math.log(e) + (n - tau) * math.log1p(-e)
    lt = BinomialKit.log_tail(n, m)
    a = math.exp(lf + lt) if lt > -math.inf else 0.0
    with np.errstate(over="ignore"):
        b = float(np.exp(lf + n * LN2 - log2M * LN2))
    return upper + a - b


def bsc_strong_bound(n: int, eps, M=None, log2M=None, deltas=None, points: int = GRID_POINTS,
                     evaluator: str = "closed") -> BoundResult:
    """sup over 0 < delta < eps of the strong converse; delta grid plus golden-section refinement.

    ``evaluator`` is "closed" (three-term tail-bound form) or "exact" (the
    certificate objective itself).
    """
    e = float(eps)
    if not 0 < e < 0.5:
        raise BoundDomainError("need 0 < eps < 1/2")
    if n < 1:
        raise BoundDomainError("need n >= 1")
    lm = _resolve_log2M(M, log2M)
    f = {"closed": bsc_strong_closed, "exact": bsc_strong_objective}[evaluator]

    def val(d):
        return f(n, e, d, lm)

    if deltas is not None:
        ds = [float(d) for d in np.atleast_1d(deltas)]
        if any(not 0 < d < e for d in ds):
            raise BoundDomainError("every delta must satisfy 0 < delta < eps")
        vs = [val(d) for d in ds]
        i = int(np.nanargmax(vs))
        return BoundResult(vs[i], {"delta": ds[i]}, f"bsc-strong-{evaluator}", FLOAT)
    ds = np.linspace(0, e, points + 2)[1:-1]
    if len(ds) == 0:
        raise BoundDomainError("empty delta range")
    vs = np.array([val(d) for d in ds])
    i = int(np.nanargmax(vs))
    lo, hi = ds[max(i - 1, 0)], ds[min(i + 1, len(ds) - 1)]
    best_d, best_v = float(ds[i]), float(vs[i])
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = val(c), val(d)
    for _ in range(60):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = val(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = val(d)
    for cand, fv in ((c, fc), (d, fd)):
        if fv > best_v:
            best_d, best_v = float(cand), float(fv)
    return BoundResult(best_v, {"delta": best_d}, f"bsc-strong-{evaluator}", FLOAT)


# ---------------------------------------------------------------------------
# dense Kostina-Verdu type evaluators on ProblemInstance


def _excess(inst: ProblemInstance):
    if not inst.loss.is_excess:
        raise BoundDomainError("the bound needs an excess-distortion loss 1{d(s,shat) > level}")
    return np.asarray(inst.loss.distortion, dtype=float), float(inst.loss.level)


def _kv_dense_values(inst: ProblemInstance, dec: Decomposition, j: np.ndarray, gammas, kind: str) -> np.ndarray:
    """Objective in indicator form at each gamma; kind in {kv, improved, further}."""
    d, level = _excess(inst)
    ps = np.asarray(inst.source.mass, dtype=float)
    py = dec.py_xv[:, None, :, :]  # (X,1,T,Y)
    pyb = dec.pybar_v[None, None, :, :]  # (1,1,T,Y)
    T = dec.T
    near = (d <= level).astype(float)  # (S,H)
    out = []
    for g in np.atleast_1d(np.asarray(gammas, dtype=float)):
        with np.errstate(invalid="ignore"):
            F = np.where(ps > 0, np.exp2(np.where(ps > 0, j, 0.0) - g), 0.0)  # (S,)
        thr = pyb * F[None, :, None, None]
        ind = py <= thr  # 1{i(x;y|t) <= j(s) - gamma}
        term = np.where(ind, py, 0.0)
        if kind != "kv":
            term = term + np.where(ind, 0.0, thr)
        inner = np.einsum("xt,xsty->xs", dec.pv_x, term)
        val = float(ps @ inner.min(axis=0))
        if kind == "further":
            val -= T * float(np.max((ps * F) @ near))
        else:
            val -= T * 2.0**-g
        out.append(val)
    return np.array(out)


def _dense_breakpoints(dec: Decomposition, j: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        i = np.log2(dec.py_xv) - np.log2(dec.pybar_v)[None, :, :]
    i = np.unique(i[np.isfinite(i)])
    b = (j[np.isfinite(j)][:, None] - i[None, :]).ravel()
    return np.unique(b[np.isfinite(b)])


def _dense_sup(fn: Callable, breaks: np.ndarray, grid: np.ndarray, gammas, refine: bool, cap: int = 4096):
    if gammas is not None:
        gs = np.atleast_1d(np.asarray(gammas, dtype=float))
        return _best(gs, fn(gs))
    if len(breaks) > cap:
        breaks = breaks[np.linspace(0, len(breaks) - 1, cap).astype(int)]
    gs = np.unique(np.concatenate([_inclusive(breaks), grid, [np.inf]]))
    vals = fn(gs)
    g, v = _best(gs, vals)
    if refine and math.isfinite(g) and len(gs) > 2:
        k = int(np.searchsorted(gs, g))
        lo, hi = gs[max(k - 1, 0)], gs[min(k + 1, len(gs) - 2)]
        fine = np.linspace(lo, hi, 65)
        g2, v2 = _best(fine, fn(fine))
        if v2 > v:
            g, v = g2, v2
    return g, v


def _tilted_j(inst: ProblemInstance, tilted) -> np.ndarray:
    if tilted is None:
        return np.asarray(tilted_for_instance(inst).j, dtype=float)
    return np.asarray(getattr(tilted, "j", tilted), dtype=float)


def _default_grid(j: np.ndarray, nY: int) -> np.ndarray:
    hi = float(np.max(j[np.isfinite(j)])) + math.log2(max(nY, 2)) + 5
    return gamma_grid(-5.0, hi)


def kv_improved_general_bound(inst: ProblemInstance, decomposition: Decomposition | None = None, tilted=None,
                              gammas=None, added_term: bool = True) -> BoundResult:
    """sup_gamma E[inf_x {P[j - i >= gamma | S] + 2^{j-gamma} sum_{y,t} P(t|x)Pbar(y|t)1{i > j-gamma}}] - T 2^-gamma.

    ``added_term=False`` gives the original generalized Kostina-Verdu bound.
    """
    dec = decomposition or Decomposition.single(inst.channel)
    bad = dec.problems(inst.channel)
    if bad:
        raise BoundDomainError("; ".join(bad))
    j = _tilted_j(inst, tilted)
    kind = "improved" if added_term else "kv"
    g, v = _dense_sup(lambda gs: _kv_dense_values(inst, dec, j, gs, kind), _dense_breakpoints(dec, j),
                      _default_grid(j, inst.Y.size), gammas, refine=added_term)
    fam = "kv-general-improved" if added_term else "kv-general"
    return BoundResult(v, {"gamma": g, "T": dec.T}, fam, FLOAT)


def kv_improved_t1_bound(inst: ProblemInstance, pybar=None, tilted=None, gammas=None,
                         added_term: bool = True) -> BoundResult:
    """T = 1 case with output law ``pybar`` (uniform when omitted)."""
    r = kv_improved_general_bound(inst, Decomposition.single(inst.channel, pybar), tilted, gammas, added_term)
    return BoundResult(r.value, {"gamma": r.witness["gamma"]}, "kv-t1-improved" if added_term else "kv-t1", r.mode)


def further_improved_bound(inst: ProblemInstance, decomposition: Decomposition | None = None, tilted=None,
                           gammas=None) -> BoundResult:
    """Improved bound with T 2^-gamma replaced by T sup_shat E[2^{j-gamma} 1{d(S,shat) <= level}]."""
    dec = decomposition or Decomposition.single(inst.channel)
    bad = dec.problems(inst.channel)
    if bad:
        raise BoundDomainError("; ".join(bad))
    j = _tilted_j(inst, tilted)
    g, v = _dense_sup(lambda gs: _kv_dense_values(inst, dec, j, gs, "further"), _dense_breakpoints(dec, j),
                      _default_grid(j, inst.Y.size), gammas, refine=True)
    return BoundResult(v, {"gamma": g, "T": dec.T}, "further-improved", FLOAT)


def kv_pointwise(inst: ProblemInstance, gamma: float, kind: str = "improved", decomposition=None,
                 tilted=None) -> float:
    """Single-gamma value of the kv / improved / further objectives."""
    dec = decomposition or Decomposition.single(inst.channel)
    return float(_kv_dense_values(inst, dec, _tilted_j(inst, tilted), [gamma], kind)[0])


# ---------------------------------------------------------------------------
# lossy source coding (identity channel on M symbols, Pbar = 1/M)


def _source_parts(source: Distribution, d, level, tilted):
    ps = np.asarray(source.mass, dtype=float)
    d = np.asarray(d, dtype=float)
    if tilted is None:
        from .tilted_information import tilted as _tilted

        j = _tilted(source, d, level).j
    else:
        j = np.asarray(getattr(tilted, "j", tilted), dtype=float)
    return ps, d, float(level), np.asarray(j, dtype=float)


def _lossy_curve(ps, d, level, j, log2M: float, kind: str) -> _MinCurve:
    keep = ps > 0
    with np.errstate(divide="ignore"):
        logw = np.log(ps[keep])
    logp = np.zeros(keep.sum())
    logc = (j[keep] - log2M) * LN2  # min(1, 2^{j-gamma}/M)
    if kind == "further":
        near = (d <= level)[keep]
        K = float(np.max((ps[keep] * np.exp2(j[keep])) @ near))
        logK = math.log(K) if K > 0 else -math.inf
    else:
        logK = 0.0
    return _MinCurve(logw, logp, logc, logK, truncated=(kind == "kv"))


def lossy_sc_bound(source: Distribution, M=None, level=0.0, d=None, tilted=None, gammas=None,
                   added_term: bool = True, log2M=None) -> BoundResult:
    """sup_gamma {P[j >= gamma + log M] + (1/M) E[2^{j-gamma} 1{j < log M + gamma}] - 2^-gamma}.

    ``added_term=False`` is the Kostina-Verdu source coding converse P[j >= gamma + log M] - 2^-gamma.
    """
    lm = _resolve_log2M(M, log2M)
    ps, d, level, j = _source_parts(source, d, level, tilted)
    kind = "improved" if added_term else "kv"
    curve = _lossy_curve(ps, d, level, j, lm, kind)
    grid = gamma_grid(-5.0, float(np.max(j[np.isfinite(j)])) + 5)
    g, v = _sup_curve(curve, grid, gammas)
    return BoundResult(v, {"gamma": g}, "lossy-sc-improved" if added_term else "lossy-sc-kv", FLOAT)


def lossy_sc_improved_bound(source: Distribution, M=None, level=0.0, d=None, tilted=None, gammas=None,
                            log2M=None) -> BoundResult:
    """Further improvement: 2^-gamma replaced by sup_shat 2^-gamma sum_s P_S 2^j 1{d(s,shat) <= level}."""
    lm = _resolve_log2M(M, log2M)
    ps, d, level, j = _source_parts(source, d, level, tilted)
    curve = _lossy_curve(ps, d, level, j, lm, "further")
    grid = gamma_grid(-5.0, float(np.max(j[np.isfinite(j)])) + 5)
    g, v = _sup_curve(curve, grid, gammas)
    return BoundResult(v, {"gamma": g}, "lossy-sc-further", FLOAT)


# ---------------------------------------------------------------------------
# channel coding


def _channel_values(P: np.ndarray, pybar: np.ndarray, log2M: float, gammas, added: bool) -> np.ndarray:
    out = []
    for g in np.atleast_1d(np.asarray(gammas, dtype=float)):
        z = pybar * 2.0 ** (log2M - g)  # Pbar(y) M 2^-gamma
        ind = P <= z[None, :]  # 1{i(x;y) <= log M - gamma}
        per = (P * ind).sum(axis=1)
        if added:
            per = per + (z[None, :] * ~ind).sum(axis=1)
        out.append(float(per.min()) - 2.0 ** -g)
    return np.array(out)


def _channel_setup(channel, pybar):
    P = np.asarray(getattr(channel, "matrix", channel), dtype=float)
    nY = P.shape[1]
    pyb = np.full(nY, 1.0 / nY) if pybar is None else np.asarray(pybar, dtype=float)
    if np.any((pyb == 0)[None, :] & (P > 0)):
        raise BoundDomainError("Pbar must be positive wherever the channel is")
    return P, pyb


def wolfowitz_bound(channel, M=None, pybar=None, gammas=None, log2M=None) -> BoundResult:
    """sup_gamma {inf_x P[i(x;Y) <= log M - gamma] - 2^-gamma}."""
    lm = _resolve_log2M(M, log2M)
    P, pyb = _channel_setup(channel, pybar)
    with np.errstate(divide="ignore"):
        i = np.log2(P) - np.log2(pyb)[None, :]
    breaks = np.unique(lm - i[np.isfinite(i)])
    g, v = _dense_sup(lambda gs: _channel_values(P, pyb, lm, gs, False), breaks,
                      gamma_grid(-5.0, lm + 5), gammas, refine=False)
    return BoundResult(v, {"gamma": g}, "wolfowitz", FLOAT)


def channel_improved_bound(channel, M=None, pybar=None, gammas=None, log2M=None) -> BoundResult:
    """Wolfowitz plus M 2^-gamma sum_y Pbar(y) 1{i(x;y) > log M - gamma} inside the inf over x."""
    lm = _resolve_log2M(M, log2M)
    P, pyb = _channel_setup(channel, pybar)
    with np.errstate(divide="ignore"):
        i = np.log2(P) - np.log2(pyb)[None, :]
    breaks = np.unique(lm - i[np.isfinite(i)])
    g, v = _dense_sup(lambda gs: _channel_values(P, pyb, lm, gs, True), breaks,
                      gamma_grid(-5.0, lm + 5), gammas, refine=True)
    return BoundResult(v, {"gamma": g}, "wolfowitz-improved", FLOAT)


def bsc_channel_bound(n: int, eps, M=None, log2M=None, family: str = "improved", gammas=None) -> BoundResult:
    """Wolfowitz ("wolfowitz") or improved ("improved") bound for BSC(eps)^n, uniform Pbar, by weight class."""
    e = float(eps)
    if not 0 < e < 0.5:
        raise BoundDomainError("need 0 < eps < 1/2")
    if family not in ("wolfowitz", "improved"):
        raise BoundDomainError(f"unknown family {family!r}")
    lm = _resolve_log2M(M, log2M)
    a = np.arange(n + 1)
    logw = BinomialKit.log_comb(n, a)
    logp = a * math.log(e) + (n - a) * math.log1p(-e)
    logc = np.full(n + 1, (lm - n) * LN2)  # Pbar M = M 2^-n
    curve = _MinCurve(logw, logp, logc, 0.0, truncated=(family == "wolfowitz"))
    g, v = _sup_curve(curve, gamma_grid(-5.0, lm + 5), gammas)
    return BoundResult(v, {"gamma": g}, f"bsc-{'wolfowitz' if family == 'wolfowitz' else 'wolfowitz-improved'}",
                       FLOAT)


def ns_value(channel, M: int, z) -> float:
    """min_x sum_y [min(z_y, P(y|x)) - z_y / M]; any z gives a lower bound on OPT(LP')."""
    P = np.asarray(getattr(channel, "matrix", channel), dtype=float)
    z = np.asarray(z, dtype=float)
    return float((np.minimum(z[None, :], P) - z[None, :] / M).sum(axis=1).min())


def ppv_via_lp_prime(inst: ProblemInstance, mode: str | None = None) -> BoundResult:
    """OPT(LP') by the simplex solver; for channel coding this is the non-signaling value."""
    from .lp_relaxation import build_lp_prime
    from .simplex_solver import OPTIMAL, solve

    if not inst.loss.is_excess or float(inst.loss.level) != 0:
        raise BoundDomainError("ppv_via_lp_prime expects a channel-coding instance")
    sol = solve(build_lp_prime(inst), mode=mode or FLOAT)
    if sol.status != OPTIMAL:
        raise BoundDomainError(f"LP' not solved to optimality: {sol.status}")
    value = to_fraction(sol.value) if sol.mode == RATIONAL else float(sol.value)
    return BoundResult(value, {"iterations": sol.iterations}, "ppv-lp-prime", sol.mode)


# ---------------------------------------------------------------------------
# BMS over BSC, and BMS lossy source coding


def _floor_level(k: int, level: float) -> int:
    return int(math.floor(k * float(level) + 1e-9))


def _bms_checks(k: int, p: float, level: float):
    if k < 1:
        raise BoundDomainError("need k >= 1")
    if not 0 < p <= 0.5:
        raise BoundDomainError("need 0 < p <= 1/2")
    if not 0 <= level < p:
        raise BoundDomainError(f"need 0 <= level < p (level={level}, p={p})")


def _bms_weights(k: int, p: float, level: float):
    b = np.arange(k + 1)
    logPb = b * math.log(p) + (k - b) * math.log1p(-p)
    jb = k * h2(p) - k * h2(level) + (b - k * p) * math.log2((1 - p) / p)  # j_S by weight class
    return b, logPb, np.asarray(jb, dtype=float)


def _bms_logK(k: int, level: float) -> float:
    """ln of 2^{-kH(level)} sum_{a <= floor(k level)} C(k, a)."""
    return -k * h2(level) * LN2 + BinomialKit.log_tail(k, _floor_level(k, level))


def _log_pow_n(n: int, eps: float, r) -> float:
    """ln eps^r (1-eps)^(n-r)."""
    return r * math.log(eps) + (n - r) * math.log1p(-eps)


def bus_bsc_r_value(n: int, k: int, eps: float, level: float, r: int, family: str = "hypothesis") -> float:
    """Integer-r form for p = 1/2:
    1 - sum_{a<=r} C(n,a) eps^a(1-eps)^{n-a} + eps^{r+1}(1-eps)^{n-r-1}[sum_{a<=r} C(n,a) - 2^{n-k} Q],
    with Q = sum_{a<=floor(k level)} C(k,a) (hypothesis) or 2^{kH(level)} (improved)."""
    cdf = math.exp(BinomialKit.log_binom_cdf(n, r, eps)) if r >= 0 else 0.0
    lf = _log_pow_n(n, eps, r + 1)
    lt = BinomialKit.log_tail(n, r)
    if family == "hypothesis":
        lq = BinomialKit.log_tail(k, _floor_level(k, level))
    elif family == "improved":
        lq = k * h2(level) * LN2
    else:
        raise BoundDomainError(f"unknown r-form family {family!r}")
    with np.errstate(over="ignore"):
        pos = math.exp(lf + lt) if lt > -math.inf else 0.0
        neg = float(np.exp(lf + (n - k) * LN2 + lq))
    return (1.0 - cdf) + pos - neg


def bus_bsc_gamma_of_r(n: int, k: int, eps: float, level: float, r) -> float:
    """gamma with r = n eps + theta - 1 at p = 1/2."""
    L = math.log2((1 - eps) / eps)
    return k * (1 - h2(level)) - n * (1 + math.log2(1 - eps)) + (r + 1) * L


def bms_bsc_jscc_bound(k: int, n: int, p, eps, level, family: str = "improved", gammas=None,
                       r_range: tuple[int, int] | None = None) -> BoundResult:
    """BMS(p)^k over BSC(eps)^n with uniform Pbar and T = 1.

    family: "kv" (original), "improved", "tighter" (further improvement), or
    "hypothesis" (p = 1/2, integer r form; r ranges over [-1, n] unless given).
    """
    p, e, level = float(p), float(eps), float(level)
    _bms_checks(k, p, level)
    if not 0 < e < 0.5:
        raise BoundDomainError("need 0 < eps < 1/2")
    if family == "hypothesis":
        if p != 0.5:
            raise BoundDomainError("the hypothesis family is stated for p = 1/2")
        lo, hi = r_range if r_range is not None else (-1, n)
        rs = list(range(int(lo), int(hi) + 1))
        vals = [bus_bsc_r_value(n, k, e, level, r) for r in rs]
        i = int(np.argmax(vals))
        return BoundResult(vals[i], {"r": rs[i], "gamma": bus_bsc_gamma_of_r(n, k, e, level, rs[i])},
                           "bms-bsc-hypothesis", FLOAT)
    if family not in ("kv", "improved", "tighter"):
        raise BoundDomainError(f"unknown family {family!r}")
    b, logPb, jb = _bms_weights(k, p, level)
    a = np.arange(n + 1)
    la = _log_pow_n(n, e, a.astype(float))
    logw = (BinomialKit.log_comb(k, b)[:, None] + BinomialKit.log_comb(n, a)[None, :])
    logp = logPb[:, None] + la[None, :]
    logc = logPb[:, None] + ((jb - n) * LN2)[:, None] + np.zeros((1, n + 1))
    logK = _bms_logK(k, level) if family == "tighter" else 0.0
    curve = _MinCurve(logw, logp, logc, logK, truncated=(family == "kv"))
    C = 1 - h2(e)
    grid = gamma_grid(-5.0, k * (h2(p) - h2(level)) + n * C + 5)
    g, v = _sup_curve(curve, grid, gammas)
    return BoundResult(v, {"gamma": g}, f"bms-bsc-{family}", FLOAT)


def bms_sc_t_value(k: int, p: float, log2M: float, level: float, t: int) -> float:
    """1 - sum_{j<=t} C(k,j)p^j(1-p)^{k-j} + p^{t+1}(1-p)^{k-t-1}[sum_{j<=t} C(k,j) - M sum_{j<=floor(k level)} C(k,j)]."""
    cdf = math.exp(BinomialKit.log_binom_cdf(k, t, p)) if t >= 0 else 0.0
    lf = _log_pow_n(k, p, t + 1)
    lt = BinomialKit.log_tail(k, t)
    lq = BinomialKit.log_tail(k, _floor_level(k, level))
    with np.errstate(over="ignore"):
        pos = math.exp(lf + lt) if lt > -math.inf else 0.0
        neg = float(np.exp(lf + log2M * LN2 + lq))
    return (1.0 - cdf) + pos - neg


def bms_sc_bound(k: int, p, M=None, level=0.0, family: str = "improved", gammas=None, log2M=None,
                 t_range: tuple[int, int] | None = None) -> BoundResult:
    """Lossy source coding of BMS(p)^k with M codewords.

    family: "kv" (Kostina-Verdu), "improved", "further", or "hypothesis"
    (integer t form; t ranges over [-1, k] unless given).
    """
    p, level = float(p), float(level)
    _bms_checks(k, p, level)
    lm = _resolve_log2M(M, log2M)
    if family == "hypothesis":
        lo, hi = t_range if t_range is not None else (-1, k)
        ts = list(range(int(lo), int(hi) + 1))
        vals = [bms_sc_t_value(k, p, lm, level, t) for t in ts]
        i = int(np.argmax(vals))
        return BoundResult(vals[i], {"t": ts[i]}, "bms-sc-hypothesis", FLOAT)
    if family not in ("kv", "improved", "further"):
        raise BoundDomainError(f"unknown family {family!r}")
    b, logPb, jb = _bms_weights(k, p, level)
    logw = BinomialKit.log_comb(k, b) + logPb
    logp = np.zeros(k + 1)
    logc = (jb - lm) * LN2
    logK = _bms_logK(k, level) if family == "further" else 0.0
    curve = _MinCurve(logw, logp, logc, logK, truncated=(family == "kv"))
    grid = gamma_grid(-5.0, k * (h2(p) - h2(level)) + 5)
    g, v = _sup_curve(curve, grid, gammas)
    return BoundResult(v, {"gamma": g}, f"bms-sc-{family}", FLOAT)


# ---------------------------------------------------------------------------
# hypothesis-test forms solved for lambda


def _frac(x) -> Fraction:
    return Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def _lambda_root(n: int, prob: Fraction, delta: Fraction):
    """r* = max{r : P[Bin(n, prob) <= r] <= 1 - delta} and lambda in [0, 1) solving the linear equation."""
    target = 1 - delta
    cdf = Fraction(0)
    r = -1
    for t in range(n + 1):
        nxt = cdf + math.comb(n, t) * prob**t * (1 - prob) ** (n - t)
        if nxt > target:
            break
        cdf, r = nxt, t
    if r >= n:
        raise BoundDomainError("1 - delta is at least the total mass; no root")
    head = prob ** (r + 1) * (1 - prob) ** (n - r - 1) * math.comb(n, r + 1)
    lam = (target - cdf) / head
    return r, lam


def bus_bsc_hypothesis_test(n: int, k: int, eps, level, delta) -> dict:
    """Necessary condition lam C(n, r*+1) + sum_{j<=r*} C(n,j) <= 2^{n-k} sum_{j<=floor(k level)} C(k,j)
    for any BUS-BSC code with excess distortion probability at most delta."""
    e, dl = _frac(eps), _frac(delta)
    r, lam = _lambda_root(n, e, dl)
    lhs = lam * math.comb(n, r + 1) + sum(math.comb(n, j) for j in range(r + 1))
    rhs = Fraction(2**n, 2**k) * BinomialKit.tail_exact(k, _floor_level(k, float(level)))
    return {"r_star": r, "lambda": lam, "lhs": lhs, "rhs": rhs, "feasible": lhs <= rhs}


def bms_sc_min_codewords(k: int, p, level, delta) -> dict:
    """M >= (sum_{j<=t*} C(k,j) + lam C(k, t*+1)) / sum_{j<=floor(k level)} C(k,j)."""
    pp, dl = _frac(p), _frac(delta)
    t, lam = _lambda_root(k, pp, dl)
    num = sum(math.comb(k, j) for j in range(t + 1)) + lam * math.comb(k, t + 1)
    den = BinomialKit.tail_exact(k, _floor_level(k, float(level)))
    return {"t_star": t, "lambda": lam, "M_min": Fraction(num) / den}


# ---------------------------------------------------------------------------
# matched q-ary case


def qary_matched_bound(n: int, q: int, eps, mode: str = RATIONAL) -> BoundResult:
    """sum_{k=0}^n (k/n) Nbar_k Pbar(k/n), Nbar_k = C(n,k)(q-1)^k, Pbar(k/n) = (eps/(q-1))^k (1-eps)^{n-k}."""
    if n < 1 or q < 2:
        raise BoundDomainError("need n >= 1 and q >= 2")
    if mode == RATIONAL:
        e = _frac(eps)
        one = Fraction(1)
    else:
        e = float(eps)
        one = 1.0
    if not 0 < e < 1 - one / q:
        raise BoundDomainError("need 0 < eps < 1 - 1/q")
    total = 0 * one
    for k in range(n + 1):
        total += (k * one / n) * math.comb(n, k) * (q - 1) ** k * (e / (q - 1)) ** k * (1 - e) ** (n - k)
    return BoundResult(total, {}, "qary-matched", mode)


# ---------------------------------------------------------------------------
# sweeps


def _run_one(args):
    fn, params = args
    return fn(**params)


def sweep(family: str, fn: Callable[..., BoundResult], grid: Sequence[dict], jobs: int = 1) -> list[dict]:
    """Evaluate ``fn`` on every parameter dict; rows come back in grid order."""
    tasks = [(fn, dict(p)) for p in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    rows = []
    for params, res in zip(grid, results):
        row = {"family": family, "n": params.get("n", ""), "k": params.get("k", "")}
        for key in sorted(params):
            if key not in ("n", "k"):
                row[key] = params[key]
        row["value"] = float(res.value)
        for key in sorted(res.witness):
            row[f"witness_{key}"] = res.witness[key]
        rows.append(row)
    return rows


def write_csv(rows: Iterable[dict], path) -> None:
    """Columns: family, n, k, the other parameters, value, then witness_*.  ``path`` may be a file object."""
    rows = list(rows)
    cols: list[str] = []
    for r in rows:
        for key in r:
            if key not in cols:
                cols.append(key)
    head = [c for c in ("family", "n", "k") if c in cols]
    wit = [c for c in cols if c.startswith("witness_")]
    mid = [c for c in cols if c not in head and c not in wit and c != "value"]
    order = head + mid + ["value"] + wit

    def emit(fh):
        w = csv.DictWriter(fh, fieldnames=order, restval="", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)

    if hasattr(path, "write"):
        emit(path)
    else:
        with open(path, "w", newline="") as fh:
            emit(fh)


__all__ = [
    "BoundResult", "BinomialKit", "BoundDomainError", "l_factor", "tail_sandwich", "gamma_grid",
    "bsc_naive_bound", "bsc_strong_bound", "bsc_strong_closed", "bsc_strong_objective",
    "kv_improved_general_bound", "kv_improved_t1_bound", "further_improved_bound", "kv_pointwise",
    "lossy_sc_bound", "lossy_sc_improved_bound", "wolfowitz_bound", "channel_improved_bound",
    "bsc_channel_bound", "ns_value", "ppv_via_lp_prime", "bms_bsc_jscc_bound", "bus_bsc_r_value",
    "bus_bsc_gamma_of_r", "bms_sc_bound", "bms_sc_t_value", "bus_bsc_hypothesis_test",
    "bms_sc_min_codewords", "qary_matched_bound", "sweep", "write_csv",
]
