"""Dual-feasible points of DP: representation, checker, objective, constructors.

DP has multipliers
    gamma_a(s), gamma_b(y), lam_a(s, shat, y), lam_b(x, s, y), mu(s, x, y, shat) >= 0
and constraints, for every index,
    D1  gamma_a(s) - sum_y lam_b(x,s,y) - sum_{y,shat} mu <= 0
    D2  gamma_b(y) - sum_s lam_a(s,shat,y) - sum_{s,x} mu <= 0
    D3  lam_a(s,shat,y) + lam_b(x,s,y) + mu(s,x,y,shat) <= kappa P_S(s) P(y|x)
with objective sum gamma_a + sum gamma_b - sum mu.  Every lower bound on the
optimal loss built here is the objective of such a point.

Multiplier arrays may carry singleton axes (numpy broadcasting) when they do
not depend on an index; the BSC certificates use this to stay small.  Information
quantities (j, gamma) are in bits, so exp(j - gamma) reads 2**(j - gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from gmpy2 import mpq

from .core_model import (
    FLOAT,
    RATIONAL,
    ChannelKernel,
    DimensionMismatch,
    ProblemInstance,
    _encode_array,
    as_array,
    bsc,
    channel_coding_instance,
    exact,
    hamming_matrix,
    memoryless_product,
    mode_of,
    resolve_mode,
    scalar,
    to_fraction,
    zeros,
)

# ---------------------------------------------------------------------------
# representation


@dataclass(frozen=True)
class DualPoint:
    gamma_a: np.ndarray
    gamma_b: np.ndarray
    lam_a: np.ndarray
    lam_b: np.ndarray
    mu: np.ndarray | None = None

    @property
    def mode(self) -> str:
        return mode_of(self.gamma_a, self.gamma_b, self.lam_a, self.lam_b, self.mu)

    def full(self, inst: ProblemInstance) -> "DualPoint":
        """Copy with every array expanded to its full index shape."""
        nS, nX, nY, nH = inst.shape
        mu = self.mu
        if mu is None:
            mu = zeros((nS, nX, nY, nH), self.mode)
        return DualPoint(np.broadcast_to(self.gamma_a, (nS,)).copy(),
                         np.broadcast_to(self.gamma_b, (nY,)).copy(),
                         np.broadcast_to(self.lam_a, (nS, nH, nY)).copy(),
                         np.broadcast_to(self.lam_b, (nX, nS, nY)).copy(),
                         np.broadcast_to(mu, (nS, nX, nY, nH)).copy())

    def with_(self, **kw) -> "DualPoint":
        return replace(self, **kw)

    def to_dict(self, inst: ProblemInstance) -> dict:
        f = self.full(inst)
        return {k: _encode_array(np.asarray(getattr(f, k))) for k in ("gamma_a", "gamma_b", "lam_a", "lam_b", "mu")}

    @staticmethod
    def from_dict(d: dict) -> "DualPoint":
        def arr(v):
            flat = np.array(v, dtype=object)
            mode = RATIONAL if any(isinstance(x, str) for x in flat.reshape(-1)) else FLOAT
            return as_array(flat, mode) if mode == RATIONAL else np.array(v, dtype=float)
        mu = d.get("mu")
        return DualPoint(arr(d["gamma_a"]), arr(d["gamma_b"]), arr(d["lam_a"]), arr(d["lam_b"]),
                         None if mu is None else arr(mu))


def zero_point(inst: ProblemInstance, mode: str | None = None) -> DualPoint:
    mode = mode or inst.mode
    nS, nX, nY, nH = inst.shape
    return DualPoint(zeros(nS, mode), zeros(nY, mode), zeros((nS, nH, nY), mode), zeros((nX, nS, nY), mode))


# ---------------------------------------------------------------------------
# checking


FAMILIES = ("D1", "D2", "D3", "mu>=0")


@dataclass(frozen=True)
class FeasibilityReport:
    residuals: dict
    witness: dict
    tol: float
    feasible: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "feasible", all(float(r) <= self.tol for r in self.residuals.values()))

    @property
    def worst(self):
        return max(self.residuals.values(), key=float)

    def violations(self) -> list[str]:
        return [f"{k} residual {float(v):.3g} at {self.witness[k]}" for k, v in self.residuals.items()
                if float(v) > self.tol]


def _sum_axis(a: np.ndarray, axis: int, n: int) -> np.ndarray:
    if a.shape[axis] == 1:
        return a * n
    return a.sum(axis=axis, keepdims=True)


def _argmax(a: np.ndarray):
    a = np.asarray(a)
    if a.dtype == object:
        flat = a.reshape(-1)
        k = max(range(len(flat)), key=lambda i: flat[i])
    else:
        k = int(np.argmax(a))
    return np.unravel_index(k, a.shape), a.reshape(-1)[k]


def _check_shapes(inst: ProblemInstance, dp: DualPoint):
    nS, nX, nY, nH = inst.shape
    want = {"gamma_a": (nS,), "gamma_b": (nY,), "lam_a": (nS, nH, nY), "lam_b": (nX, nS, nY),
            "mu": (nS, nX, nY, nH)}
    for name, shape in want.items():
        a = getattr(dp, name)
        if a is None:
            continue
        a = np.asarray(a)
        if a.ndim != len(shape) or any(d not in (1, w) for d, w in zip(a.shape, shape)):
            raise DimensionMismatch(f"{name} has shape {a.shape}, expected broadcastable to {shape}")


def _rhs_parts(inst: ProblemInstance):
    kap = inst.loss.broadcast()
    return kap, inst.source.mass, inst.channel.matrix


def _d3(inst: ProblemInstance, dp: DualPoint):
    """max over (s,x,y,shat) of lam_a + lam_b + mu - kappa P_S P, with its index."""
    nS, nX, nY, nH = inst.shape
    kap, ps, P = _rhs_parts(inst)
    la = np.asarray(dp.lam_a)
    lb = np.asarray(dp.lam_b)
    mu = None if dp.mu is None else np.asarray(dp.mu)
    factored = kap.shape[1] == 1 and kap.shape[2] == 1
    best, where = None, None
    for s in range(nS):
        lbs = np.broadcast_to(lb[:, s if lb.shape[1] > 1 else 0, :], (nX, nY))
        las = np.broadcast_to(la[s if la.shape[0] > 1 else 0], (nH, la.shape[2]))
        ks = kap[s if kap.shape[0] > 1 else 0]
        if mu is None and factored and la.shape[2] == 1:
            krow = np.broadcast_to(ks[0, 0], (nH,))
            cache = {}
            for h in range(nH):
                c = krow[h]
                if c not in cache:
                    cache[c] = _argmax(lbs - (c * ps[s]) * P)
                (x, y), m = cache[c]
                r = las[h, 0] + m
                if best is None or r > best:
                    best, where = r, (s, int(x), int(y), h)
            continue
        ksf = np.broadcast_to(ks, (nX, nY, nH))
        las_t = np.broadcast_to(las.T, (nY, nH))
        mus = 0 if mu is None else np.broadcast_to(mu[s if mu.shape[0] > 1 else 0], (nX, nY, nH))
        if nX * nY * nH <= 2**22:
            chunk = lbs[:, :, None] + las_t[None, :, :] + mus - ksf * ps[s] * P[:, :, None]
            (x, y, h), r = _argmax(chunk)
            if best is None or r > best:
                best, where = r, (s, int(x), int(y), int(h))
        else:
            for h in range(nH):
                m_h = 0 if mu is None else mus[:, :, h]
                chunk = lbs + las_t[None, :, h] + m_h - ksf[:, :, h] * ps[s] * P
                (x, y), r = _argmax(chunk)
                if best is None or r > best:
                    best, where = r, (s, int(x), int(y), h)
    return best, where


def check(inst: ProblemInstance, dp: DualPoint, tol: float = 1e-10) -> FeasibilityReport:
    """Worst residual of each DP constraint family (positive means violated)."""
    _check_shapes(inst, dp)
    nS, nX, nY, nH = inst.shape
    exact_mode = dp.mode == RATIONAL and inst.mode == RATIONAL
    if exact_mode:
        tol = 0
    ga = np.asarray(dp.gamma_a)
    gb = np.asarray(dp.gamma_b)
    la = np.asarray(dp.lam_a)
    lb = np.asarray(dp.lam_b)
    mu = dp.mu
    res, wit = {}, {}
    # D1 over (x, s)
    d1 = ga[None, :] - _sum_axis(lb, 2, nY)[:, :, 0]
    if mu is not None:
        m = _sum_axis(_sum_axis(np.asarray(mu), 2, nY), 3, nH)[:, :, 0, 0]  # (S, X)
        d1 = d1 - m.T
    d1 = np.broadcast_to(d1, (nX, nS))
    (x, s), res["D1"] = _argmax(d1)
    wit["D1"] = {"s": int(s), "x": int(x)}
    # D2 over (shat, y)
    d2 = gb[None, :] - _sum_axis(la, 0, nS)[0]
    if mu is not None:
        m = _sum_axis(_sum_axis(np.asarray(mu), 0, nS), 1, nX)[0, 0]  # (Y, H)
        d2 = d2 - m.T
    d2 = np.broadcast_to(d2, (nH, nY))
    (h, y), res["D2"] = _argmax(d2)
    wit["D2"] = {"shat": int(h), "y": int(y)}
    r3, w3 = _d3(inst, dp)
    res["D3"] = r3
    wit["D3"] = dict(zip(("s", "x", "y", "shat"), w3))
    if mu is None:
        res["mu>=0"] = scalar(0, RATIONAL if exact_mode else FLOAT)
        wit["mu>=0"] = None
    else:
        idx, v = _argmax(-np.asarray(mu))
        res["mu>=0"] = v
        wit["mu>=0"] = dict(zip(("s", "x", "y", "shat"), (int(i) for i in idx)))
    if exact_mode:
        res = {k: to_fraction(v) for k, v in res.items()}
    else:
        res = {k: float(v) for k, v in res.items()}
    return FeasibilityReport(res, wit, tol)


def objective(inst: ProblemInstance, dp: DualPoint):
    """sum gamma_a + sum gamma_b - sum mu, over the full index sets."""
    nS, nX, nY, nH = inst.shape
    tot = np.broadcast_to(dp.gamma_a, (nS,)).sum() + np.broadcast_to(dp.gamma_b, (nY,)).sum()
    if dp.mu is not None:
        mu = np.asarray(dp.mu)
        tot = tot - mu.sum() * (nS * nX * nY * nH // mu.size)
    if dp.mode == RATIONAL:
        return to_fraction(tot)
    return float(tot)


def complete(lam_a, lam_b, nS: int, nY: int, mu=None) -> tuple[np.ndarray, np.ndarray]:
    """Largest gamma_a, gamma_b allowed by D1/D2 given the lambdas (mu taken as 0)."""
    if mu is not None:
        raise NotImplementedError("completion with nonzero mu is not used by any constructor")
    lb = np.asarray(lam_b)
    la = np.asarray(lam_a)
    sb = _sum_axis(lb, 2, nY)[:, :, 0]  # (X or 1, S or 1)
    ga = np.array([min(col) for col in sb.T], dtype=sb.dtype) if sb.dtype == object else sb.min(axis=0)
    sa = _sum_axis(la, 0, nS)[0]  # (H or 1, Y or 1)
    gb = np.array([min(col) for col in sa.T], dtype=sa.dtype) if sa.dtype == object else sa.min(axis=0)
    return np.broadcast_to(ga, (nS,)).copy(), np.broadcast_to(gb, (nY,)).copy()


# ---------------------------------------------------------------------------
# BSC certificates (messages over BSC^n, loss 1{s != shat})


def bsc_instance(n: int, eps, M: int, mode: str | None = None) -> ProblemInstance:
    """M equiprobable messages over n uses of BSC(eps)."""
    mode = resolve_mode(mode, M * M * 4**n)
    return channel_coding_instance(memoryless_product(bsc(eps, mode), n, cap=2**24), M)


def _bsc_domain(n: int, eps, M: int):
    if n < 1 or M < 1:
        raise ValueError("need n >= 1 and M >= 1")
    if not 0 <= eps < 0.5:
        raise ValueError("need 0 <= eps < 1/2")


def _bsc_lam_a(M: int, c, mode: str) -> np.ndarray:
    la = zeros((M, M, 1), mode)
    for s in range(M):
        la[s, s, 0] = -c
    return la


def bsc_naive(n: int, eps, M: int, mode: str | None = None) -> DualPoint:
    """lam_b = P_S P(y|x), lam_a = -(1-eps)^n 1{s=shat}/M; objective 1 - (1-eps)^n 2^n / M."""
    _bsc_domain(n, eps, M)
    mode = resolve_mode(mode, M * M * 4**n)
    e = scalar(eps, mode)
    one = scalar(1, mode)
    P = memoryless_product(bsc(e, mode), n, cap=2**24).matrix
    lb = (P / M)[:, None, :] if mode == FLOAT else (P * mpq(1, M))[:, None, :]
    la = _bsc_lam_a(M, (one - e) ** n / M, mode)
    ga, gb = complete(la, lb, M, 2**n)
    return DualPoint(ga, gb, la, lb)


def _strong_factor(n: int, eps, delta, mode: str):
    """(eps/(1-eps))^{n(eps-delta)}; exact only when n(eps-delta) is an integer."""
    tau = n * (exact(eps) - exact(delta)) if mode == RATIONAL else n * (float(eps) - float(delta))
    if mode == RATIONAL:
        if tau.denominator != 1:
            raise ValueError("rational bsc_strong needs n(eps - delta) to be an integer")
        r = exact(eps) / (1 - exact(eps))
        return tau, r ** int(tau)
    r = float(eps) / (1 - float(eps))
    return tau, r**tau


def bsc_strong(n: int, eps, delta, M: int, mode: str | None = None) -> DualPoint:
    """Strong-converse certificate: lambdas clipped at distance n(eps - delta)."""
    _bsc_domain(n, eps, M)
    if not 0 < delta < eps:
        raise ValueError("need 0 < delta < eps")
    mode = resolve_mode(mode, M * M * 4**n)
    if mode == RATIONAL:
        e = exact(eps)
        tau, rt = _strong_factor(n, eps, delta, mode)
        base = (1 - e) ** n / M
        P = memoryless_product(bsc(e, mode), n, cap=2**24).matrix
        clip = base * rt
        lb = np.array([[min(p / M, clip) for p in row] for row in P], dtype=object)
    else:
        e = float(eps)
        tau, rt = _strong_factor(n, eps, delta, mode)
        base = (1 - e) ** n / M
        d = hamming_matrix(2, n)
        r = e / (1 - e)
        lb = base * np.minimum(r ** d.astype(float), rt)
        clip = base * rt
    la = _bsc_lam_a(M, clip, mode)
    ga, gb = complete(la, lb[:, None, :], M, 2**n)
    return DualPoint(ga, gb, la, lb[:, None, :])


# ---------------------------------------------------------------------------
# Kostina-Verdu-type certificates


@dataclass(frozen=True)
class Decomposition:
    """P(y|x) = sum_t P(y|x,t) P(t|x) with auxiliary output laws Pbar(y|t)."""

    pv_x: np.ndarray  # (X, T)
    py_xv: np.ndarray  # (X, T, Y)
    pybar_v: np.ndarray  # (T, Y)

    @property
    def T(self) -> int:
        return self.pv_x.shape[1]

    @staticmethod
    def single(channel: ChannelKernel, pybar=None) -> "Decomposition":
        """T = 1 with the given output law (uniform by default)."""
        P = np.asarray(channel.matrix, dtype=float)
        nX, nY = P.shape
        pyb = np.full(nY, 1.0 / nY) if pybar is None else np.asarray(pybar, dtype=float)
        return Decomposition(np.ones((nX, 1)), P[:, None, :], pyb[None, :])

    def problems(self, channel: ChannelKernel, tol: float = 1e-12) -> list[str]:
        out = []
        P = np.asarray(channel.matrix, dtype=float)
        nX, nY = P.shape
        if self.pv_x.shape[0] != nX or self.py_xv.shape != (nX, self.T, nY) or self.pybar_v.shape != (self.T, nY):
            return [f"decomposition shapes {self.pv_x.shape}, {self.py_xv.shape}, {self.pybar_v.shape} "
                    f"do not fit a {nX}x{nY} channel"]
        mix = np.einsum("xt,xty->xy", self.pv_x, self.py_xv)
        if np.max(np.abs(mix - P)) > tol:
            out.append(f"mixture differs from the channel by {np.max(np.abs(mix - P)):.3g}")
        bad = (self.pybar_v[None, :, :] == 0) & (self.py_xv > 0)
        if bad.any():
            x, t, y = np.argwhere(bad)[0]
            out.append(f"Pbar(y={y}|t={t}) = 0 while P(y|x={x},t={t}) > 0")
        return out


def _excess_parts(inst: ProblemInstance):
    if not inst.loss.is_excess:
        raise ValueError("this certificate needs an excess-distortion loss 1{d(s,shat) > level}")
    d = np.asarray(inst.loss.distortion, dtype=float)
    return d, float(inst.loss.level)


def _kv_lams(inst: ProblemInstance, gamma: float, dec: Decomposition, j, truncated: bool):
    d, level = _excess_parts(inst)
    ps = np.asarray(inst.source.mass, dtype=float)
    j = np.asarray(j, dtype=float)
    if j.shape != ps.shape:
        raise DimensionMismatch(f"tilted information has shape {j.shape}, expected {ps.shape}")
    F = np.exp2(j - gamma)  # 2^{j(s) - gamma}
    thr = dec.pybar_v[None, None, :, :] * F[None, :, None, None]  # (1,S,T,Y)
    py = dec.py_xv[:, None, :, :]  # (X,1,T,Y)
    keep = py <= thr
    term = np.where(keep, py, 0.0 if truncated else thr)
    lb = ps[None, :, None] * np.einsum("xt,xsty->xsy", dec.pv_x, term)
    mass = dec.pybar_v.sum(axis=0)  # (Y,)
    la = -(ps * F)[:, None, None] * (d <= level)[:, :, None] * mass[None, None, :]
    return lb, la, mass


def kv_improved_general(inst: ProblemInstance, gamma: float, decomposition: Decomposition | None = None,
                        tilted=None, lam_star: float | None = None, truncated: bool = False,
                        tol: float = 1e-12) -> DualPoint:
    """Improved generalized Kostina-Verdu certificate (mu = 0).

    ``tilted`` is j_S(s, level) in bits (computed from the source when omitted);
    ``truncated`` keeps only the first indicator term of lam_b, which is the
    original Kostina-Verdu choice.  ``lam_star`` is accepted for bookkeeping.
    """
    dec = decomposition or Decomposition.single(inst.channel)
    bad = dec.problems(inst.channel, tol=max(tol, 1e-12))
    if bad:
        raise ValueError("; ".join(bad))
    if tilted is None:
        from .tilted_information import tilted_for_instance

        tilted = tilted_for_instance(inst).j
    lb, la, mass = _kv_lams(inst, float(gamma), dec, tilted, truncated)
    nS, nX, nY, nH = inst.shape
    ga, _ = complete(la, lb, nS, nY)
    gb = -(2.0 ** -float(gamma)) * mass
    return DualPoint(ga, gb, la, lb)


def further_improved(inst: ProblemInstance, gamma: float, decomposition: Decomposition | None = None,
                     tilted=None, lam_star: float | None = None, truncated: bool = False,
                     tol: float = 1e-12) -> DualPoint:
    """kv_improved_general with gamma_b raised to its D2-optimal value min_shat sum_s lam_a."""
    base = kv_improved_general(inst, gamma, decomposition, tilted, lam_star, truncated, tol)
    nS, nX, nY, nH = inst.shape
    _, gb = complete(base.lam_a, base.lam_b, nS, nY)
    return base.with_(gamma_b=gb)


# ---------------------------------------------------------------------------
# concave families and the matched certificate


@dataclass(frozen=True)
class Concave1D:
    """A concave function on [0, 1] with a chosen (super)derivative.

    ``exp``: g(m) = A B^m / ln B + offset, g'(m) = A B^m (B < 1 gives concavity).
    ``pwl``: linear interpolation of ``values`` at increasing ``knots``; the
    derivative is ``slopes[k]`` at a knot and the chord slope between knots.
    """

    kind: str
    A: float = 0.0
    B: float = 1.0
    knots: tuple = ()
    values: tuple = ()
    slopes: tuple = ()
    offset: object = 0

    def _locate(self, m):
        ks = self.knots
        if m < ks[0] or m > ks[-1]:
            raise ValueError(f"argument {m} outside [{ks[0]}, {ks[-1]}]")
        lo, hi = 0, len(ks) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ks[mid] <= m:
                lo = mid
            else:
                hi = mid
        return lo if ks[lo] == m else (hi if ks[hi] == m else None), lo

    def _one(self, m, deriv: bool):
        if self.kind == "exp":
            if self.A == 0:
                return 0.0 if deriv else self.offset
            v = self.A * self.B ** float(m)
            return v if deriv else v / math.log(self.B) + self.offset
        at, lo = self._locate(m)
        if at is not None:
            return self.slopes[at] if deriv else self.values[at] + self.offset
        ks, vs = self.knots, self.values
        chord = (vs[lo + 1] - vs[lo]) / (ks[lo + 1] - ks[lo])
        return chord if deriv else vs[lo] + chord * (m - ks[lo]) + self.offset

    def _map(self, m, deriv: bool):
        arr = np.asarray(m)
        if arr.ndim == 0:
            return self._one(arr[()], deriv)
        flat = arr.reshape(-1)
        cache = {}
        out = np.empty(len(flat), dtype=object if self.kind == "pwl" or arr.dtype == object else float)
        for i, v in enumerate(flat):
            if v not in cache:
                cache[v] = self._one(v, deriv)
            out[i] = cache[v]
        return out.reshape(arr.shape)

    def g(self, m):
        return self._map(m, False)

    def dg(self, m):
        return self._map(m, True)

    def shift(self, c) -> "Concave1D":
        return replace(self, offset=self.offset + c)


@dataclass(frozen=True)
class ConcaveFamily:
    """g_t indexed by a source statistic t; ``default`` serves every unlisted t."""

    members: dict = field(default_factory=dict)
    default: Concave1D | None = None

    def at(self, t) -> Concave1D:
        if t in self.members:
            return self.members[t]
        if self.default is None:
            raise KeyError(f"no concave function for parameter {t!r}")
        return self.default

    def shift(self, c) -> "ConcaveFamily":
        return ConcaveFamily({k: v.shift(c) for k, v in self.members.items()},
                             None if self.default is None else self.default.shift(c))

    @staticmethod
    def zero() -> "ConcaveFamily":
        return ConcaveFamily(default=Concave1D("exp", A=0.0, B=0.5))

    @staticmethod
    def exponential(A: float, B: float) -> "ConcaveFamily":
        if not 0 < B < 1:
            raise ValueError("need 0 < B < 1 for a concave exponential family")
        return ConcaveFamily(default=Concave1D("exp", A=float(A), B=float(B)))

    @staticmethod
    def piecewise(knots, values, slopes) -> "ConcaveFamily":
        ks = tuple(knots)
        if not all(a < b for a, b in zip(ks, ks[1:])):
            raise ValueError("knots must increase")
        return ConcaveFamily(default=Concave1D("pwl", knots=ks, values=tuple(values), slopes=tuple(slopes)))


def matched_family(q: int, n: int, eps, mode: str = FLOAT) -> ConcaveFamily:
    """g with g'(k/n) = Pbar(k/n)/|S| for the q-ary symmetric channel.

    Float mode uses the closed form A B^m / ln B.  Rational mode uses a
    piecewise-linear g with knots k/n, supergradient Pbar(k/n)/|S| at each knot
    and chord slopes between consecutive supergradients.
    """
    eps = exact(eps) if mode == RATIONAL else float(eps)
    if not 0 < eps < 1 - mpq(1, q):
        raise ValueError("need 0 < eps < 1 - 1/q")
    size = q**n
    if mode == FLOAT:
        e = float(eps)
        A = (1 - e) ** n / size
        B = (e / ((q - 1) * (1 - e))) ** n
        return ConcaveFamily.exponential(A, B)
    e = exact(eps)
    slopes = [(e / (q - 1)) ** k * (1 - e) ** (n - k) / size for k in range(n + 1)]
    knots = [mpq(k, n) for k in range(n + 1)]
    values = [mpq(0)]
    for k in range(n):
        chord = (slopes[k] + slopes[k + 1]) / 2
        values.append(values[-1] + chord * mpq(1, n))
    return ConcaveFamily.piecewise(knots, values, slopes)


def _grid_problems(fn: Concave1D, a_vals, b_vals, bound, tol) -> list[str]:
    """Supergradient inequality g(b) <= g(a) + (b - a) g'(a) over a x b, and g' <= bound on a."""
    out = []
    for a in a_vals:
        ga, da = fn.g(a), fn.dg(a)
        if bound is not None and da > bound(a) + tol:
            out.append(f"derivative condition fails at m={a}")
        for b in b_vals:
            if fn.g(b) > ga + (b - a) * da + tol:
                out.append(f"concavity fails between {a} and {b}")
                break
        if len(out) > 5:
            break
    return out


def matched_concave(inst: ProblemInstance, g: ConcaveFamily, delta=None, dbar=None,
                    tol: float = 1e-12, full_grid: int = 512) -> DualPoint:
    """lam_a = g_{delta(s)}(d(s,shat)), lam_b = -g(dbar(x,y)) + dbar g'(dbar), mu = 0.

    ``delta`` maps each source symbol to a family key (one shared g by default),
    ``dbar`` is the channel statistic on X x Y (the loss matrix itself when
    X, Y have the shapes of S, Shat).  The derivative condition
    g'_{delta(s)}(dbar(x,y)) <= P_S(s) P(y|x) and concavity are certified on
    all achievable values (plus midpoints when the grid is small).
    """
    if not inst.loss.is_factored or inst.loss.is_excess:
        raise ValueError("matched_concave needs an expected-distortion loss kappa = d(s, shat)")
    nS, nX, nY, nH = inst.shape
    d = inst.loss.distortion
    if dbar is None:
        if d.shape != (nX, nY):
            raise ValueError("give dbar: the loss matrix does not have the X x Y shape")
        dbar = d
    dbar = np.asarray(dbar)
    if dbar.shape != (nX, nY):
        raise DimensionMismatch(f"dbar must be {nX}x{nY}")
    keys = [None] * nS if delta is None else list(delta)
    if len(keys) != nS:
        raise DimensionMismatch("delta must give one key per source symbol")
    groups = {}
    for s, t in enumerate(keys):
        groups.setdefault(t, []).append(s)
    exact_mode = (mode_of(d, dbar, inst.source.mass, inst.channel.matrix) == RATIONAL
                  and all(g.at(t).kind == "pwl" for t in groups))
    ps, P = inst.source.mass, inst.channel.matrix
    if not exact_mode:
        d, dbar = np.asarray(d, dtype=float), dbar.astype(float)
        ps, P = np.asarray(ps, dtype=float), np.asarray(P, dtype=float)
    mode = RATIONAL if exact_mode else FLOAT
    la = zeros((nS, nH, 1), mode)
    lb = zeros((nX, nS, nY), mode)
    t_tol = 0 if exact_mode else tol
    d_vals = sorted(set(np.asarray(d).reshape(-1).tolist()))
    m_vals = sorted(set(dbar.reshape(-1).tolist()))
    for t, ss in groups.items():
        fn = g.at(t)
        G = fn.g(dbar)
        D = fn.dg(dbar)
        pmin = min(ps[s] for s in ss)
        viol = D - pmin * P
        worst = viol.max() if viol.dtype != object else max(viol.reshape(-1))
        if worst > t_tol:
            raise ValueError(f"derivative condition violated by {float(worst):.3g} for parameter {t!r}")
        grid_b = d_vals
        grid_a = m_vals
        if len(set(d_vals) | set(m_vals)) <= full_grid:
            pts = sorted(set(d_vals) | set(m_vals))
            mids = [(a + b) / 2 for a, b in zip(pts, pts[1:])]
            grid_a = grid_b = sorted(set(pts) | set(mids))
        bad = _grid_problems(fn, grid_a, grid_b, None, t_tol)
        if bad:
            raise ValueError(f"parameter {t!r}: " + "; ".join(bad))
        col = -G + dbar * D
        for s in ss:
            lb[:, s, :] = col
            la[s, :, 0] = fn.g(d[s])
    ga, gb = complete(la, lb, nS, nY)
    return DualPoint(ga, gb, la, lb)


__all__ = [
    "DualPoint", "FeasibilityReport", "Concave1D", "ConcaveFamily", "Decomposition",
    "check", "objective", "complete", "zero_point", "bsc_instance", "bsc_naive", "bsc_strong",
    "kv_improved_general", "further_improved", "matched_family", "matched_concave",
]
