"""LP relaxations of the bilinear code-design program and lifts of codes into them.

A ``StandardFormLP`` is ``min c.v  s.t.  A v = b,  G v <= h`` with every
variable carrying an explicit ``-v <= 0`` row.  Dual multipliers follow the
Lagrangian ``c.v - y.(A v - b) - z.(G v - h)`` with ``z <= 0``, so dual
feasibility reads ``A^T y + G^T z = c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from gmpy2 import mpq

from .core_model import (
    DEFAULT_TUPLE_CAP,
    FLOAT,
    RATIONAL,
    CapExceeded,
    ProblemInstance,
    frozen,
    mode_of,
    scalar,
    zeros,
)

LP = "LP"
LP_PRIME = "LP_PRIME"


@dataclass(frozen=True)
class Family:
    """A block of variables or rows indexed by a product of named axes."""

    name: str
    axes: tuple[str, ...]
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    def index(self, *idx) -> int:
        return self.offset + int(np.ravel_multi_index(idx, self.shape)) if self.shape else self.offset

    def label(self, k: int) -> str:
        idx = np.unravel_index(k - self.offset, self.shape) if self.shape else ()
        inner = ",".join(f"{a}={int(i)}" for a, i in zip(self.axes, idx))
        return f"{self.name}[{inner}]"


class Catalog:
    """Ordered collection of families with contiguous index ranges."""

    def __init__(self):
        self.families: list[Family] = []
        self.size = 0

    def add(self, name: str, axes, shape) -> Family:
        fam = Family(name, tuple(axes), tuple(int(v) for v in shape), self.size)
        self.families.append(fam)
        self.size += fam.size
        return fam

    def __getitem__(self, name: str) -> Family:
        for f in self.families:
            if f.name == name:
                return f
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.families)

    def family_of(self, k: int) -> Family:
        for f in self.families:
            if f.offset <= k < f.offset + f.size:
                return f
        raise IndexError(k)

    def label(self, k: int) -> str:
        return self.family_of(k).label(k)

    def block(self, vec: np.ndarray, name: str) -> np.ndarray:
        f = self[name]
        return vec[f.offset:f.offset + f.size].reshape(f.shape)


@dataclass(frozen=True)
class Sparse:
    """COO matrix with integer coordinates and float, int or mpq values."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    shape: tuple[int, int]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = zeros(self.shape[0], mode_of(v, self.vals))
        if len(self.rows):
            np.add.at(out, self.rows, self.vals * v[self.cols])
        return out

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        out = zeros(self.shape[1], mode_of(y, self.vals))
        if len(self.rows):
            np.add.at(out, self.cols, self.vals * y[self.rows])
        return out

    def to_scipy(self):
        from scipy.sparse import csr_matrix

        return csr_matrix((self.vals.astype(float), (self.rows, self.cols)), shape=self.shape)


class SparseBuilder:
    def __init__(self):
        self.r: list[np.ndarray] = []
        self.c: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def put(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals), rows.shape).ravel()
        self.r.append(rows)
        self.c.append(cols)
        self.v.append(vals)

    def build(self, n_rows: int, n_cols: int) -> Sparse:
        if not self.r:
            e = np.zeros(0, dtype=np.int64)
            return Sparse(e, e, np.zeros(0, dtype=np.int64), (n_rows, n_cols))
        vals = self.v
        if any(v.dtype == object for v in vals):
            vals = [v.astype(object) for v in vals]
        rows = np.concatenate(self.r)
        cols = np.concatenate(self.c)
        order = np.lexsort((cols, rows))
        return Sparse(frozen(rows[order]), frozen(cols[order]), frozen(np.concatenate(vals)[order]),
                      (n_rows, n_cols))


@dataclass(frozen=True)
class StandardFormLP:
    tag: str
    variables: Catalog
    A: Sparse
    b: np.ndarray
    eq_rows: Catalog
    G: Sparse
    h: np.ndarray
    ineq_rows: Catalog
    c: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.variables.size

    @property
    def n_eq(self) -> int:
        return self.eq_rows.size

    @property
    def n_ineq(self) -> int:
        return self.ineq_rows.size

    @property
    def mode(self) -> str:
        return mode_of(self.c, self.b, self.h, self.A.vals, self.G.vals)

    def objective(self, v: np.ndarray):
        return (self.c * v).sum()

    def residuals(self, v: np.ndarray) -> tuple:
        """(max |A v - b|, max positive part of G v - h)."""
        r_eq = self.A.matvec(v) - self.b
        r_in = self.G.matvec(v) - self.h
        eq = max((abs(x) for x in r_eq), default=0)
        ineq = max((x for x in r_in), default=0)
        return eq, max(ineq, 0)

    def is_feasible(self, v: np.ndarray, tol: float = 1e-12) -> bool:
        eq, ineq = self.residuals(v)
        if self.mode == RATIONAL and mode_of(v) == RATIONAL:
            return eq == 0 and ineq == 0
        return float(eq) <= tol and float(ineq) <= tol


def from_dense(c, A_eq=None, b_eq=None, G=None, h=None, mode: str = FLOAT, names=None,
               nonneg: bool = True, tag: str = "GENERIC") -> StandardFormLP:
    """Assemble a StandardFormLP from dense matrices (small hand-written LPs)."""
    from .core_model import as_array

    c = as_array(c, mode)
    n = len(c)
    var = Catalog()
    var.add("v", ("j",), (n,))
    eq = Catalog()
    ineq = Catalog()
    ab, gb = SparseBuilder(), SparseBuilder()
    b = as_array([] if A_eq is None else b_eq, mode)
    if A_eq is not None:
        Ad = as_array(A_eq, mode).reshape(len(b), n)
        eq.add("eq", ("i",), (len(b),))
        r, cc = np.nonzero(np.array([[x != 0 for x in row] for row in Ad]))
        ab.put(r, cc, Ad[r, cc])
    hs = [] if G is None else list(as_array(h, mode))
    m_user = len(hs)
    if G is not None:
        Gd = as_array(G, mode).reshape(m_user, n)
        ineq.add("ineq", ("i",), (m_user,))
        r, cc = np.nonzero(np.array([[x != 0 for x in row] for row in Gd]))
        gb.put(r, cc, Gd[r, cc])
    if nonneg:
        ineq.add("nn", ("j",), (n,))
        gb.put(np.arange(m_user, m_user + n), np.arange(n), -1)
        hs = hs + [scalar(0, mode)] * n
    hv = as_array(hs, mode) if hs else zeros(0, mode)
    return StandardFormLP(tag, var, ab.build(eq.size, n), frozen(b), eq,
                          gb.build(ineq.size, n), frozen(hv), ineq, frozen(c))


# ---------------------------------------------------------------------------
# the relaxation of the code-design program


def _check_cap(inst: ProblemInstance, cap: int):
    if inst.n_tuples > cap:
        raise CapExceeded(f"{inst.n_tuples} outcome tuples exceed cap {cap}")


def _variables(inst: ProblemInstance) -> Catalog:
    nS, nX, nY, nH = inst.shape
    var = Catalog()
    var.add("Qx", ("s", "x"), (nS, nX))
    var.add("Qs", ("y", "shat"), (nY, nH))
    var.add("W", ("s", "x", "y", "shat"), (nS, nX, nY, nH))
    return var


def _objective(inst: ProblemInstance, var: Catalog) -> np.ndarray:
    mode = inst.mode
    c = zeros(var.size, mode)
    w = np.broadcast_to(inst.weight(), inst.shape)
    f = var["W"]
    c[f.offset:f.offset + f.size] = w.reshape(-1)
    return c


def _build(inst: ProblemInstance, tag: str, cap: int) -> StandardFormLP:
    _check_cap(inst, cap)
    mode = inst.mode
    nS, nX, nY, nH = inst.shape
    var = _variables(inst)
    qx, qs, W = var["Qx"], var["Qs"], var["W"]
    s, x, y, h = np.meshgrid(np.arange(nS), np.arange(nX), np.arange(nY), np.arange(nH), indexing="ij")
    wcol = W.offset + np.ravel_multi_index((s, x, y, h), W.shape)
    qxcol = qx.offset + np.ravel_multi_index((s, x), qx.shape)
    qscol = qs.offset + np.ravel_multi_index((y, h), qs.shape)

    eq = Catalog()
    enc = eq.add("enc", ("s",), (nS,))
    dec = eq.add("dec", ("y",), (nY,))
    la = eq.add("lam_a", ("s", "shat", "y"), (nS, nH, nY))
    lb = eq.add("lam_b", ("x", "s", "y"), (nX, nS, nY))
    A = SparseBuilder()
    ss, xx = np.meshgrid(np.arange(nS), np.arange(nX), indexing="ij")
    A.put(enc.offset + ss, qx.offset + np.ravel_multi_index((ss, xx), qx.shape), 1)
    yy, hh = np.meshgrid(np.arange(nY), np.arange(nH), indexing="ij")
    A.put(dec.offset + yy, qs.offset + np.ravel_multi_index((yy, hh), qs.shape), 1)
    la_row = la.offset + np.ravel_multi_index((s, h, y), la.shape)
    A.put(la_row, wcol, 1)
    s3, h3, y3 = np.meshgrid(np.arange(nS), np.arange(nH), np.arange(nY), indexing="ij")
    A.put(la.offset + np.ravel_multi_index((s3, h3, y3), la.shape),
          qs.offset + np.ravel_multi_index((y3, h3), qs.shape), -1)
    lb_row = lb.offset + np.ravel_multi_index((x, s, y), lb.shape)
    A.put(lb_row, wcol, 1)
    x3, s3, y3 = np.meshgrid(np.arange(nX), np.arange(nS), np.arange(nY), indexing="ij")
    A.put(lb.offset + np.ravel_multi_index((x3, s3, y3), lb.shape),
          qx.offset + np.ravel_multi_index((s3, x3), qx.shape), -1)
    b = zeros(eq.size, mode)
    one = scalar(1, mode)
    b[enc.offset:enc.offset + nS] = one
    b[dec.offset:dec.offset + nY] = one

    ineq = Catalog()
    G = SparseBuilder()
    hvals = []
    if tag == LP:
        mc = ineq.add("mc", ("s", "x", "y", "shat"), (nS, nX, nY, nH))
        mrow = mc.offset + np.ravel_multi_index((s, x, y, h), mc.shape)
        G.put(mrow, qxcol, 1)
        G.put(mrow, qscol, 1)
        G.put(mrow, wcol, -1)
        hvals.append(np.full(mc.size, 1, dtype=np.int64))
    for fam in var.families:
        nn = ineq.add("nn:" + fam.name, fam.axes, fam.shape)
        G.put(nn.offset + np.arange(fam.size), fam.offset + np.arange(fam.size), -1)
        hvals.append(np.zeros(fam.size, dtype=np.int64))
    hv = np.concatenate(hvals)
    if mode == RATIONAL:
        hv = np.array([mpq(int(v)) for v in hv], dtype=object)
    else:
        hv = hv.astype(float)
    return StandardFormLP(tag, var, A.build(eq.size, var.size), frozen(b), eq,
                          G.build(ineq.size, var.size), frozen(hv), ineq,
                          frozen(_objective(inst, var)),
                          meta={"shape": inst.shape})


def build_lp(inst: ProblemInstance, cap: int = DEFAULT_TUPLE_CAP * 16) -> StandardFormLP:
    """Relaxation with stochasticity, marginal-consistency, McCormick and sign rows."""
    return _build(inst, LP, cap)


def build_lp_prime(inst: ProblemInstance, cap: int = DEFAULT_TUPLE_CAP * 16) -> StandardFormLP:
    """Same as build_lp without the McCormick rows (the non-signalling relaxation)."""
    return _build(inst, LP_PRIME, cap)


def row_set(lp: StandardFormLP, kind: str = "all") -> set:
    """Rows as hashable (kind, sorted coefficients, rhs) keys, labelled by variable names."""
    out = set()
    mats = []
    if kind in ("all", "eq"):
        mats.append(("eq", lp.A, lp.b))
    if kind in ("all", "ineq"):
        mats.append(("le", lp.G, lp.h))
    for k, M, rhs in mats:
        rows = {}
        for r, c, v in zip(M.rows, M.cols, M.vals):
            rows.setdefault(int(r), []).append((lp.variables.label(int(c)), str(v)))
        for r in range(M.shape[0]):
            out.add((k, tuple(sorted(rows.get(r, []))), str(rhs[r])))
    return out


def is_row_subset(small: StandardFormLP, big: StandardFormLP) -> bool:
    """True when every row of ``small`` also appears in ``big`` (so FEA(big) is inside FEA(small))."""
    return row_set(small) <= row_set(big)


# ---------------------------------------------------------------------------
# lifted points


@dataclass(frozen=True)
class LiftedPoint:
    qx: np.ndarray
    qs: np.ndarray
    W: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.qx.reshape(-1), self.qs.reshape(-1), self.W.reshape(-1)])


def _stochastic(m: np.ndarray) -> bool:
    if any(v < 0 for v in m.reshape(-1)):
        return False
    sums = m.sum(axis=1)
    if m.dtype == object:
        return all(v == 1 for v in sums)
    return bool(np.all(np.abs(sums - 1) <= 1e-12))


def embed_code(inst: ProblemInstance, qx, qs, check: bool = True) -> LiftedPoint:
    """Product lift W(s,x,y,shat) = Q(x|s) Q(shat|y); feasibility in build_lp is asserted."""
    qx = np.asarray(qx)
    qs = np.asarray(qs)
    nS, nX, nY, nH = inst.shape
    if qx.shape != (nS, nX) or qs.shape != (nY, nH):
        raise ValueError("kernel shapes do not match the instance")
    if not (_stochastic(qx) and _stochastic(qs)):
        raise ValueError("encoder and decoder kernels must be row-stochastic")
    W = qx[:, :, None, None] * qs[None, None, :, :]
    pt = LiftedPoint(frozen(qx), frozen(qs), frozen(W))
    if check:
        lp = build_lp(inst)
        assert lp.is_feasible(pt.vector()), "product lift violates an LP row"
    return pt


def mccormick_check(w, x1, x2, bounds=((0, 1), (0, 1)), tol: float = 1e-12) -> bool:
    """True iff (w, x1, x2) satisfies the four McCormick envelope inequalities."""
    (l1, u1), (l2, u2) = bounds
    ok = (
        w <= u2 * x1 + l1 * x2 - l1 * u2 + tol,
        w <= l2 * x1 + u1 * x2 - u1 * l2 + tol,
        w >= u2 * x1 + u1 * x2 - u1 * u2 - tol,
        w >= l2 * x1 + l1 * x2 - l1 * l2 - tol,
    )
    return all(bool(v) for v in ok)


def active_rank(lp: StandardFormLP, v: np.ndarray, tol: float = 1e-12) -> int:
    """Rank of the equality rows together with the inequality rows tight at ``v``."""
    slack = lp.G.matvec(v) - lp.h
    tight = np.array([abs(float(t)) <= tol for t in slack])
    A = np.zeros(lp.A.shape)
    np.add.at(A, (lp.A.rows, lp.A.cols), lp.A.vals.astype(float))
    G = np.zeros(lp.G.shape)
    np.add.at(G, (lp.G.rows, lp.G.cols), lp.G.vals.astype(float))
    M = np.vstack([A, G[tight]])
    return int(np.linalg.matrix_rank(M))


# ---------------------------------------------------------------------------
# text export


def _fmt(v) -> str:
    if isinstance(v, mpq):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    return str(int(f)) if f.is_integer() else repr(f)


def _signed(v) -> str:
    s = _fmt(v)
    return s if s.startswith("-") else "+" + s


def lp_text(lp: StandardFormLP) -> str:
    """Fixed-layout listing, one row per line, variables by catalog name."""
    lines = [f"# tag={lp.tag} vars={lp.n_vars} eq={lp.n_eq} ineq={lp.n_ineq}"]
    terms = [f"{_signed(cv)} {lp.variables.label(j)}" for j, cv in enumerate(lp.c) if cv != 0]
    lines.append("min: " + (" ".join(terms) if terms else "0"))
    for kind, M, rhs, cat in (("=", lp.A, lp.b, lp.eq_rows), ("<=", lp.G, lp.h, lp.ineq_rows)):
        starts = np.searchsorted(M.rows, np.arange(M.shape[0] + 1))
        for r in range(M.shape[0]):
            lo, hi = starts[r], starts[r + 1]
            body = " ".join(f"{_signed(M.vals[k])} {lp.variables.label(int(M.cols[k]))}" for k in range(lo, hi))
            lines.append(f"{cat.label(r)}: {body} {kind} {_fmt(rhs[r])}")
    return "\n".join(lines) + "\n"
