"""Primal revised simplex for StandardFormLP.

Float mode uses a dense explicit basis inverse with eta updates, Dantzig
pricing and a Bland fallback on degenerate stalls.  Rational mode offers two
methods: ``bland`` runs the whole two-phase method in exact arithmetic with
Bland's rule; ``guided`` (the default) solves in floating point, rounds the
primal and dual vertex to nearby rationals and certifies optimality exactly
(primal feasibility, dual feasibility, zero gap), falling back to ``bland``
when the certificate does not close.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np
from gmpy2 import mpq

from .core_model import FLOAT, RATIONAL, exact, mode_of, to_fraction, zeros
from .lp_relaxation import LP, StandardFormLP

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

REFACTOR_EVERY = 50
BLAND_AFTER_STALL = 40
EXACT_BLAND_LIMIT = 2500  # rows + columns beyond which exact pivoting is refused


class SolverError(RuntimeError):
    pass


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class LPSolution:
    status: str
    value: object
    primal: np.ndarray | None
    dual_eq: np.ndarray | None
    dual_ineq: np.ndarray | None
    iterations: int
    mode: str
    method: str

    @property
    def dual(self) -> np.ndarray:
        return np.concatenate([self.dual_eq, self.dual_ineq])

    def dual_by_row(self, lp: StandardFormLP) -> dict:
        out = {}
        for r, v in enumerate(self.dual_eq):
            out[lp.eq_rows.label(r)] = v
        for r, v in enumerate(self.dual_ineq):
            out[lp.ineq_rows.label(r)] = v
        return out

    def gap(self, lp: StandardFormLP):
        return lp.objective(self.primal) - (lp.b * self.dual_eq).sum() - (lp.h * self.dual_ineq).sum()


# ---------------------------------------------------------------------------
# computational standard form: equality rows, nonnegative columns, rhs >= 0


class _Std:
    def __init__(self, lp: StandardFormLP, exact_mode: bool):
        self.lp = lp
        n = lp.n_vars
        G = lp.G
        m_in = G.shape[0]
        nnz = np.bincount(G.rows, minlength=m_in) if len(G.rows) else np.zeros(m_in, dtype=int)
        first = np.searchsorted(G.rows, np.arange(m_in))
        self.bound_row = {}  # var -> (row, coefficient)
        other = []
        for r in range(m_in):
            if nnz[r] == 1:
                k = first[r]
                j, g = int(G.cols[k]), G.vals[k]
                if g < 0 and lp.h[r] == 0 and j not in self.bound_row:
                    self.bound_row[j] = (r, g)
                    continue
            other.append(r)
        self.other_rows = np.array(other, dtype=np.int64)
        self.free = [j for j in range(n) if j not in self.bound_row]
        col_plus = np.full(n, -1, dtype=np.int64)
        col_minus = np.full(n, -1, dtype=np.int64)
        k = 0
        for j in range(n):
            col_plus[j] = k
            k += 1
            if j not in self.bound_row:
                col_minus[j] = k
                k += 1
        self.col_plus, self.col_minus = col_plus, col_minus
        self.n_struct = k
        self.m_eq = lp.A.shape[0]
        self.m = self.m_eq + len(other)
        self.N = self.n_struct + len(other)

        rows, cols, vals = [], [], []

        def put(r, c, v):
            rows.append(np.asarray(r, dtype=np.int64))
            cols.append(np.asarray(c, dtype=np.int64))
            vals.append(np.asarray(v, dtype=object if exact_mode else float))

        A = lp.A
        cv = A.vals.astype(object) if exact_mode else A.vals.astype(float)
        put(A.rows, col_plus[A.cols], cv)
        fm = col_minus[A.cols] >= 0
        put(A.rows[fm], col_minus[A.cols][fm], -cv[fm])
        pos = {int(r): i for i, r in enumerate(other)}
        keep = np.array([int(r) in pos for r in G.rows], dtype=bool) if len(G.rows) else np.zeros(0, bool)
        gr = np.array([self.m_eq + pos[int(r)] for r in G.rows[keep]], dtype=np.int64)
        gc = G.cols[keep]
        gv = G.vals[keep].astype(object) if exact_mode else G.vals[keep].astype(float)
        put(gr, col_plus[gc], gv)
        fm = col_minus[gc] >= 0
        put(gr[fm], col_minus[gc][fm], -gv[fm])
        put(self.m_eq + np.arange(len(other)), self.n_struct + np.arange(len(other)),
            np.array([mpq(1) if exact_mode else 1.0] * len(other), dtype=object if exact_mode else float))
        R = np.concatenate(rows)
        C = np.concatenate(cols)
        V = np.concatenate(vals)

        rhs = np.concatenate([np.asarray(lp.b, dtype=object), np.asarray(lp.h, dtype=object)[self.other_rows]])
        if exact_mode:
            rhs = np.array([exact(v) for v in rhs], dtype=object)
        else:
            rhs = rhs.astype(float)
        self.row_sign = np.where(np.array([v < 0 for v in rhs], dtype=bool), -1, 1)
        rhs = rhs * self.row_sign
        V = V * self.row_sign[R]
        self.rhs = rhs
        cost = zeros(self.N, RATIONAL if exact_mode else FLOAT)
        c = lp.c
        for j in range(n):
            cj = exact(c[j]) if exact_mode else float(c[j])
            cost[col_plus[j]] = cj
            if col_minus[j] >= 0:
                cost[col_minus[j]] = -cj
        self.cost = cost
        order = np.lexsort((R, C))
        self.R, self.C, self.V = R[order], C[order], V[order]
        self.col_start = np.searchsorted(self.C, np.arange(self.N + 1))
        # initial basis: slack where the row kept its sign, artificial otherwise
        self.slack_ok = np.zeros(self.m, dtype=bool)
        self.slack_ok[self.m_eq:] = self.row_sign[self.m_eq:] > 0

    def column(self, j: int):
        lo, hi = self.col_start[j], self.col_start[j + 1]
        return self.R[lo:hi], self.V[lo:hi]

    def scipy(self):
        from scipy.sparse import csc_matrix

        return csc_matrix((self.V.astype(float), (self.R, self.C)), shape=(self.m, self.N))

    def original(self, x: np.ndarray) -> np.ndarray:
        n = self.lp.n_vars
        v = x[self.col_plus[:n]].copy()
        fm = self.col_minus >= 0
        if fm.any():
            v[fm] = v[fm] - x[self.col_minus[fm]]
        return v


# ---------------------------------------------------------------------------
# float revised simplex


def _float_simplex(std: _Std, max_iter: int, tol: float):
    m, N = std.m, std.N
    M = std.scipy()
    Mt = M.T.tocsr()
    art = [i for i in range(m) if not std.slack_ok[i]]
    n_art = len(art)
    basis = np.empty(m, dtype=np.int64)
    is_art = np.zeros(N + n_art, dtype=bool)
    is_art[N:] = True
    art_row = {}
    for i in range(m):
        basis[i] = std.n_struct + (i - std.m_eq) if std.slack_ok[i] else -1
    for k, i in enumerate(art):
        basis[i] = N + k
        art_row[N + k] = i
    Binv = np.eye(m)
    xB = std.rhs.astype(float).copy()
    iters = 0
    scale = max(1.0, float(np.max(np.abs(std.cost)))) if N else 1.0

    def col(j):
        v = np.zeros(m)
        if j >= N:
            v[art_row[j]] = 1.0
        else:
            r, vals = std.column(j)
            v[r] = vals.astype(float)
        return v

    def refactor():
        nonlocal Binv, xB
        B = np.column_stack([col(j) for j in basis]) if m else np.zeros((0, 0))
        Binv = np.linalg.inv(B)
        xB = Binv @ std.rhs.astype(float)
        xB[np.abs(xB) < 1e-13] = 0.0

    def run(cost_full, phase):
        nonlocal Binv, xB, iters
        stall = 0
        since = 0
        while True:
            if iters >= max_iter:
                raise SolverError(f"iteration cap {max_iter} exceeded")
            cB = cost_full[basis]
            y = cB @ Binv
            d = cost_full[:N] - Mt @ y if N else np.zeros(0)
            d = np.asarray(d).ravel()
            d[basis[basis < N]] = 0.0
            dtol = tol * (scale if phase == 2 else 1.0)
            cand = np.nonzero(d < -dtol)[0]
            if len(cand) == 0:
                return y, None
            bland = stall >= BLAND_AFTER_STALL
            q = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
            a = Binv @ col(q)
            pos = np.nonzero(a > 1e-9)[0]
            if len(pos) == 0:
                return y, q
            ratios = xB[pos] / a[pos]
            best = ratios.min()
            near = pos[ratios <= best + 1e-12]
            if bland:
                r = int(near[np.argmin(basis[near])])
            else:
                r = int(near[np.argmax(a[near])])
            theta = xB[r] / a[r]
            stall = stall + 1 if theta <= 1e-12 else 0
            xB = xB - theta * a
            xB[r] = theta
            xB[np.abs(xB) < 1e-13] = 0.0
            piv = Binv[r] / a[r]
            Binv -= np.outer(a, piv)
            Binv[r] = piv
            basis[r] = q
            iters += 1
            since += 1
            if since >= REFACTOR_EVERY:
                refactor()
                since = 0

    if n_art:
        c1 = np.zeros(N + n_art)
        c1[N:] = 1.0
        run(c1, 1)
        infeas = float(sum(xB[i] for i in range(m) if basis[i] >= N))
        if infeas > max(tol, 1e-9) * max(1.0, float(np.abs(std.rhs).max())):
            return INFEASIBLE, None, None, iters, basis
        for i in range(m):
            if basis[i] >= N:
                row = Mt @ Binv[i] if N else np.zeros(0)
                row = np.asarray(row).ravel()
                row[basis[basis < N]] = 0.0
                js = np.nonzero(np.abs(row) > 1e-9)[0]
                if len(js):
                    q = int(js[np.argmax(np.abs(row[js]))])
                    a = Binv @ col(q)
                    piv = Binv[i] / a[i]
                    Binv -= np.outer(a, piv)
                    Binv[i] = piv
                    basis[i] = q
                    xB = Binv @ std.rhs.astype(float)
                    iters += 1
        refactor()
    c2 = np.concatenate([std.cost.astype(float), np.zeros(n_art)])
    y, ub = run(c2, 2)
    if ub is not None:
        return UNBOUNDED, None, None, iters, basis
    x = np.zeros(N)
    for i, j in enumerate(basis):
        if j < N:
            x[j] = max(xB[i], 0.0)
    return OPTIMAL, x, y, iters, basis


# ---------------------------------------------------------------------------
# exact revised simplex with Bland's rule


def _exact_simplex(std: _Std, max_iter: int):
    m, N = std.m, std.N
    art = [i for i in range(m) if not std.slack_ok[i]]
    n_art = len(art)
    basis = [0] * m
    art_row = {}
    for i in range(m):
        basis[i] = std.n_struct + (i - std.m_eq) if std.slack_ok[i] else -1
    for k, i in enumerate(art):
        basis[i] = N + k
        art_row[N + k] = i
    zero, one = mpq(0), mpq(1)
    Binv = np.empty((m, m), dtype=object)
    Binv.fill(zero)
    for i in range(m):
        Binv[i, i] = one
    xB = np.array([exact(v) for v in std.rhs], dtype=object)
    iters = 0
    cols = [std.column(j) for j in range(N)]

    def alpha(j):
        if j >= N:
            return Binv[:, art_row[j]].copy()
        r, vals = cols[j]
        if len(r) == 0:
            return np.array([zero] * m, dtype=object)
        return Binv[:, r] @ vals

    def reduced(y, cost_full):
        in_basis = set(basis)
        for j in range(N):
            if j in in_basis:
                continue
            r, vals = cols[j]
            dj = cost_full[j] - (y[r] * vals).sum() if len(r) else cost_full[j]
            if dj < 0:
                return j
        return None

    def run(cost_full):
        nonlocal Binv, xB, iters
        while True:
            if iters >= max_iter:
                raise SolverError(f"iteration cap {max_iter} exceeded")
            cB = np.array([cost_full[j] for j in basis], dtype=object)
            y = cB @ Binv if m else np.zeros(0, dtype=object)
            q = reduced(y, cost_full)
            if q is None:
                return y, None
            a = alpha(q)
            best, r = None, None
            for i in range(m):
                if a[i] > 0:
                    t = xB[i] / a[i]
                    if best is None or t < best or (t == best and basis[i] < basis[r]):
                        best, r = t, i
            if r is None:
                return y, q
            xB = xB - best * a
            xB[r] = best
            piv = Binv[r] / a[r]
            Binv = Binv - np.multiply.outer(a, piv)
            Binv[r] = piv
            basis[r] = q
            iters += 1

    if n_art:
        c1 = np.array([zero] * N + [one] * n_art, dtype=object)
        run(c1)
        infeas = sum((xB[i] for i in range(m) if basis[i] >= N), zero)
        if infeas > 0:
            return INFEASIBLE, None, None, iters, basis
        for i in range(m):
            if basis[i] >= N:
                in_basis = set(basis)
                for j in range(N):
                    if j in in_basis:
                        continue
                    r, vals = cols[j]
                    v = (Binv[i, r] * vals).sum() if len(r) else zero
                    if v != 0:
                        a = alpha(j)
                        piv = Binv[i] / a[i]
                        Binv = Binv - np.multiply.outer(a, piv)
                        Binv[i] = piv
                        basis[i] = j
                        iters += 1
                        break
    c2 = np.concatenate([std.cost, np.array([zero] * n_art, dtype=object)])
    y, ub = run(c2)
    if ub is not None:
        return UNBOUNDED, None, None, iters, basis
    x = np.array([zero] * N, dtype=object)
    for i, j in enumerate(basis):
        if j < N:
            x[j] = xB[i]
    return OPTIMAL, x, y, iters, basis


# ---------------------------------------------------------------------------
# mapping multipliers back to the StandardFormLP rows


def _duals(std: _Std, y: np.ndarray, exact_mode: bool):
    lp = std.lp
    y = y * std.row_sign
    y_eq = y[:std.m_eq]
    z = zeros(lp.n_ineq, RATIONAL if exact_mode else FLOAT)
    z[std.other_rows] = y[std.m_eq:]
    z = complete_sign_duals(lp, y_eq, z, std.bound_row)
    return y_eq, z


def _sign_rows(lp: StandardFormLP) -> dict:
    G = lp.G
    m_in = G.shape[0]
    nnz = np.bincount(G.rows, minlength=m_in) if len(G.rows) else np.zeros(m_in, dtype=int)
    first = np.searchsorted(G.rows, np.arange(m_in))
    out = {}
    for r in np.nonzero(nnz == 1)[0]:
        k = first[r]
        j, g = int(G.cols[k]), G.vals[k]
        if g < 0 and lp.h[r] == 0 and j not in out:
            out[j] = (int(r), g)
    return out


def complete_sign_duals(lp: StandardFormLP, y_eq, z, bound_row: dict | None = None):
    """Fill the multipliers of the ``-v <= 0`` rows from the reduced costs."""
    if bound_row is None:
        bound_row = _sign_rows(lp)
    z = np.array(z, copy=True)
    rows = np.array([r for r, _ in bound_row.values()], dtype=np.int64)
    if len(rows):
        z[rows] = 0 * z[rows]
    d = lp.c - lp.A.rmatvec(y_eq) - lp.G.rmatvec(z)
    for j, (r, g) in bound_row.items():
        z[r] = d[j] / g
    return z


def dual_residual(lp: StandardFormLP, y_eq, z):
    """(max |A^T y + G^T z - c|, max positive z)."""
    r = lp.A.rmatvec(y_eq) + lp.G.rmatvec(z) - lp.c
    return max((abs(v) for v in r), default=0), max([v for v in z] + [0])


# ---------------------------------------------------------------------------
# public API


def _rationalize(v: np.ndarray, den: int) -> np.ndarray:
    out = np.empty(len(v), dtype=object)
    for i, x in enumerate(v):
        f = Fraction(float(x)).limit_denominator(den)
        out[i] = mpq(f.numerator, f.denominator)
    return out


def certify(lp: StandardFormLP, primal, dual_eq, dual_ineq, tol: float = 0.0,
            method: str = "certificate", iterations: int = 0) -> LPSolution:
    """Certify optimality of a primal/dual pair: feasibility of both and zero gap.

    In rational mode the checks are exact; in float mode they hold within ``tol``.
    """
    exact_mode = lp.mode == RATIONAL or mode_of(primal, dual_eq, dual_ineq) == RATIONAL
    if exact_mode:
        conv = lambda a: np.array([exact(v) for v in a], dtype=object)
        primal, dual_eq, dual_ineq = conv(primal), conv(dual_eq), conv(dual_ineq)
        tol = 0
    peq, pin = lp.residuals(primal)
    deq, dpos = dual_residual(lp, dual_eq, dual_ineq)
    value = lp.objective(primal)
    dval = (lp.b * dual_eq).sum() + (lp.h * dual_ineq).sum()
    gap = abs(value - dval)
    problems = []
    if peq > tol or pin > tol:
        problems.append(f"primal infeasible (eq {float(peq):.3g}, ineq {float(pin):.3g})")
    if deq > tol or dpos > tol:
        problems.append(f"dual infeasible (stationarity {float(deq):.3g}, sign {float(dpos):.3g})")
    if gap > tol * max(1.0, abs(float(value))):
        problems.append(f"duality gap {float(gap):.3g}")
    if problems:
        raise CertificateError("; ".join(problems))
    return LPSolution(OPTIMAL, to_fraction(value) if exact_mode else float(value), primal, dual_eq,
                      dual_ineq, iterations, RATIONAL if exact_mode else FLOAT, method)


def certify_dual_point(lp: StandardFormLP, primal, dp, tol: float = 0.0) -> LPSolution:
    """Optimum of ``lp`` from a feasible point and a DualPoint with the same objective.

    This is how large instances with a known optimal code and a constructed
    certificate get an exact value without pivoting.
    """
    y, z = dual_vectors(lp, dp)
    return certify(lp, primal, y, z, tol=tol)


def exact_lp(lp: StandardFormLP) -> StandardFormLP:
    """The same LP with every coefficient as an exact rational (floats convert exactly)."""
    if lp.mode == RATIONAL:
        return lp
    conv = lambda a: np.array([exact(v) for v in np.asarray(a).reshape(-1)], dtype=object)
    A = replace(lp.A, vals=conv(lp.A.vals))
    G = replace(lp.G, vals=conv(lp.G.vals))
    return replace(lp, A=A, b=conv(lp.b), G=G, h=conv(lp.h), c=conv(lp.c))


def solve(lp: StandardFormLP, mode: str | None = None, tol: float = 1e-9, method: str = "guided",
          max_iter: int | None = None) -> LPSolution:
    """Solve ``lp``; rational mode returns an exactly certified optimum."""
    mode = mode or lp.mode
    max_iter = max_iter or 50 * (lp.n_vars + lp.n_eq + lp.n_ineq) + 1000
    if mode == FLOAT:
        std = _Std(lp, exact_mode=False)
        status, x, y, iters, _ = _float_simplex(std, max_iter, tol)
        if status != OPTIMAL:
            return LPSolution(status, None, None, None, None, iters, FLOAT, "dantzig-bland")
        v = std.original(x)
        y_eq, z = _duals(std, y, False)
        return LPSolution(OPTIMAL, float(lp.objective(v)), v, y_eq, z, iters, FLOAT, "dantzig-bland")
    if mode != RATIONAL:
        raise ValueError(mode)
    lp = exact_lp(lp)
    if method == "guided":
        std_f = _Std(lp, exact_mode=False)
        status, x, y, iters, _ = _float_simplex(std_f, max_iter, tol)
        if status == OPTIMAL:
            v = std_f.original(x)
            y_eq, z = _duals(std_f, y, False)
            for den in (10**6, 10**9, 10**12):
                pv = _rationalize(v, den)
                ye = _rationalize(y_eq, den)
                zz = _rationalize(z, den)
                zz = complete_sign_duals(lp, ye, zz)
                try:
                    return certify(lp, pv, ye, zz, method="guided", iterations=iters)
                except CertificateError:
                    continue
        std = _Std(lp, exact_mode=True)
        if std.m + std.N > EXACT_BLAND_LIMIT and status == OPTIMAL:
            raise SolverError("rounded vertex did not certify and the LP is too large for exact pivoting")
        if std.m + std.N > EXACT_BLAND_LIMIT:
            return LPSolution(status, None, None, None, None, iters, RATIONAL, "guided")
        method = "bland"
    if method != "bland":
        raise ValueError(f"unknown method {method!r}")
    std = _Std(lp, exact_mode=True)
    status, x, y, iters, _ = _exact_simplex(std, max_iter)
    if status != OPTIMAL:
        return LPSolution(status, None, None, None, None, iters, RATIONAL, "bland")
    v = std.original(x)
    y_eq, z = _duals(std, y, True)
    return certify(lp, v, y_eq, z, method="bland", iterations=iters)


def extract_dual_point(lp: StandardFormLP, sol: LPSolution):
    """Map LP row multipliers onto (gamma_a, gamma_b, lambda_a, lambda_b, mu)."""
    from .dual_certificates import DualPoint

    if lp.tag != LP:
        raise ValueError(f"expected an LP tagged {LP}, got {lp.tag}")
    if sol.status != OPTIMAL:
        raise ValueError("solution is not optimal")
    eq, ineq = lp.eq_rows, lp.ineq_rows
    ga = eq.block(sol.dual_eq, "enc")
    gb = eq.block(sol.dual_eq, "dec")
    la = eq.block(sol.dual_eq, "lam_a")
    lb = eq.block(sol.dual_eq, "lam_b")
    mu = -ineq.block(sol.dual_ineq, "mc")
    return DualPoint(ga, gb, la, lb, mu)


def dual_vectors(lp: StandardFormLP, dp) -> tuple[np.ndarray, np.ndarray]:
    """Row multipliers of ``lp`` corresponding to a DualPoint (sign rows from reduced costs)."""
    from .dual_certificates import DualPoint

    nS, nX, nY, nH = lp.meta["shape"]
    dp = DualPoint(*(np.broadcast_to(a, sh) for a, sh in (
        (dp.gamma_a, (nS,)), (dp.gamma_b, (nY,)), (dp.lam_a, (nS, nH, nY)), (dp.lam_b, (nX, nS, nY)))),
        mu=None if dp.mu is None else np.broadcast_to(dp.mu, (nS, nX, nY, nH)))
    mode = mode_of(dp.gamma_a, dp.lam_a, lp.c)
    y = zeros(lp.n_eq, mode)
    for name, arr in (("enc", dp.gamma_a), ("dec", dp.gamma_b), ("lam_a", dp.lam_a), ("lam_b", dp.lam_b)):
        f = lp.eq_rows[name]
        y[f.offset:f.offset + f.size] = np.asarray(arr).reshape(-1)
    z = zeros(lp.n_ineq, mode)
    if "mc" in lp.ineq_rows:
        f = lp.ineq_rows["mc"]
        if dp.mu is not None:
            z[f.offset:f.offset + f.size] = -np.asarray(dp.mu).reshape(-1)
    elif dp.mu is not None and any(v != 0 for v in np.asarray(dp.mu).reshape(-1)):
        raise ValueError("nonzero mu has no McCormick rows to attach to")
    return y, complete_sign_duals(lp, y, z)
