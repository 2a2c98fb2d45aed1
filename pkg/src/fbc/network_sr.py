"""Networks of coding nodes, their lift-and-project LP, and successive refinement.

A network has N nodes; node i sees y_i and emits x_i = f_i(y_i).  The joint
kernel P(y_1..y_N | x_1..x_N) is a dense table and must respect a topological
order: y_i may depend only on outputs of nodes strictly earlier in that order.
Relaxing the products of the kernels u_i = Q_{X_i|Y_i} gives variables
U_J(x_J, y_J) for subsets J of nodes, linked by the rows

    sum_{x_i} U_{J + i} = U_J                              (equality pair (i, J))
    prod_{I1} u  prod_{I2} (1 - u) >= 0, linearized        (inequality pair (I1, I2))

Successive refinement is the four-node case E1, E2, D1, D2 with identity
channels.  ``build_lpsr`` writes its relaxation with the thirteen row families
below; their multipliers are the families of ``SRDualPoint``.

    eta1(s)            sum_{x2} Q2(x2|s) = 1
    eta2(y1)           sum_{h1} R1(h1|y1) = 1
    eta3(y1,y2)        sum_{h2} R2(h2|y1,y2) = 1
    eta4(s)            sum_{x1} Q1(x1|s) = 1
    lam_a(s,x2,h1,h2,y1,y2)   sum_{x1} A0 = A6
    lam_b(s,x1,h1,h2,y1,y2)   sum_{x2} A0 = A5
    lam_c(s,x1,x2,y1,y2,h1)   sum_{h2} A0 = A1
    mu(s,x1,x2,y1)            sum_{h1} A1 = A2
    delta1(x2,s)              sum_{x1} A2 = Q2
    delta2(s,h2,y1,y2)        sum_{x1} A3 = R2
    delta3(s,h1,y1)           sum_{x2} A4 = R1
    theta(x1,s,y1,h2,y2)      sum_{h1} A5 = A3
    gamma(x2,s,h1,y1,y2)      sum_{h2} A6 = A4

Q1 has no row besides its own stochasticity, so its column only forces
eta4 <= 0; eta4 still enters the dual objective.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .converse_bounds import EDGE, BoundResult, gamma_grid
from .core_model import FLOAT, RATIONAL, CapExceeded, Distribution, as_array, frozen, zeros
from .dual_certificates import FeasibilityReport
from .lp_relaxation import Catalog, SparseBuilder, StandardFormLP
from .tilted_information import TiltedTable, rate_distortion

LPN = "LPN"
LPSR = "LPSR"
SR_NODES = ("E1", "E2", "D1", "D2")
DEFAULT_SR_CAP = 2**21


class NetworkError(ValueError):
    pass


# ---------------------------------------------------------------------------
# named-axis helpers


def _align(arr: np.ndarray, axes, target) -> np.ndarray:
    """View of ``arr`` (axes named ``axes``) broadcastable against ``target`` axes."""
    axes = tuple(axes)
    missing = [a for a in axes if a not in target]
    if missing:
        raise ValueError(f"axes {missing} not in target {target}")
    perm = [axes.index(a) for a in target if a in axes]
    out = np.transpose(np.asarray(arr), perm)
    shape = []
    it = iter(out.shape)
    for a in target:
        shape.append(next(it) if a in axes else 1)
    return out.reshape(shape)


def _sum_to(arr: np.ndarray, axes, keep) -> tuple[np.ndarray, tuple]:
    """Sum ``arr`` over every axis not in ``keep``; returns (array, remaining axes)."""
    axes = tuple(axes)
    drop = tuple(i for i, a in enumerate(axes) if a not in keep)
    return np.asarray(arr).sum(axis=drop), tuple(a for a in axes if a in keep)


def _put_term(builder: SparseBuilder, rows: "Family", row_axes, cols: "Family", col_axes, coef, sizes):
    """Rows ``rows`` get ``coef`` times every entry of ``cols`` consistent with the shared axes."""
    union = tuple(row_axes) + tuple(a for a in col_axes if a not in row_axes)
    grids = np.meshgrid(*[np.arange(sizes[a]) for a in union], indexing="ij")
    g = dict(zip(union, grids))
    r = rows.offset + np.ravel_multi_index(tuple(g[a] for a in row_axes), rows.shape) if row_axes \
        else np.full(grids[0].shape if grids else (), rows.offset)
    c = cols.offset + np.ravel_multi_index(tuple(g[a] for a in col_axes), cols.shape)
    if r.shape != c.shape:
        r = np.broadcast_to(r, c.shape)
    builder.put(r, c, coef)


# ---------------------------------------------------------------------------
# general networks


@dataclass(frozen=True)
class NetworkInstance:
    """Nodes with input/output alphabet sizes, a joint kernel and a loss.

    ``kernel`` and ``loss`` have shape (|Y_1|..|Y_N|, |X_1|..|X_N|).
    """

    names: tuple
    n_in: tuple
    n_out: tuple
    kernel: np.ndarray
    loss: np.ndarray
    order: tuple = ()

    def __post_init__(self):
        N = len(self.names)
        if len(self.n_in) != N or len(self.n_out) != N:
            raise NetworkError("alphabet lists must have one entry per node")
        shape = tuple(self.n_in) + tuple(self.n_out)
        k = np.asarray(self.kernel)
        if k.shape != shape or np.shape(self.loss) != shape:
            raise NetworkError(f"kernel and loss must have shape {shape}")
        order = tuple(self.order) or tuple(range(N))
        if sorted(order) != list(range(N)):
            raise NetworkError("topological order must list every node once")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "kernel", frozen(k))
        object.__setattr__(self, "loss", frozen(np.asarray(self.loss)))
        tot = k.reshape(int(np.prod(self.n_in)), -1).sum(axis=0)
        if k.dtype != object and not np.allclose(tot.astype(float), 1.0, atol=1e-12):
            raise NetworkError("kernel is not stochastic in (y_1..y_N) for every input")
        self._check_no_feedback()

    @property
    def N(self) -> int:
        return len(self.names)

    def node(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.N:
                raise NetworkError(f"no node {name}")
            return int(name)
        if name not in self.names:
            raise NetworkError(f"no node {name!r}")
        return self.names.index(name)

    def _check_no_feedback(self):
        N = self.N
        k = np.asarray(self.kernel, dtype=float)
        for pos, i in enumerate(self.order):
            marg = k.sum(axis=tuple(j for j in range(N) if j != i))  # (Y_i, X_1..X_N)
            for j in self.order[pos:]:
                ax = 1 + j
                ref = np.take(marg, [0], axis=ax)
                if not np.allclose(marg, ref, atol=1e-12):
                    raise NetworkError(f"input of node {self.names[i]} depends on the output of "
                                       f"{self.names[j]}, which is not earlier in the order")

    def subset_axes(self, J) -> tuple:
        out = []
        for j in sorted(J):
            out += [f"y{j}", f"x{j}"]
        return tuple(out)

    def sizes(self) -> dict:
        d = {}
        for i in range(self.N):
            d[f"y{i}"] = self.n_in[i]
            d[f"x{i}"] = self.n_out[i]
        return d

    def weight(self) -> np.ndarray:
        """kernel * loss on the axes of U over all nodes."""
        N = self.N
        w = np.asarray(self.kernel) * np.asarray(self.loss)
        axes = tuple(f"y{i}" for i in range(N)) + tuple(f"x{i}" for i in range(N))
        target = self.subset_axes(range(N))
        return np.transpose(w, [axes.index(a) for a in target])

    @staticmethod
    def point_to_point(inst) -> "NetworkInstance":
        """Encoder (S -> X) and decoder (Y -> Shat) as a two-node network."""
        nS, nX, nY, nH = inst.shape
        ps = np.asarray(inst.source.mass)
        P = np.asarray(inst.channel.matrix)
        kern = ps[:, None, None, None] * np.transpose(P, (1, 0))[None, :, :, None]  # (s, y, x, shat)
        kern = np.broadcast_to(kern, (nS, nY, nX, nH)).copy()
        loss = np.transpose(inst.loss.dense(inst.shape), (0, 2, 1, 3))
        return NetworkInstance(("enc", "dec"), (nS, nY), (nX, nH), kern, loss.copy(), (0, 1))


def _name(net: NetworkInstance, J) -> str:
    return "U[" + ",".join(net.names[j] for j in sorted(J)) + "]"


@dataclass(frozen=True)
class LiftSets:
    """Explicit rows to materialize: equality pairs (i, J) and inequality pairs (I1, I2)."""

    eq: tuple = ()
    ineq: tuple = ()


def _subsets(items):
    items = list(items)
    for r in range(len(items) + 1):
        yield from (frozenset(c) for c in itertools.combinations(items, r))


def preset(net: NetworkInstance, name: str) -> LiftSets:
    """Named lift-set selections: "sr-nine", "mccormick" and "full"."""
    N = net.N
    nodes = range(N)
    if name == "sr-nine":
        if tuple(net.names) != SR_NODES:
            raise NetworkError(f"sr-nine needs nodes {SR_NODES}")
        E1, E2, D1, D2 = range(4)
        eq = ((E1, {E2, D1, D2}), (E1, {E2}), (E1, {D2}),
              (E2, {E1, D1, D2}), (E2, {D1}),
              (D1, {E1, E2}), (D1, {E1, D2}),
              (D2, {E1, E2, D1}), (D2, {E2, D1}))
        return LiftSets(tuple((i, frozenset(J)) for i, J in eq), ())
    eq = tuple((i, J) for i in nodes for J in _subsets(set(nodes) - {i}) if J)
    if name == "mccormick":
        return LiftSets(eq, ((frozenset(), frozenset(nodes)),))
    if name == "full":
        ineq = []
        for I2 in _subsets(nodes):
            if not I2:
                continue
            for I1 in _subsets(set(nodes) - I2):
                ineq.append((I1, I2))
        return LiftSets(eq, tuple(ineq))
    raise NetworkError(f"unknown lift preset {name!r}")


def build_lpn(net: NetworkInstance, lift_sets: LiftSets | str = "mccormick", mode: str = FLOAT) -> StandardFormLP:
    """LP relaxation of the network code-design program over the requested rows.

    Sign rows ``-U <= 0`` are always present, so inequality pairs with empty
    I2 would duplicate them and are skipped.
    """
    if isinstance(lift_sets, str):
        lift_sets = preset(net, lift_sets)
    N = net.N
    eqs = []
    for i, J in lift_sets.eq:
        i = net.node(i)
        J = frozenset(net.node(j) for j in J)
        if i in J:
            raise NetworkError("equality pair (i, J) needs i outside J")
        eqs.append((i, J))
    ineqs = []
    for I1, I2 in lift_sets.ineq:
        I1 = frozenset(net.node(j) for j in I1)
        I2 = frozenset(net.node(j) for j in I2)
        if I1 & I2:
            raise NetworkError("inequality pair needs disjoint sets")
        if I2:
            ineqs.append((I1, I2))
    used = {frozenset([i]) for i in range(N)} | {frozenset(range(N))}
    for i, J in eqs:
        used |= {J | {i}} | ({J} if J else set())
    for I1, I2 in ineqs:
        used |= {I1 | K for K in _subsets(I2) if I1 | K}
    sizes = net.sizes()
    var = Catalog()
    fams = {}
    for J in sorted(used, key=lambda J: (len(J), sorted(J))):
        ax = net.subset_axes(J)
        fams[J] = (var.add(_name(net, J), ax, [sizes[a] for a in ax]), ax)

    eq = Catalog()
    A = SparseBuilder()
    b_parts = []
    base = [(i, frozenset()) for i in range(N)]
    for i, J in base + [p for p in eqs if p[1]]:
        rax = net.subset_axes(J) + (f"y{i}",)
        label = f"eq:{net.names[i]}|" + ",".join(net.names[j] for j in sorted(J))
        row = eq.add(label, rax, [sizes[a] for a in rax])
        top, tax = fams[J | {i}]
        _put_term(A, row, rax, top, tax, 1, sizes)
        if J:
            low, lax = fams[J]
            _put_term(A, row, rax, low, lax, -1, sizes)
            b_parts.append(np.zeros(row.size, dtype=np.int64))
        else:
            b_parts.append(np.ones(row.size, dtype=np.int64))

    ineq = Catalog()
    G = SparseBuilder()
    h_parts = []
    for I1, I2 in ineqs:
        rax = net.subset_axes(I1 | I2)
        label = "ineq:" + ",".join(net.names[j] for j in sorted(I1)) + "|" + \
            ",".join(net.names[j] for j in sorted(I2))
        row = ineq.add(label, rax, [sizes[a] for a in rax])
        for K in _subsets(I2):
            S = I1 | K
            if S:
                f, fax = fams[S]
                _put_term(G, row, rax, f, fax, (-1) ** (len(K) + 1), sizes)
        h_parts.append(np.full(row.size, 0 if I1 else 1, dtype=np.int64))
    for f in list(var.families):
        nn = ineq.add("nn:" + f.name, f.axes, f.shape)
        G.put(nn.offset + np.arange(f.size), f.offset + np.arange(f.size), -1)
        h_parts.append(np.zeros(f.size, dtype=np.int64))

    c = zeros(var.size, mode)
    top = var[_name(net, range(N))]
    c[top.offset:top.offset + top.size] = as_array(net.weight().reshape(-1), mode)
    b = as_array(np.concatenate(b_parts), mode)
    h = as_array(np.concatenate(h_parts), mode)
    return StandardFormLP(LPN, var, A.build(eq.size, var.size), frozen(b), eq,
                          G.build(ineq.size, var.size), frozen(h), ineq, frozen(c),
                          meta={"nodes": net.names})


def row_keys(lp: StandardFormLP) -> set:
    """Rows as sets of (column, coefficient) with their sense and right side."""
    out = set()
    for kind, M, rhs in (("eq", lp.A, lp.b), ("le", lp.G, lp.h)):
        starts = np.searchsorted(M.rows, np.arange(M.shape[0] + 1))
        for r in range(M.shape[0]):
            lo, hi = starts[r], starts[r + 1]
            body = tuple(sorted((int(M.cols[k]), float(M.vals[k])) for k in range(lo, hi)))
            out.add((kind, body, float(rhs[r])))
    return out


# ---------------------------------------------------------------------------
# successive refinement


@dataclass(frozen=True)
class SRInstance:
    """Two-stage source code: stage one sends M1 messages, stage two M2 more.

    Both channels are noiseless, so y1 = x1 and y2 = x2.  The loss is the joint
    excess-distortion indicator 1{d1(s, h1) > D1 or d2(s, h2) > D2}.
    """

    source: Distribution
    M1: int
    M2: int
    d1: np.ndarray
    d2: np.ndarray
    D1: float
    D2: float

    def __post_init__(self):
        nS = len(self.source)
        d1 = np.asarray(self.d1, dtype=float)
        d2 = np.asarray(self.d2, dtype=float)
        if d1.ndim != 2 or d2.ndim != 2 or d1.shape[0] != nS or d2.shape[0] != nS:
            raise ValueError("distortion tables must be |S| x |Shat_i|")
        if int(self.M1) < 1 or int(self.M2) < 1:
            raise ValueError("message counts must be positive")
        object.__setattr__(self, "d1", frozen(d1))
        object.__setattr__(self, "d2", frozen(d2))

    @property
    def ps(self) -> np.ndarray:
        return np.asarray(self.source.mass, dtype=float)

    def sizes(self) -> dict:
        return {"s": len(self.source), "x1": self.M1, "x2": self.M2, "y1": self.M1, "y2": self.M2,
                "h1": self.d1.shape[1], "h2": self.d2.shape[1]}

    def bad(self) -> np.ndarray:
        """kappa(s, h1, h2)."""
        return ((self.d1[:, :, None] > self.D1) | (self.d2[:, None, :] > self.D2)).astype(float)

    def network(self) -> NetworkInstance:
        """The same problem as a four-node network (D2 reads the pair (x1, x2))."""
        nS, M1, M2 = len(self.source), self.M1, self.M2
        n1, n2 = self.d1.shape[1], self.d2.shape[1]
        shape = (nS, nS, M1, M1 * M2, M1, M2, n1, n2)
        kern = np.zeros(shape)
        loss = np.zeros(shape)
        bad = self.bad()
        for s in range(nS):
            for x1 in range(M1):
                for x2 in range(M2):
                    kern[s, s, x1, x1 * M2 + x2, x1, x2] = self.ps[s]
        for idx in itertools.product(*[range(v) for v in shape]):
            s = idx[0]
            loss[idx] = bad[s, idx[6], idx[7]]
        return NetworkInstance(SR_NODES, (nS, nS, M1, M1 * M2), (M1, M2, n1, n2), kern, loss, (0, 1, 2, 3))


SR_VARS = (
    ("Q1", ("s", "x1")),
    ("Q2", ("s", "x2")),
    ("R1", ("y1", "h1")),
    ("R2", ("y1", "y2", "h2")),
    ("A0", ("s", "x1", "x2", "y1", "y2", "h1", "h2")),
    ("A1", ("s", "x1", "x2", "h1", "y1")),
    ("A2", ("x1", "x2", "s")),
    ("A3", ("x1", "s", "h2", "y1", "y2")),
    ("A4", ("x2", "s", "h1", "y1")),
    ("A5", ("s", "x1", "h1", "y1", "h2", "y2")),
    ("A6", ("s", "x2", "h1", "y1", "h2", "y2")),
)

# (multiplier, row axes, summed variable, other variable or None for "= 1")
SR_ROWS = (
    ("eta1", ("s",), "Q2", None),
    ("eta2", ("y1",), "R1", None),
    ("eta3", ("y1", "y2"), "R2", None),
    ("eta4", ("s",), "Q1", None),
    ("lam_a", ("s", "x2", "h1", "h2", "y1", "y2"), "A0", "A6"),
    ("lam_b", ("s", "x1", "h1", "h2", "y1", "y2"), "A0", "A5"),
    ("lam_c", ("s", "x1", "x2", "y1", "y2", "h1"), "A0", "A1"),
    ("mu", ("s", "x1", "x2", "y1"), "A1", "A2"),
    ("delta1", ("x2", "s"), "A2", "Q2"),
    ("delta2", ("s", "h2", "y1", "y2"), "A3", "R2"),
    ("delta3", ("s", "h1", "y1"), "A4", "R1"),
    ("theta", ("x1", "s", "y1", "h2", "y2"), "A5", "A3"),
    ("gamma", ("x2", "s", "h1", "y1", "y2"), "A6", "A4"),
)
SR_FAMILIES = tuple(r[0] for r in SR_ROWS)
_ROW_AXES = {r[0]: r[1] for r in SR_ROWS}
_VAR_AXES = dict(SR_VARS)


def _sr_weight(sr: SRInstance) -> np.ndarray:
    """Pi(z) = kappa P_S(s) 1{y1 = x1} 1{y2 = x2} on the axes of A0."""
    sz = sr.sizes()
    e1 = np.eye(sz["x1"])  # (x1, y1)
    e2 = np.eye(sz["x2"])
    tgt = _VAR_AXES["A0"]
    return (_align(sr.ps, ("s",), tgt) * _align(e1, ("x1", "y1"), tgt) * _align(e2, ("x2", "y2"), tgt)
            * _align(sr.bad(), ("s", "h1", "h2"), tgt))


def _check_sr_cap(sr: SRInstance, cap: int):
    sz = sr.sizes()
    n = int(np.prod([sz[a] for a in _VAR_AXES["A0"]]))
    if n > cap:
        raise CapExceeded(f"{n} joint tuples exceed cap {cap}")


def build_lpsr(sr: SRInstance, cap: int = 2**16) -> StandardFormLP:
    """Relaxation of the successive-refinement code design over the Gamma rows."""
    _check_sr_cap(sr, cap)
    sz = sr.sizes()
    var = Catalog()
    fam = {name: var.add(name, ax, [sz[a] for a in ax]) for name, ax in SR_VARS}
    eq = Catalog()
    A = SparseBuilder()
    b = []
    for name, rax, top, low in SR_ROWS:
        row = eq.add(name, rax, [sz[a] for a in rax])
        _put_term(A, row, rax, fam[top], _VAR_AXES[top], 1, sz)
        if low is None:
            b.append(np.ones(row.size))
        else:
            _put_term(A, row, rax, fam[low], _VAR_AXES[low], -1, sz)
            b.append(np.zeros(row.size))
    ineq = Catalog()
    G = SparseBuilder()
    for f in list(var.families):
        nn = ineq.add("nn:" + f.name, f.axes, f.shape)
        G.put(nn.offset + np.arange(f.size), f.offset + np.arange(f.size), -1)
    c = np.zeros(var.size)
    a0 = fam["A0"]
    c[a0.offset:a0.offset + a0.size] = _sr_weight(sr).reshape(-1)
    return StandardFormLP(LPSR, var, A.build(eq.size, var.size), frozen(np.concatenate(b)), eq,
                          G.build(ineq.size, var.size), frozen(np.zeros(ineq.size)), ineq, frozen(c),
                          meta={"sizes": sz})


@dataclass(frozen=True)
class SRCode:
    f1: tuple  # s -> x1
    f2: tuple  # s -> x2
    g1: tuple  # y1 -> h1
    g2: tuple  # (y1, y2) -> h2, flattened y1 * M2 + y2


def sr_loss(sr: SRInstance, code: SRCode) -> float:
    bad = sr.bad()
    tot = 0.0
    for s, p in enumerate(sr.ps):
        x1, x2 = code.f1[s], code.f2[s]
        tot += p * bad[s, code.g1[x1], code.g2[x1 * sr.M2 + x2]]
    return tot


def lift_code(sr: SRInstance, code: SRCode) -> np.ndarray:
    """Product lift of a deterministic quadruple into the LPSR variables."""
    sz = sr.sizes()
    nS = sz["s"]
    Q1 = np.zeros((nS, sz["x1"]))
    Q1[np.arange(nS), list(code.f1)] = 1
    Q2 = np.zeros((nS, sz["x2"]))
    Q2[np.arange(nS), list(code.f2)] = 1
    R1 = np.zeros((sz["y1"], sz["h1"]))
    R1[np.arange(sz["y1"]), list(code.g1)] = 1
    R2 = np.zeros((sz["y1"] * sz["y2"], sz["h2"]))
    R2[np.arange(len(code.g2)), list(code.g2)] = 1
    R2 = R2.reshape(sz["y1"], sz["y2"], sz["h2"])
    base = {"Q1": (Q1, ("s", "x1")), "Q2": (Q2, ("s", "x2")), "R1": (R1, ("y1", "h1")),
            "R2": (R2, ("y1", "y2", "h2"))}
    parts = {"A0": "Q1 Q2 R1 R2", "A1": "Q1 Q2 R1", "A2": "Q1 Q2", "A3": "Q1 R2", "A4": "Q2 R1",
             "A5": "Q1 R1 R2", "A6": "Q2 R1 R2"}
    out = []
    for name, ax in SR_VARS:
        if name in base:
            out.append(base[name][0].reshape(-1))
            continue
        v = np.ones([1] * len(ax))
        for k in parts[name].split():
            arr, kax = base[k]
            v = v * _align(arr, kax, ax)
        out.append(np.broadcast_to(v, [sz[a] for a in ax]).reshape(-1))
    return np.concatenate(out)


def random_sr_code(sr: SRInstance, rng: np.random.Generator) -> SRCode:
    sz = sr.sizes()
    return SRCode(tuple(int(v) for v in rng.integers(0, sz["x1"], sz["s"])),
                  tuple(int(v) for v in rng.integers(0, sz["x2"], sz["s"])),
                  tuple(int(v) for v in rng.integers(0, sz["h1"], sz["y1"])),
                  tuple(int(v) for v in rng.integers(0, sz["h2"], sz["y1"] * sz["y2"])))


# ---------------------------------------------------------------------------
# exhaustive oracle


def _sr_code_count(sr: SRInstance) -> int:
    sz = sr.sizes()
    return sz["x1"] ** sz["s"] * sz["x2"] ** sz["s"] * sz["h1"] ** sz["y1"] * sz["h2"] ** (sz["y1"] * sz["y2"])


def _sr_best(args):
    sr, f1_lo, f1_hi = args
    sz = sr.sizes()
    nS, M1, M2, n1, n2 = sz["s"], sz["x1"], sz["x2"], sz["h1"], sz["h2"]
    ps = sr.ps
    ok1 = sr.d1 <= sr.D1  # (s, h1)
    ok2 = sr.d2 <= sr.D2
    g1_all = np.array(list(itertools.product(range(n1), repeat=M1)), dtype=np.int64)  # (G1, M1)
    g2_all = np.array(list(itertools.product(range(n2), repeat=M1 * M2)), dtype=np.int64)
    f2_all = list(itertools.product(range(M2), repeat=nS))
    best = None
    for e in range(f1_lo, f1_hi):
        f1 = np.array(np.unravel_index(e, (M1,) * nS), dtype=np.int64) if nS else np.zeros(0, np.int64)
        # good1[g1, s] = ok1[s, g1[f1[s]]]
        good1 = ok1[np.arange(nS)[None, :], g1_all[:, f1]]
        for f2 in f2_all:
            cell = f1 * M2 + np.asarray(f2)
            good2 = ok2[np.arange(nS)[None, :], g2_all[:, cell]]  # (G2, s)
            # success probability for every (g1, g2) pair
            succ = (good1[:, None, :] & good2[None, :, :]) @ ps
            k = int(np.argmax(succ))
            v = 1.0 - float(succ.reshape(-1)[k])
            if best is None or v < best[0] - 1e-15:
                i1, i2 = divmod(k, len(g2_all))
                best = (v, SRCode(tuple(int(t) for t in f1), tuple(int(t) for t in f2),
                                  tuple(int(t) for t in g1_all[i1]), tuple(int(t) for t in g2_all[i2])))
    return best


def sr_oracle(sr: SRInstance, cap: int = DEFAULT_SR_CAP, jobs: int = 1) -> tuple[float, SRCode]:
    """Minimum joint excess-distortion probability over deterministic (f1, f2, g1, g2)."""
    total = _sr_code_count(sr)
    if total > cap:
        raise CapExceeded(f"{total} quadruples exceed cap {cap}")
    n_f1 = sr.M1 ** len(sr.source)
    if jobs <= 1 or n_f1 < 2 * jobs:
        parts = [_sr_best((sr, 0, n_f1))]
    else:
        step = -(-n_f1 // jobs)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_sr_best, [(sr, lo, min(lo + step, n_f1)) for lo in range(0, n_f1, step)]))
    best = None
    for p in parts:
        if best is None or p[0] < best[0] - 1e-15:
            best = p
    return best


# ---------------------------------------------------------------------------
# dual points


@dataclass(frozen=True)
class SRDualPoint:
    """Multipliers of the thirteen Gamma row families, each on its row axes."""

    values: dict

    def __post_init__(self):
        missing = set(SR_FAMILIES) - set(self.values)
        if missing:
            raise ValueError(f"missing families {sorted(missing)}")
        for k, v in self.values.items():
            if not np.all(np.isfinite(np.asarray(v, dtype=float))):
                raise ValueError(f"family {k} has non-finite entries")

    def __getitem__(self, name):
        return np.asarray(self.values[name], dtype=float)

    def replace(self, **kw) -> "SRDualPoint":
        v = dict(self.values)
        v.update(kw)
        return SRDualPoint(v)

    def vector(self, sr: SRInstance) -> np.ndarray:
        """Row multipliers in build_lpsr order."""
        sz = sr.sizes()
        return np.concatenate([np.broadcast_to(self[n], [sz[a] for a in _ROW_AXES[n]]).reshape(-1)
                               for n in SR_FAMILIES])


def sr_zero_point(sr: SRInstance) -> SRDualPoint:
    sz = sr.sizes()
    return SRDualPoint({n: np.zeros([sz[a] for a in _ROW_AXES[n]]) for n in SR_FAMILIES})


def sr_objective(sr: SRInstance, F: SRDualPoint) -> float:
    sz = sr.sizes()
    tot = 0.0
    for n in ("eta1", "eta2", "eta3", "eta4"):
        tot += float(np.broadcast_to(F[n], [sz[a] for a in _ROW_AXES[n]]).sum())
    return tot


def _worst(arr: np.ndarray, axes):
    arr = np.asarray(arr, dtype=float)
    k = int(np.argmax(arr))
    idx = np.unravel_index(k, arr.shape)
    return float(arr.reshape(-1)[k]), {a: int(i) for a, i in zip(axes, idx)}


# column of each variable family and the constraint it yields
def check_dpsr(sr: SRInstance, F: SRDualPoint, tol: float = 1e-10) -> FeasibilityReport:
    """Worst residual of (D1)-(D11); positive means violated."""
    sz = sr.sizes()
    full = {n: np.broadcast_to(F[n], [sz[a] for a in _ROW_AXES[n]]) for n in SR_FAMILIES}
    ax = _ROW_AXES

    def s_(name, keep):
        return _sum_to(full[name], ax[name], keep)

    res, wit = {}, {}

    def add(tag, lhs_terms, rhs=None, rhs_axes=()):
        # lhs_terms: list of (array, axes, sign)
        axes = []
        for _, a, _ in lhs_terms:
            axes += [t for t in a if t not in axes]
        axes += [t for t in rhs_axes if t not in axes]
        axes = tuple(axes)
        tot = np.zeros([sz[a] for a in axes])
        for arr, a, sign in lhs_terms:
            tot = tot + sign * _align(arr, a, axes)
        if rhs is not None:
            tot = tot - _align(rhs, rhs_axes, axes)
        res[tag], wit[tag] = _worst(tot, axes)

    add("D1", [(full["eta1"], ("s",), 1), (full["delta1"], ax["delta1"], -1)])
    d3s, a3 = s_("delta3", ("h1", "y1"))
    add("D2", [(full["eta2"], ("y1",), 1), (d3s, a3, -1)])
    d2s, a2 = s_("delta2", ("h2", "y1", "y2"))
    add("D3", [(full["eta3"], ("y1", "y2"), 1), (d2s, a2, -1)])
    add("D4", [(full["lam_a"], ax["lam_a"], 1), (full["lam_b"], ax["lam_b"], 1), (full["lam_c"], ax["lam_c"], 1)],
        _sr_weight(sr), _VAR_AXES["A0"])
    lc, alc = s_("lam_c", ("s", "x1", "x2", "y1", "h1"))
    add("D5", [(full["mu"], ax["mu"], 1), (lc, alc, -1)], None, ("h1",))
    mu, amu = s_("mu", ("s", "x1", "x2"))
    add("D6", [(full["delta1"], ax["delta1"], 1), (mu, amu, -1)])
    add("D7", [(full["delta2"], ax["delta2"], 1), (full["theta"], ax["theta"], -1)])
    gm, agm = s_("gamma", ("x2", "s", "h1", "y1"))
    add("D8", [(full["delta3"], ax["delta3"], 1), (gm, agm, -1)])
    add("D9", [(full["theta"], ax["theta"], 1), (full["lam_b"], ax["lam_b"], -1)])
    add("D10", [(full["gamma"], ax["gamma"], 1), (full["lam_a"], ax["lam_a"], -1)])
    add("D11", [(full["eta4"], ("s",), 1)])
    return FeasibilityReport(res, wit, tol)


def _pow2(t) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.power(2.0, np.asarray(t, dtype=float))


def appendix_certificate(sr: SRInstance, tilted1: TiltedTable, tilted2: TiltedTable,
                         gamma1: float, gamma2: float) -> SRDualPoint:
    """Dual point whose objective is the corrected joint-event bound at (gamma1, gamma2).

    With a = 2^{j1 - gamma1} / M1 and b = 2^{j2 - gamma2} / (M1 M2), the source
    weight is c(s) = 1 when a >= 1 or b >= 1 and (a + b) / 2 otherwise.
    """
    sz = sr.sizes()
    ps = sr.ps
    M1, M2 = sr.M1, sr.M2
    j1 = np.asarray(tilted1.j, dtype=float)
    j2 = np.asarray(tilted2.j, dtype=float)
    a = _pow2(j1 - gamma1 - math.log2(M1))
    b = _pow2(j2 - gamma2 - math.log2(M1 * M2))
    hit = (a >= 1) | (b >= 1)
    c = np.where(hit, 1.0, 0.5 * (np.where(hit, 0, a) + np.where(hit, 0, b)))
    ok1 = (sr.d1 <= sr.D1).astype(float)  # (s, h1)
    ok2 = (sr.d2 <= sr.D2).astype(float)
    e1 = np.eye(M1)
    e2 = np.eye(M2)
    pc = ps * c
    pa = ps * a  # = P(s) 2^{j1 - gamma1} / M1
    pb = ps * b
    shape = lambda n: [sz[t] for t in _ROW_AXES[n]]

    def on(name, *factors):
        tgt = _ROW_AXES[name]
        v = np.ones([1] * len(tgt))
        for arr, axes in factors:
            v = v * _align(arr, axes, tgt)
        return np.broadcast_to(v, shape(name)).copy()

    vals = {
        "eta1": pc.copy(),
        "eta2": np.full(M1, -_pow2(-gamma1) / M1),
        "eta3": np.full((M1, M2), -_pow2(-gamma2) / (M1 * M2)),
        "eta4": np.zeros(sz["s"]),
        "lam_c": on("lam_c", (pc, ("s",)), (e1, ("x1", "y1")), (e2, ("x2", "y2"))),
        "mu": on("mu", (pc, ("s",)), (e1, ("x1", "y1"))),
        "delta1": on("delta1", (pc, ("s",))),
        "lam_a": on("lam_a", (-pa, ("s",)), (e2, ("x2", "y2")), (ok1, ("s", "h1")), (ok2, ("s", "h2"))),
        "lam_b": on("lam_b", (-pb, ("s",)), (ok1, ("s", "h1")), (ok2, ("s", "h2"))),
        "gamma": on("gamma", (-pa, ("s",)), (e2, ("x2", "y2")), (ok1, ("s", "h1"))),
        "theta": on("theta", (-pb, ("s",)), (ok2, ("s", "h2"))),
        "delta3": on("delta3", (-pa, ("s",)), (ok1, ("s", "h1"))),
        "delta2": on("delta2", (-pb, ("s",)), (ok2, ("s", "h2"))),
    }
    return SRDualPoint(vals)


def _zhou_value(ps, j1, j2, log2M1, log2M12, g1, g2, correction: bool) -> np.ndarray:
    """Bound on broadcast grids g1, g2 (float arrays, +inf allowed)."""
    g1 = np.asarray(g1, dtype=float)[..., None]
    g2 = np.asarray(g2, dtype=float)[..., None]
    with np.errstate(over="ignore", invalid="ignore"):
        la = j1 - log2M1 - g1  # log2 a
        lb = j2 - log2M12 - g2
        hit = (la >= 0) | (lb >= 0)
        val = (ps * hit).sum(axis=-1)
        if correction:
            corr = np.where(hit, 0.0, 0.5 * (_pow2(np.minimum(la, 0)) + _pow2(np.minimum(lb, 0))))
            corr = np.where(np.isnan(corr), 0.0, corr)
            val = val + (ps * corr).sum(axis=-1)
    return val - _pow2(-g1[..., 0]) - _pow2(-g2[..., 0])


def _inclusive(g: np.ndarray) -> np.ndarray:
    return g - EDGE * np.maximum(1.0, np.abs(g))


def zhou_improved_bound(sr: SRInstance, tilted1: TiltedTable, tilted2: TiltedTable, gammas1=None,
                        gammas2=None, correction: bool = True, points: int = 128, refine: bool = True) -> BoundResult:
    """Joint excess-distortion converse, supremum over (gamma1, gamma2).

    Candidates are a ``points`` x ``points`` grid with one refinement pass
    around its best cell, plus every pair of thresholds
    gamma1 = j1(s) - log M1 and gamma2 = j2(s') - log M1 M2 (and +inf), where
    the exact supremum lies.  ``correction=False`` drops the (a + b) / 2 term.
    """
    ps = sr.ps
    j1 = np.asarray(tilted1.j, dtype=float)
    j2 = np.asarray(tilted2.j, dtype=float)
    if j1.shape != ps.shape or j2.shape != ps.shape:
        raise ValueError("tilted tables must have one entry per source symbol")
    l1, l12 = math.log2(sr.M1), math.log2(sr.M1 * sr.M2)
    keep = ps > 0
    ps, j1, j2 = ps[keep], j1[keep], j2[keep]
    t1 = np.unique(j1 - l1)
    t2 = np.unique(j2 - l12)

    def f(G1, G2):
        return _zhou_value(ps, j1, j2, l1, l12, G1, G2, correction)

    if gammas1 is None:
        gammas1 = gamma_grid(t1.min() - 4, t1.max() + 4, points)
    if gammas2 is None:
        gammas2 = gamma_grid(t2.min() - 4, t2.max() + 4, points)
    gammas1 = np.asarray(gammas1, dtype=float)
    gammas2 = np.asarray(gammas2, dtype=float)
    G1, G2 = np.meshgrid(gammas1, gammas2, indexing="ij")
    vals = f(G1, G2)
    k = int(np.argmax(vals))
    best = (float(vals.reshape(-1)[k]), float(G1.reshape(-1)[k]), float(G2.reshape(-1)[k]))
    if refine and len(gammas1) > 2 and len(gammas2) > 2:
        i, jx = np.unravel_index(k, vals.shape)
        i = min(max(i, 1), len(gammas1) - 2)
        jx = min(max(jx, 1), len(gammas2) - 2)
        r1 = np.linspace(gammas1[i - 1], gammas1[i + 1], points)
        r2 = np.linspace(gammas2[jx - 1], gammas2[jx + 1], points)
        R1, R2 = np.meshgrid(r1, r2, indexing="ij")
        rv = f(R1, R2)
        kk = int(np.argmax(rv))
        if rv.reshape(-1)[kk] > best[0]:
            best = (float(rv.reshape(-1)[kk]), float(R1.reshape(-1)[kk]), float(R2.reshape(-1)[kk]))
    c1 = np.concatenate([_inclusive(t1), [np.inf]])
    c2 = np.concatenate([_inclusive(t2), [np.inf]])
    L1, L2 = np.meshgrid(c1, c2, indexing="ij")
    lv = f(L1, L2)
    kk = int(np.argmax(lv))
    if lv.reshape(-1)[kk] > best[0]:
        best = (float(lv.reshape(-1)[kk]), float(L1.reshape(-1)[kk]), float(L2.reshape(-1)[kk]))
    family = "zhou-improved" if correction else "zhou"
    return BoundResult(best[0], {"gamma1": best[1], "gamma2": best[2]}, family, FLOAT,
                       {"grid_max": float(vals.max())})


def zhou_pointwise(sr: SRInstance, tilted1: TiltedTable, tilted2: TiltedTable, gamma1, gamma2,
                   correction: bool = True) -> np.ndarray:
    ps = sr.ps
    keep = ps > 0
    return _zhou_value(ps[keep], np.asarray(tilted1.j, dtype=float)[keep], np.asarray(tilted2.j, dtype=float)[keep],
                       math.log2(sr.M1), math.log2(sr.M1 * sr.M2), gamma1, gamma2, correction)


def refinability_diagnostic(sr: SRInstance, tol: float = 1e-3) -> dict:
    """Necessary-condition check for successive refinability, with a warning on failure.

    When both stages share one reproduction alphabet, the stage-one optimal
    reproduction must be reachable from the stage-two one through some channel
    P(h1 | h2).  We test this by a least-squares fit of the stage-one optimal
    backward channel P(h1 | s) by P(h2 | s) composed with a stochastic matrix.
    Any failure to evaluate the stages is reported rather than guessed around.
    """
    out = {"consistent": None, "residual": None, "reason": ""}
    try:
        r1 = rate_distortion(sr.source, sr.d1, sr.D1)
        r2 = rate_distortion(sr.source, sr.d2, sr.D2)
    except Exception as exc:  # noqa: BLE001 - diagnostic only
        out["reason"] = f"rate-distortion unavailable: {exc}"
        warnings.warn(f"successive refinability not checked: {exc}", stacklevel=2)
        return out
    out["R1"], out["R2"] = r1.R, r2.R
    if r2.R + 1e-9 < r1.R:
        out["consistent"] = False
        out["reason"] = "stage-two rate below stage-one rate"
    else:
        from scipy.optimize import nnls

        K1 = np.asarray(r1.kernel.matrix, dtype=float)  # (s, h1)
        K2 = np.asarray(r2.kernel.matrix, dtype=float)  # (s, h2)
        n1, n2 = K1.shape[1], K2.shape[1]
        # K1 ~= K2 @ T with T >= 0 row-stochastic; row sums enforced by heavy penalty rows
        A = np.kron(np.eye(n1), K2)  # unknowns T[:, h1] stacked by column
        pen = 1e3 * np.kron(np.ones((1, n1)), np.eye(n2))
        Afull = np.vstack([A, pen])
        bfull = np.concatenate([K1.T.reshape(-1), 1e3 * np.ones(n2)])
        _, resid = nnls(Afull, bfull)
        out["residual"] = float(resid)
        out["consistent"] = bool(resid <= tol)
        if not out["consistent"]:
            out["reason"] = "stage-one optimizer is not a degraded version of stage two"
    if out["consistent"] is False:
        warnings.warn(f"instance may not be successively refinable: {out['reason']}", stacklevel=2)
    return out


__all__ = ["NetworkInstance", "NetworkError", "LiftSets", "preset", "build_lpn", "row_keys", "SRInstance",
           "SRCode", "SR_VARS", "SR_ROWS", "SR_FAMILIES", "build_lpsr", "lift_code", "sr_loss", "random_sr_code",
           "sr_oracle", "SRDualPoint", "sr_zero_point", "sr_objective", "check_dpsr", "appendix_certificate",
           "zhou_improved_bound", "zhou_pointwise", "refinability_diagnostic", "LPN", "LPSR"]
