"""Domain types for sources, channels, losses and codes, plus shared numeric kernels.

Two numeric backends are supported everywhere: ``float`` (numpy float64
arrays) and ``rational`` (numpy object arrays of ``gmpy2.mpq``).  Values
entering rational mode may be ints, ``Fraction``, ``mpq`` or strings
``"p/q"``.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from gmpy2 import mpq

FLOAT = "float"
RATIONAL = "rational"
MODES = (FLOAT, RATIONAL)

DEFAULT_TUPLE_CAP = 2**16
RATIONAL_DEFAULT_TUPLES = 4096
FLOAT_SUM_TOL = 1e-12


class CapExceeded(ValueError):
    """A dense construction would exceed the configured size cap."""


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar helpers


def exact(x) -> mpq:
    """Convert ``x`` to an exact rational."""
    if isinstance(x, str):
        return mpq(x.strip())
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, (np.floating, float)):
        return mpq(float(x))
    if isinstance(x, np.integer):
        return mpq(int(x))
    return mpq(x)


def to_fraction(x) -> Fraction:
    q = exact(x)
    return Fraction(int(q.numerator), int(q.denominator))


def to_float(x) -> float:
    if isinstance(x, str):
        return float(Fraction(x))
    return float(x)


def resolve_mode(mode: str | None, n_tuples: int | None = None) -> str:
    """Pick a backend: explicit argument, then ``FBC_MODE``, then size rule."""
    if mode is None:
        mode = os.environ.get("FBC_MODE") or None
    if mode is None:
        if n_tuples is not None and n_tuples <= RATIONAL_DEFAULT_TUPLES:
            return RATIONAL
        return FLOAT
    if mode not in MODES:
        raise ValueError(f"unknown numeric mode {mode!r}")
    return mode


def as_array(values, mode: str) -> np.ndarray:
    """Coerce nested values into a float64 or mpq-object array."""
    if mode == RATIONAL:
        arr = np.asarray(values, dtype=object)
        out = np.empty(arr.shape, dtype=object)
        flat_in = arr.reshape(-1)
        flat_out = out.reshape(-1)
        for i, v in enumerate(flat_in):
            flat_out[i] = exact(v)
        return out
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=float)
    flat_in = arr.reshape(-1)
    flat_out = out.reshape(-1)
    for i, v in enumerate(flat_in):
        flat_out[i] = to_float(v)
    return out


def mode_of(*arrays) -> str:
    for a in arrays:
        if isinstance(a, np.ndarray) and a.dtype == object:
            return RATIONAL
    return FLOAT


def zeros(shape, mode: str) -> np.ndarray:
    if mode == RATIONAL:
        out = np.empty(shape, dtype=object)
        out.fill(mpq(0))
        return out
    return np.zeros(shape)


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def scalar(x, mode: str):
    return exact(x) if mode == RATIONAL else to_float(x)


# ---------------------------------------------------------------------------
# log-domain signed numbers


def log_sum_exp(logs: Sequence[float], signs: Sequence[int] | None = None) -> tuple[int, float]:
    """Signed sum of exp(logs) as (sign, log|sum|), with compensated summation."""
    logs = [float(v) for v in logs]
    if signs is None:
        signs = [1] * len(logs)
    live = [(s, v) for s, v in zip(signs, logs) if s != 0 and v != -math.inf]
    if not live:
        return 0, -math.inf
    top = max(v for _, v in live)
    if top == math.inf:
        pos = any(s > 0 and v == math.inf for s, v in live)
        neg = any(s < 0 and v == math.inf for s, v in live)
        if pos and neg:
            return 0, math.nan
        return (1 if pos else -1), math.inf
    total = math.fsum(s * math.exp(v - top) for s, v in live)
    if total == 0:
        return 0, -math.inf
    return (1 if total > 0 else -1), top + math.log(abs(total))


@dataclass(frozen=True)
class LogNum:
    """Signed number stored as sign and natural log of the magnitude."""

    sign: int
    log: float

    @staticmethod
    def of(x: float) -> "LogNum":
        x = float(x)
        if x == 0:
            return LogNum(0, -math.inf)
        return LogNum(1 if x > 0 else -1, math.log(abs(x)))

    @staticmethod
    def exp(log_value: float, sign: int = 1) -> "LogNum":
        return LogNum(sign if log_value != -math.inf else 0, float(log_value))

    @staticmethod
    def total(terms: Iterable["LogNum"]) -> "LogNum":
        terms = list(terms)
        s, v = log_sum_exp([t.log for t in terms], [t.sign for t in terms])
        return LogNum(s, v)

    def __add__(self, other):
        other = other if isinstance(other, LogNum) else LogNum.of(other)
        return LogNum.total([self, other])

    __radd__ = __add__

    def __neg__(self):
        return LogNum(-self.sign, self.log)

    def __sub__(self, other):
        other = other if isinstance(other, LogNum) else LogNum.of(other)
        return self + (-other)

    def __rsub__(self, other):
        return LogNum.of(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, LogNum) else LogNum.of(other)
        if self.sign == 0 or other.sign == 0:
            return LogNum(0, -math.inf)
        return LogNum(self.sign * other.sign, self.log + other.log)

    __rmul__ = __mul__

    def __float__(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.log > 709.78:
            return self.sign * math.inf
        return self.sign * math.exp(self.log)

    def log2(self) -> float:
        return self.log / math.log(2)

    def __lt__(self, other):
        return _cmp(self, other) < 0

    def __le__(self, other):
        return _cmp(self, other) <= 0

    def __gt__(self, other):
        return _cmp(self, other) > 0

    def __ge__(self, other):
        return _cmp(self, other) >= 0


def _cmp(a: LogNum, b) -> int:
    b = b if isinstance(b, LogNum) else LogNum.of(b)
    d = a - b
    return d.sign


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Alphabet:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(v) for v in self.labels))

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels else str(i)

    def problems(self, name: str) -> list[str]:
        out = []
        if not isinstance(self.size, (int, np.integer)) or self.size < 1:
            out.append(f"alphabet {name} has size {self.size!r} (must be >= 1)")
        if self.labels is not None:
            if len(self.labels) != self.size:
                out.append(f"alphabet {name} has {len(self.labels)} labels for size {self.size}")
            if len(set(self.labels)) != len(self.labels):
                out.append(f"alphabet {name} has duplicate labels")
        return out


@dataclass(frozen=True)
class Distribution:
    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", frozen(self.mass))

    @staticmethod
    def of(values, mode: str = FLOAT) -> "Distribution":
        return Distribution(as_array(values, mode))

    @staticmethod
    def uniform(n: int, mode: str = FLOAT) -> "Distribution":
        return Distribution(as_array([mpq(1, n)] * n, mode))

    @property
    def mode(self) -> str:
        return mode_of(self.mass)

    def __len__(self):
        return len(self.mass)

    def problems(self, name: str = "distribution") -> list[str]:
        return _row_problems(self.mass, name)


def _row_problems(row: np.ndarray, name: str) -> list[str]:
    out = []
    if row.dtype != object and not np.all(np.isfinite(row)):
        return [f"{name} has non-finite mass"]
    if any(v < 0 for v in row):
        out.append(f"{name} has negative mass")
    total = row.sum()
    if row.dtype == object:
        ok = total == 1
    else:
        ok = abs(float(total) - 1.0) <= FLOAT_SUM_TOL
    if not ok:
        out.append(f"{name} mass sums to {float(total):.6g}")
    return out


@dataclass(frozen=True)
class ChannelKernel:
    """Row-stochastic matrix P(y|x), rows indexed by inputs."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", frozen(self.matrix))

    @staticmethod
    def of(rows, mode: str = FLOAT) -> "ChannelKernel":
        return ChannelKernel(as_array(rows, mode))

    @property
    def mode(self) -> str:
        return mode_of(self.matrix)

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[1]

    def row(self, x: int) -> Distribution:
        return Distribution(self.matrix[x])

    def problems(self, name: str = "channel") -> list[str]:
        if self.matrix.ndim != 2:
            return [f"{name} is not a matrix"]
        out = []
        for x in range(self.matrix.shape[0]):
            out.extend(_row_problems(self.matrix[x], f"{name} row {x}"))
        return out


@dataclass(frozen=True)
class LossFunction:
    """Loss kappa(s,x,y,shat): a dense table, or distortion d(s,shat) with optional level.

    With a level the loss is the excess-distortion indicator 1{d > level};
    without one the loss is d itself.
    """

    table: np.ndarray | None = None
    distortion: np.ndarray | None = None
    level: object = None

    def __post_init__(self):
        if (self.table is None) == (self.distortion is None):
            raise ValueError("give exactly one of table or distortion")
        if self.table is not None:
            object.__setattr__(self, "table", frozen(self.table))
        if self.distortion is not None:
            object.__setattr__(self, "distortion", frozen(self.distortion))

    @staticmethod
    def from_table(table, mode: str = FLOAT) -> "LossFunction":
        return LossFunction(table=as_array(table, mode))

    @staticmethod
    def excess(distortion, level, mode: str = FLOAT) -> "LossFunction":
        return LossFunction(distortion=as_array(distortion, mode), level=scalar(level, mode))

    @staticmethod
    def expected(distortion, mode: str = FLOAT) -> "LossFunction":
        return LossFunction(distortion=as_array(distortion, mode))

    @property
    def mode(self) -> str:
        return mode_of(self.table, self.distortion)

    @property
    def is_factored(self) -> bool:
        return self.distortion is not None

    @property
    def is_excess(self) -> bool:
        return self.distortion is not None and self.level is not None

    def kappa_sshat(self) -> np.ndarray:
        """kappa as an |S| x |Shat| matrix (factored forms only)."""
        if self.distortion is None:
            raise ValueError("loss is a dense table")
        if self.level is None:
            return self.distortion
        d = self.distortion
        if d.dtype == object:
            return np.where(d > self.level, mpq(1), mpq(0)).astype(object)
        return (d > self.level).astype(float)

    def broadcast(self) -> np.ndarray:
        """kappa in an array broadcastable to (S, X, Y, Shat)."""
        if self.table is not None:
            return self.table
        k = self.kappa_sshat()
        return k[:, None, None, :]

    def dense(self, shape) -> np.ndarray:
        return np.broadcast_to(self.broadcast(), tuple(shape)).copy()

    def problems(self, shape) -> list[str]:
        out = []
        arr = self.table if self.table is not None else self.distortion
        if arr.dtype != object and not np.all(np.isfinite(arr)):
            out.append("non-finite loss")
        if self.table is not None:
            if tuple(self.table.shape) != tuple(shape):
                out.append(f"loss table shape {self.table.shape} != {tuple(shape)}")
        else:
            want = (shape[0], shape[3])
            if tuple(self.distortion.shape) != want:
                out.append(f"distortion shape {self.distortion.shape} != {want}")
            if self.level is not None:
                if arr.dtype == object or np.all(np.isfinite(arr)):
                    if np.any(arr < 0):
                        out.append("excess-distortion form needs d >= 0")
                if self.level < 0:
                    out.append("excess-distortion level must be >= 0")
        return out


@dataclass(frozen=True)
class ProblemInstance:
    S: Alphabet
    X: Alphabet
    Y: Alphabet
    Shat: Alphabet
    source: Distribution
    channel: ChannelKernel
    loss: LossFunction

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.S.size, self.X.size, self.Y.size, self.Shat.size)

    @property
    def n_tuples(self) -> int:
        a, b, c, d = self.shape
        return a * b * c * d

    @property
    def mode(self) -> str:
        return mode_of(self.source.mass, self.channel.matrix, self.loss.table, self.loss.distortion)

    def weight(self) -> np.ndarray:
        """kappa * P_S * P_{Y|X}, broadcastable to (S, X, Y, Shat)."""
        ps = self.source.mass[:, None, None, None]
        py = self.channel.matrix[None, :, :, None]
        return self.loss.broadcast() * ps * py


@dataclass(frozen=True)
class DeterministicCode:
    encoder: tuple[int, ...]
    decoder: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(int(v) for v in self.encoder))
        object.__setattr__(self, "decoder", tuple(int(v) for v in self.decoder))

    def kernels(self, inst: ProblemInstance, mode: str | None = None):
        """The 0/1 stochastic matrices Q_{X|S} and Q_{Shat|Y} of this code."""
        mode = mode or inst.mode
        one = mpq(1) if mode == RATIONAL else 1.0
        qx = zeros((inst.S.size, inst.X.size), mode)
        qs = zeros((inst.Y.size, inst.Shat.size), mode)
        for s, x in enumerate(self.encoder):
            qx[s, x] = one
        for y, sh in enumerate(self.decoder):
            qs[y, sh] = one
        return qx, qs


@dataclass(frozen=True)
class ValidationReport:
    failures: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.failures

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# operations


def validate_instance(inst: ProblemInstance) -> ValidationReport:
    fails: list[str] = []
    for name, a in (("S", inst.S), ("X", inst.X), ("Y", inst.Y), ("Shat", inst.Shat)):
        fails.extend(a.problems(name))
    if len(inst.source.mass) != inst.S.size:
        fails.append(f"source has {len(inst.source.mass)} entries for |S|={inst.S.size}")
    else:
        fails.extend(inst.source.problems("source"))
    if inst.channel.matrix.shape != (inst.X.size, inst.Y.size):
        fails.append(f"channel shape {inst.channel.matrix.shape} != ({inst.X.size}, {inst.Y.size})")
    else:
        fails.extend(inst.channel.problems())
    fails.extend(inst.loss.problems(inst.shape))
    return ValidationReport(tuple(fails))


def check_code(inst: ProblemInstance, code: DeterministicCode) -> None:
    if len(code.encoder) != inst.S.size or len(code.decoder) != inst.Y.size:
        raise DimensionMismatch("code lengths do not match |S| and |Y|")
    if any(not 0 <= x < inst.X.size for x in code.encoder):
        raise DimensionMismatch("encoder value outside X")
    if any(not 0 <= v < inst.Shat.size for v in code.decoder):
        raise DimensionMismatch("decoder value outside Shat")


def expected_loss(inst: ProblemInstance, code: DeterministicCode):
    """E[kappa(S, f(S), Y, g(Y))] for a deterministic code."""
    check_code(inst, code)
    kap = inst.loss.broadcast()
    ps = inst.source.mass
    py = inst.channel.matrix
    terms = []
    for s, x in enumerate(code.encoder):
        for y in range(inst.Y.size):
            k = kap[s if kap.shape[0] > 1 else 0, x if kap.shape[1] > 1 else 0,
                    y if kap.shape[2] > 1 else 0, code.decoder[y]]
            terms.append(k * ps[s] * py[x, y])
    if inst.mode == RATIONAL:
        return to_fraction(sum(terms, mpq(0)))
    return math.fsum(float(t) for t in terms)


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.multiply.outer(a, b)
    return out.transpose(0, 2, 1, 3).reshape(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])


def memoryless_product(base: ChannelKernel, n: int, cap: int = DEFAULT_TUPLE_CAP) -> ChannelKernel:
    """n-fold product kernel over product alphabets (first coordinate most significant)."""
    if n < 1:
        raise ValueError("blocklength must be >= 1")
    nx, ny = base.matrix.shape
    if nx**n * ny**n > cap:
        raise CapExceeded(f"product kernel has {nx**n * ny**n} entries > cap {cap}")
    m = base.matrix
    out = m
    for _ in range(n - 1):
        out = _kron(out, m)
    return ChannelKernel(out)


# ---------------------------------------------------------------------------
# builders


def product_labels(q: int, n: int) -> tuple[str, ...]:
    sep = "" if q <= 10 else ","
    return tuple(sep.join(str(d) for d in t) for t in itertools.product(range(q), repeat=n))


def digits(index: int, q: int, n: int) -> tuple[int, ...]:
    out = []
    for _ in range(n):
        out.append(index % q)
        index //= q
    return tuple(reversed(out))


def hamming_matrix(q: int, n: int) -> np.ndarray:
    """Integer Hamming distances between all pairs of q-ary words of length n."""
    words = np.array(list(itertools.product(range(q), repeat=n)), dtype=int).reshape(q**n, n)
    return (words[:, None, :] != words[None, :, :]).sum(axis=2)


def normalized_hamming(q: int, n: int, mode: str = FLOAT) -> np.ndarray:
    h = hamming_matrix(q, n)
    if mode == RATIONAL:
        out = np.empty(h.shape, dtype=object)
        for idx in np.ndindex(h.shape):
            out[idx] = mpq(int(h[idx]), n)
        return out
    return h / n


def qary_symmetric(q: int, eps, mode: str = FLOAT) -> ChannelKernel:
    e = scalar(eps, mode)
    one = scalar(1, mode)
    off = e / (q - 1) if q > 1 else e
    rows = [[(one - e) if x == y else off for y in range(q)] for x in range(q)]
    return ChannelKernel.of(rows, mode)


def bsc(eps, mode: str = FLOAT) -> ChannelKernel:
    return qary_symmetric(2, eps, mode)


def identity_channel(m: int, mode: str = FLOAT) -> ChannelKernel:
    return ChannelKernel.of(np.eye(m, dtype=int).tolist(), mode)


def matched_instance(q: int, n: int, eps, mode: str | None = None, cap: int = 2**20) -> ProblemInstance:
    """Uniform q-ary source over a q-ary symmetric channel with per-letter Hamming loss."""
    size = q**n
    mode = resolve_mode(mode, size**4)
    kernel = memoryless_product(qary_symmetric(q, eps, mode), n, cap=max(cap, size * size))
    labels = product_labels(q, n)
    a = Alphabet(size, labels)
    return ProblemInstance(a, a, a, a, Distribution.uniform(size, mode), kernel,
                           LossFunction.expected(normalized_hamming(q, n, mode), mode))


def channel_coding_instance(channel: ChannelKernel, M: int) -> ProblemInstance:
    """M equiprobable messages, loss 1{s != shat} written as excess distortion at level 0."""
    mode = channel.mode
    d = [[0 if s == t else 1 for t in range(M)] for s in range(M)]
    return ProblemInstance(Alphabet(M), Alphabet(channel.n_inputs), Alphabet(channel.n_outputs),
                           Alphabet(M), Distribution.uniform(M, mode), channel,
                           LossFunction.excess(d, 0, mode))


def bms_source(k: int, p, mode: str = FLOAT) -> Distribution:
    """k i.i.d. Bernoulli(p) bits; symbol index enumerates words with first bit most significant."""
    pp = scalar(p, mode)
    one = scalar(1, mode)
    w = hamming_matrix(2, k)[0]
    vals = [pp ** int(a) * (one - pp) ** int(k - a) for a in w]
    return Distribution.of(vals, mode)


def bms_bsc_instance(k: int, n: int, p, eps, level, mode: str = FLOAT) -> ProblemInstance:
    """BMS(p) of k bits over BSC(eps)^n with excess bitwise Hamming distortion."""
    src = bms_source(k, p, mode)
    ch = memoryless_product(bsc(eps, mode), n, cap=2**24)
    S = Alphabet(2**k, product_labels(2, k))
    X = Alphabet(2**n, product_labels(2, n))
    return ProblemInstance(S, X, X, S, src, ch,
                           LossFunction.excess(normalized_hamming(2, k, mode), level, mode))


def random_stochastic(rng: np.random.Generator, rows: int, cols: int, positive: bool = True) -> np.ndarray:
    m = rng.dirichlet(np.ones(cols), size=rows)
    if positive:
        m = 0.9 * m + 0.1 / cols
    return m / m.sum(axis=1, keepdims=True)


def random_instance(seed, sizes=(2, 2, 2, 2), loss: str = "table", positive: bool = True) -> ProblemInstance:
    """Random float instance; ``loss`` is ``table`` (uniform [0,1]) or ``excess``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    nS, nX, nY, nH = sizes
    src = random_stochastic(rng, 1, nS, positive)[0]
    ch = random_stochastic(rng, nX, nY, positive)
    if loss == "table":
        lf = LossFunction(table=rng.random((nS, nX, nY, nH)))
    elif loss == "excess":
        d = rng.integers(0, 3, size=(nS, nH)).astype(float)
        lf = LossFunction(distortion=d, level=float(rng.integers(0, 2)))
    else:
        raise ValueError(loss)
    return ProblemInstance(Alphabet(nS), Alphabet(nX), Alphabet(nY), Alphabet(nH),
                           Distribution(src), ChannelKernel(ch), lf)


# ---------------------------------------------------------------------------
# instance files


def _encode(v):
    if isinstance(v, mpq):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return float(v)


def _encode_array(arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.ndim == 0:
        return _encode(arr[()])
    return [_encode_array(a) for a in arr]


def _alphabet_dict(a: Alphabet):
    return a.size if a.labels is None else {"size": a.size, "labels": list(a.labels)}


def _alphabet_of(v) -> Alphabet:
    if isinstance(v, dict):
        return Alphabet(int(v["size"]), v.get("labels"))
    return Alphabet(int(v))


def _has_strings(v) -> bool:
    if isinstance(v, str):
        return True
    if isinstance(v, list):
        return any(_has_strings(u) for u in v)
    return False


def instance_to_dict(inst: ProblemInstance) -> dict:
    out = {
        "alphabets": {"S": _alphabet_dict(inst.S), "X": _alphabet_dict(inst.X),
                      "Y": _alphabet_dict(inst.Y), "Shat": _alphabet_dict(inst.Shat)},
        "source": _encode_array(inst.source.mass),
        "channel": _encode_array(inst.channel.matrix),
    }
    if inst.loss.table is not None:
        out["loss"] = {"table": _encode_array(inst.loss.table)}
    else:
        lvl = inst.loss.level
        out["loss"] = {"distortion": _encode_array(inst.loss.distortion),
                       "level": None if lvl is None else _encode(lvl)}
    return out


def instance_from_dict(data: dict, mode: str | None = None) -> ProblemInstance:
    """Parse the JSON dialect; string probabilities select rational mode unless overridden."""
    if mode is None:
        mode = RATIONAL if _has_strings([data.get("source"), data.get("channel")]) else FLOAT
    al = data["alphabets"]
    S, X, Y, H = (_alphabet_of(al[k]) for k in ("S", "X", "Y", "Shat"))
    source = Distribution.of(data["source"], mode)
    channel = ChannelKernel.of(data["channel"], mode)
    loss = data["loss"]
    if "table" in loss:
        lf = LossFunction.from_table(loss["table"], mode)
    else:
        lvl = loss.get("level")
        lf = LossFunction(distortion=as_array(loss["distortion"], mode),
                          level=None if lvl is None else scalar(lvl, mode))
    return ProblemInstance(S, X, Y, H, source, channel, lf)


def save_instance(inst: ProblemInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=1)
        fh.write("\n")


def load_instance(path, mode: str | None = None) -> ProblemInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh), mode)
