"""Rate-distortion function, slope lambda*, and d-tilted information.

``rate_distortion`` runs Blahut-Arimoto at a fixed Lagrange slope beta and
bisects on beta until the expected distortion meets the target.  The converged
beta is lambda* (nats per unit distortion); it is never obtained by numerical
differentiation.  Rates and tilted information are reported in bits.

At the fixed point of the iteration, c(shat) = sum_s P_S(s) e^{-beta d(s,shat)} / Z(s)
is at most 1 with equality on the support of P_Shat*.  This c(shat) is exactly the
left side of the tilted inequality, so its excess over 1 serves as the
convergence diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core_model import ChannelKernel, Distribution, ProblemInstance, hamming_matrix

LN2 = math.log(2.0)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateDistortionSolution:
    R: float  # bits
    lam_star: float  # nats per unit distortion
    level: float
    reproduction: Distribution
    kernel: ChannelKernel | None
    iterations: int
    residual: float  # max_shat log c(shat)
    distortion_gap: float
    unit: str = "bits"

    @property
    def R_nats(self) -> float:
        return self.R * LN2


@dataclass(frozen=True)
class TiltedTable:
    j: np.ndarray  # bits, one entry per source symbol
    level: float
    lam_star: float
    unit: str = "bits"

    @property
    def j_nats(self) -> np.ndarray:
        return self.j * LN2

    def inequality(self, source: Distribution, d) -> np.ndarray:
        """E[exp(j_S(S) + lam* level - lam* d(S, shat))] for every shat."""
        ps = np.asarray(source.mass, dtype=float)
        d = np.asarray(d, dtype=float)
        logs = np.log(ps)[:, None] + self.j_nats[:, None] + self.lam_star * (self.level - d)
        with np.errstate(divide="ignore"):
            return np.exp(logsumexp(logs, axis=0))

    def mean(self, source: Distribution) -> float:
        return float(np.dot(np.asarray(source.mass, dtype=float), self.j))


def distortion_range(source: Distribution, d) -> tuple[float, float]:
    """(d_min, d_max): zero-rate and infinite-slope ends of the distortion axis."""
    ps = np.asarray(source.mass, dtype=float)
    d = np.asarray(d, dtype=float)
    return float(ps @ d.min(axis=1)), float((ps @ d).min())


def _ba(logps: np.ndarray, d: np.ndarray, beta: float, logq: np.ndarray, tol: float, max_iters: int):
    """Blahut-Arimoto at slope beta; returns (logq, log posterior, iterations, residual)."""
    A = -beta * d
    for it in range(1, max_iters + 1):
        logpost = logq[None, :] + A
        logZ = logsumexp(logpost, axis=1)
        logpost -= logZ[:, None]
        logc = logsumexp(logps[:, None] + A - logZ[:, None], axis=0)
        res = float(np.max(logc))
        if res < tol:
            return logq, logpost, it, res
        logq = logq + logc
        logq -= logsumexp(logq)
    raise ConvergenceError(f"Blahut-Arimoto did not converge in {max_iters} iterations (residual {res:.3g})")


def rate_distortion(source: Distribution, d, level: float, tol: float = 1e-12,
                    max_iters: int = 200000) -> RateDistortionSolution:
    """R_S(level) and its optimizer by Blahut-Arimoto plus bisection on the slope."""
    ps = np.asarray(source.mass, dtype=float)
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("distortion must be finite")
    dmin, dmax = distortion_range(source, d)
    level = float(level)
    if not dmin < level < dmax:
        raise ValueError(f"distortion level {level} outside the open interval ({dmin:.6g}, {dmax:.6g})")
    keep = ps > 0
    logps = np.log(ps[keep])
    dk = d[keep]
    nH = d.shape[1]
    logq = np.full(nH, -math.log(nH))
    iters = 0

    def at(beta, logq):
        nonlocal iters
        logq, logpost, it, res = _ba(logps, dk, beta, logq, tol, max_iters)
        iters += it
        D = float(np.sum(np.exp(logps[:, None] + logpost) * dk))
        return logq, logpost, res, D

    lo, hi = 0.0, 1.0
    logq, lp, res, D = at(hi, logq)
    while D > level:
        lo, hi = hi, hi * 2
        if hi > 1e6:
            raise ConvergenceError("slope search exceeded 1e6; the level is too close to d_min")
        logq, lp, res, D = at(hi, logq)
    state = (logq, lp, res, D, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        logq_m, lp_m, res_m, D_m = at(mid, state[0])
        if D_m > level:
            lo = mid
        else:
            hi = mid
            state = (logq_m, lp_m, res_m, D_m, mid)
        if abs(D_m - level) < 1e-13 or hi - lo < 1e-13 * max(1.0, hi):
            state = (logq_m, lp_m, res_m, D_m, mid)
            break
    logq, lp, res, D, beta = state
    # I(S; Shat*) with the posterior in nats, converted to bits
    post = np.exp(lp)
    mi = float(np.sum(np.exp(logps)[:, None] * post * (lp - logq[None, :])))
    kernel_full = np.zeros((len(ps), nH))
    kernel_full[keep] = post
    kernel_full[~keep] = np.exp(logq)
    return RateDistortionSolution(mi / LN2, beta, level, Distribution(np.exp(logq)), ChannelKernel(kernel_full),
                                  iters, res, abs(D - level))


def tilted(source: Distribution, d, level: float, rd: RateDistortionSolution | None = None,
           tol: float = 1e-8) -> TiltedTable:
    """j_S(s, level) = -log E[exp(lam* level - lam* d(s, Shat*))], in bits; j(s, 0) = -log P_S(s)."""
    ps = np.asarray(source.mass, dtype=float)
    d = np.asarray(d, dtype=float)
    level = float(level)
    if level == 0 and rd is None:
        with np.errstate(divide="ignore"):
            return TiltedTable(-np.log2(ps), 0.0, 0.0)
    rd = rd or rate_distortion(source, d, level)
    logq = np.log(np.maximum(np.asarray(rd.reproduction.mass, dtype=float), 1e-300))
    lam = rd.lam_star
    j_nats = -logsumexp(logq[None, :] + lam * (level - d), axis=1)
    table = TiltedTable(j_nats / LN2, level, lam)
    worst = float(np.max(table.inequality(source, d)))
    if worst > 1 + tol:
        raise ValueError(f"tilted inequality fails: max over shat is {worst:.12g} > 1")
    return table


def tilted_for_instance(inst: ProblemInstance, **kw) -> TiltedTable:
    """Tilted information for an excess-distortion instance (level 0 gives -log P_S)."""
    if not inst.loss.is_excess:
        raise ValueError("instance loss is not of excess-distortion form")
    return tilted(inst.source, np.asarray(inst.loss.distortion, dtype=float), float(inst.loss.level), **kw)


# ---------------------------------------------------------------------------
# binary memoryless source with bitwise Hamming distortion


def h2(x: float) -> float:
    if x <= 0 or x >= 1:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def bms_rate(p: float, level: float) -> float:
    """Per-letter R(d) = H(p) - H(d) bits for d < min(p, 1 - p), else 0."""
    if level >= min(p, 1 - p):
        return 0.0
    return h2(p) - h2(level)


def bms_lam_star(k: int, level: float) -> float:
    """Slope magnitude of k(H(p) - H(d)) in nats per unit of normalized distortion."""
    return k * math.log((1 - level) / level)


def bms_tilted(k: int, p: float, level: float) -> np.ndarray:
    """j_S(s, d) = kH(p) - kH(d) + (w_s - kp) log2((1-p)/p), indexed like bms_source."""
    w = hamming_matrix(2, k)[0].astype(float)
    return k * h2(p) - k * h2(level) + (w - k * p) * math.log2((1 - p) / p)


def bms_tilted_table(k: int, p: float, level: float) -> TiltedTable:
    return TiltedTable(bms_tilted(k, p, level), float(level), bms_lam_star(k, level))


__all__ = ["RateDistortionSolution", "TiltedTable", "ConvergenceError", "rate_distortion", "tilted",
           "tilted_for_instance", "distortion_range", "h2", "bms_rate", "bms_lam_star", "bms_tilted",
           "bms_tilted_table"]
