"""Certification mathematics: power means, confidence bounds on the top-two
vote probabilities, and the Renyi-divergence certified l2 radius.

For top-two probabilities ``pA >= pB`` and noise level ``sigma`` the radius
is

    L = sup_{alpha > 1} sqrt( -(2 sigma^2 / alpha)
                              * log(1 - 2 M_1(pA, pB) + 2 M_{1-alpha}(pA, pB)) )

where ``M_q`` is the two-argument power mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist

# alpha is searched as 1 + 10**u for u in [U_MIN, U_MAX], i.e. alpha in (1, 1e6]
U_MIN = -9.0
U_MAX = 6.0
GRID_POINTS = 400
GOLDEN_RTOL = 1e-10

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConfidenceBounds:
    pA_lower: float
    pB_upper: float
    beta: float
    method: str = "clopper-pearson/bonferroni"


@dataclass(frozen=True)
class CertifiedRadius:
    radius: float
    abstained: bool
    alpha_star: float = float("nan")
    clamped: bool = False


@dataclass(frozen=True)
class Certificate:
    prediction: int
    bounds: ConfidenceBounds
    radius: CertifiedRadius

    @property
    def abstained(self) -> bool:
        return self.radius.abstained


def _log_power_mean(q, log_a, log_b):
    """log M_q(a, b) for q < 0, stable for both tiny and huge |q|.

    Uses log((e^u + e^v)/2) = u + log1p(expm1(v - u)/2) with u >= v, which
    keeps precision as q -> 0 (where the mean tends to the geometric mean)
    and never overflows as q -> -inf (where it tends to min(a, b)).
    """
    u = q * log_a
    v = q * log_b
    hi = np.maximum(u, v)
    lo = np.minimum(u, v)
    return (hi + np.log1p(np.expm1(lo - hi) / 2.0)) / q


def power_mean(q: float, a: float, b: float) -> float:
    """Two-argument power mean ((a^q + b^q) / 2)^(1/q)."""
    if q == 0:
        raise ValueError("power mean with exponent 0 is not supported")
    if q > 0:
        return ((a**q + b**q) / 2.0) ** (1.0 / q)
    if a < 0 or b < 0:
        raise ValueError("negative-exponent power mean needs a, b >= 0")
    if a == 0 or b == 0:
        return 0.0
    return float(np.exp(_log_power_mean(q, math.log(a), math.log(b))))


def _check_order(pA, pB):
    if pA < pB:
        raise ValueError(f"expected pA >= pB, got pA={pA}, pB={pB}")
    if not (0.0 <= pB and pA <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")


def _radius_sq(pA: float, pB: float, sigma: float, alpha):
    """Vectorised L^2(alpha); returns (value, clamped-mask)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    m1 = (pA + pB) / 2.0
    if pB == 0.0:
        mq = np.zeros_like(alpha)
    else:
        mq = np.exp(_log_power_mean(1.0 - alpha, math.log(pA), math.log(pB)))
    arg = 1.0 - 2.0 * m1 + 2.0 * mq
    clamped = arg <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_arg = np.log1p(2.0 * (mq - m1))
        val = -(2.0 * sigma * sigma / alpha) * log_arg
    val = np.where(clamped | ~np.isfinite(val), 0.0, np.maximum(val, 0.0))
    return val, clamped


def radius_at_alpha(pA: float, pB: float, sigma: float, alpha: float) -> float:
    if not alpha > 1:
        raise ValueError("alpha must be > 1")
    _check_order(pA, pB)
    if sigma == 0 or pA == pB:
        return 0.0
    val, _ = _radius_sq(pA, pB, sigma, alpha)
    return float(np.sqrt(val))


def _golden_max(f, lo, hi, rtol):
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    while abs(hi - lo) > rtol * max(1.0, abs(lo) + abs(hi)):
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def certified_radius(pA: float, pB: float, sigma: float) -> CertifiedRadius:
    """Maximise the radius over alpha: log-spaced grid, then golden section
    on the bracket around the best grid point."""
    _check_order(pA, pB)
    if pA <= pB:
        return CertifiedRadius(0.0, True)
    if sigma == 0:
        return CertifiedRadius(0.0, False)

    us = np.linspace(U_MIN, U_MAX, GRID_POINTS)
    vals, clamped = _radius_sq(pA, pB, sigma, 1.0 + 10.0**us)
    if clamped.any():
        # pA == 1, pB == 0 exactly: the log argument vanishes; fail conservative
        return CertifiedRadius(0.0, False, float("nan"), clamped=True)
    best = int(np.argmax(vals))
    lo = us[max(best - 1, 0)]
    hi = us[min(best + 1, GRID_POINTS - 1)]

    def f(u):
        return float(_radius_sq(pA, pB, sigma, 1.0 + 10.0**u)[0])

    u_star, v_star = _golden_max(f, lo, hi, GOLDEN_RTOL)
    if vals[best] > v_star:
        u_star, v_star = us[best], float(vals[best])
    return CertifiedRadius(float(math.sqrt(v_star)), False, float(1.0 + 10.0**u_star))


def clopper_pearson_lower(k: int, n: int, level: float) -> float:
    """One-sided lower bound holding with probability >= 1 - level."""
    if k == 0:
        return 0.0
    return float(beta_dist.ppf(level, k, n - k + 1))


def clopper_pearson_upper(k: int, n: int, level: float) -> float:
    """One-sided upper bound holding with probability >= 1 - level."""
    if k == n:
        return 1.0
    return float(beta_dist.ppf(1.0 - level, k + 1, n - k))


def multinomial_ci(counts, beta: float) -> ConfidenceBounds:
    """Simultaneous bounds on the top and runner-up label probabilities.

    Each bound is an exact Clopper-Pearson bound at level ``beta / 2``, so by
    Bonferroni both hold jointly with probability at least ``1 - beta``.
    ``counts`` is a :class:`~tscert.smoothing.SampleCounts` or a plain vector.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    vec = np.asarray(getattr(counts, "counts", counts), dtype=np.int64)
    n = int(vec.sum())
    if n < 1:
        raise ValueError("need at least one sample")
    a, b = top_two(vec)
    return ConfidenceBounds(
        clopper_pearson_lower(int(vec[a]), n, beta / 2.0),
        clopper_pearson_upper(int(vec[b]), n, beta / 2.0),
        beta,
    )


def top_two(counts) -> tuple:
    """Indices of the largest and second-largest counts, ties to lower index."""
    vec = np.asarray(counts)
    order = np.lexsort((np.arange(vec.size), -vec))
    return int(order[0]), int(order[1]) if vec.size > 1 else int(order[0])


def certify_counts(counts, sigma: float, beta: float) -> Certificate:
    vec = np.asarray(getattr(counts, "counts", counts), dtype=np.int64)
    a, _ = top_two(vec)
    bounds = multinomial_ci(vec, beta)
    if bounds.pA_lower <= bounds.pB_upper:
        radius = CertifiedRadius(0.0, True)
    else:
        radius = certified_radius(bounds.pA_lower, bounds.pB_upper, sigma)
    return Certificate(a, bounds, radius)


def emit_radius_surface(sigma: float, alphas, pA_grid) -> list:
    """Rows ``(alpha, p_a, l_squared)`` with the two-class convention pB = 1 - pA."""
    rows = []
    for alpha in alphas:
        for pA in pA_grid:
            pA = float(pA)
            pB = 1.0 - pA
            if pA < pB:
                raise ValueError("surface grid must have p_a >= 0.5")
            r = radius_at_alpha(pA, pB, sigma, float(alpha))
            rows.append((float(alpha), pA, r * r))
    return rows


def write_radius_surface(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("alpha\tp_a\tl_squared\n")
        for alpha, pA, l2 in rows:
            fh.write(f"{alpha!r}\t{pA!r}\t{l2!r}\n")
