"""Guarantee arithmetic for sampled optimization: the regularized
incomplete beta function, its inverse, the binomial tail, and solving a
confidence level for the admissible violation mass.

All routines are dependency-free scalar numerics.  The beta integral uses
the standard continued-fraction evaluation (modified Lentz) with the
symmetry switch at x > (a+1)/(a+b+2); the inverse brackets by bisection
and polishes with Newton steps.  The binomial tail is summed in log space
and cross-checked on every call against the beta-integral identity
tail(eps, k, N) == 1 - I_eps(k+1, N-k).
"""

import math
from dataclasses import dataclass

__all__ = [
    "ConfidenceQuery",
    "reg_inc_beta",
    "inv_reg_inc_beta",
    "phi",
    "epsilon_for_confidence",
]

_CF_MAX_ITER = 500
_CF_EPS = 1e-15
_CF_TINY = 1e-300  # modified-Lentz underflow guard
_IDENTITY_GATE = 1e-9


@dataclass(frozen=True)
class ConfidenceQuery:
    """Target confidence beta in (0,1) for a tail with k terms at N samples."""

    beta: float
    k: int
    n_samples: int

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0,1), got {self.beta}")
        if not 0 <= self.k <= self.n_samples:
            raise ValueError(
                f"need 0 <= k <= N, got k={self.k}, N={self.n_samples}")


def _betacf(x: float, a: float, b: float) -> float:
    """Continued fraction for the incomplete beta integral (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(
        f"beta continued fraction failed to converge for x={x}, a={a}, b={b}")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta integral I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0,1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def inv_reg_inc_beta(p: float, a: float, b: float) -> float:
    """x with I_x(a, b) == p, to absolute residual 1e-10.

    Bracketing bisection down to a narrow interval, then Newton polish with
    the beta density; monotone in p.
    """
    if a <= 0 or b <= 0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0,1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    x = 0.5
    for _ in range(80):
        if reg_inc_beta(x, a, b) < p:
            lo = x
        else:
            hi = x
        x = 0.5 * (lo + hi)
    ln_bnorm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    for _ in range(8):
        err = reg_inc_beta(x, a, b) - p
        if abs(err) <= 1e-12:
            break
        ln_pdf = ln_bnorm + (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
        step = err * math.exp(-ln_pdf)
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if reg_inc_beta(x_new, a, b) < p:
            lo = x_new
        else:
            hi = x_new
        x = x_new
    return x


def _log_binom_tail(eps: float, k: int, n: int) -> float:
    terms = []
    log_eps = math.log(eps)
    log_1m = math.log1p(-eps)
    ln_n1 = math.lgamma(n + 1)
    for j in range(k + 1):
        terms.append(ln_n1 - math.lgamma(j + 1) - math.lgamma(n - j + 1)
                     + j * log_eps + (n - j) * log_1m)
    top = max(terms)
    return top + math.log(math.fsum(math.exp(t - top) for t in terms))


def phi(eps: float, k: int, n: int) -> float:
    """Lower binomial tail: P(Binomial(n, eps) <= k).

    Summed in log space; each call is cross-checked against the identity
    phi(eps, k, n) == 1 - I_eps(k+1, n-k), which guards the two routes
    against an off-by-one in either.
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= N, got k={k}, N={n}")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must be in [0,1], got {eps}")
    if eps == 0.0:
        return 1.0
    if k == n:
        return 1.0
    if eps == 1.0:
        return 0.0
    value = math.exp(_log_binom_tail(eps, k, n))
    via_beta = 1.0 - reg_inc_beta(eps, k + 1.0, float(n - k))
    if abs(value - via_beta) > _IDENTITY_GATE:
        raise ArithmeticError(
            f"binomial tail disagrees with its beta form: {value} vs {via_beta} "
            f"at eps={eps}, k={k}, N={n}")
    return min(value, 1.0)


def epsilon_for_confidence(q: ConfidenceQuery) -> float:
    """eps with phi(eps, k, N) == beta, by bisection on the decreasing tail."""
    if q.n_samples < q.k + 1:
        raise ValueError(
            f"need N >= k+1 for a solvable tail, got N={q.n_samples}, k={q.k}")
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = phi(mid, q.k, q.n_samples)
        if abs(v - q.beta) <= 1e-12:
            return mid
        if v > q.beta:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16:
            break
    return 0.5 * (lo + hi)
