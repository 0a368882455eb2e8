"""Two-sample significance testing for accuracy comparisons."""

from __future__ import annotations

import math

from .errors import ConvergenceError, DataError

__all__ = ["ttest_two_sample"]

_CF_TOL = 1e-12
_CF_MAX_ITERS = 300
_TINY = 1e-300


def _log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITERS + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise ConvergenceError(
        f"incomplete beta continued fraction failed to converge for "
        f"a={a}, b={b}, x={x}"
    )


def _reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b)
    front = math.exp(ln_front)
    # the continued fraction converges fast on its own side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _student_two_sided_p(t: float, df: float) -> float:
    # P(|T_df| >= |t|) = I_x(df/2, 1/2) with x = df / (df + t^2)
    x = df / (df + t * t)
    return min(1.0, max(0.0, _reg_inc_beta(0.5 * df, 0.5, x)))


def ttest_two_sample(a, b, welch: bool = False) -> float:
    """Two-sided p-value for the difference of two sample means.

    The default is the classic pooled-variance Student form; welch=True
    switches to the unequal-variance statistic with Welch-Satterthwaite
    degrees of freedom. Conventions for degenerate inputs: two constant
    samples yield p = 1.0 when their values agree and p = 0.0 when they
    differ.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise DataError("both samples need at least 2 observations")
    mean_a = sum(a) / na
    mean_b = sum(b) / nb
    var_a = sum((v - mean_a) ** 2 for v in a) / (na - 1)
    var_b = sum((v - mean_b) ** 2 for v in b) / (nb - 1)

    if var_a == 0.0 and var_b == 0.0:
        return 1.0 if mean_a == mean_b else 0.0

    if welch:
        sa, sb = var_a / na, var_b / nb
        se = math.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (
            (sa * sa / (na - 1) if na > 1 else 0.0)
            + (sb * sb / (nb - 1) if nb > 1 else 0.0)
        )
    else:
        pooled = ((na - 1) * var_a + (nb - 1) * var_b) / (na + nb - 2)
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
        df = na + nb - 2
    if se == 0.0:
        return 1.0 if mean_a == mean_b else 0.0
    t = (mean_a - mean_b) / se
    return _student_two_sided_p(t, df)
