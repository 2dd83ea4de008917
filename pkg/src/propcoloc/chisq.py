"""Chi-square tail probabilities and quantiles.

Upper tail of the chi-square distribution is the regularized upper incomplete
gamma function Q(df/2, x/2). It is evaluated with the power series for the
lower function when x < a + 1 and with a modified-Lentz continued fraction
otherwise, the usual split that keeps both branches rapidly convergent.
"""

from __future__ import annotations

import math

from scipy.optimize import brentq

from .errors import InputError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_upper_regularized(a: float, x: float) -> float:
    """Q(a, x) = Gamma(a, x) / Gamma(a) for a > 0, x >= 0."""
    if a <= 0 or x < 0 or not math.isfinite(a) or math.isnan(x):
        raise InputError(f"gamma_upper_regularized needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_series(a, x))
    return min(1.0, _upper_cf(a, x))


def chi_sq_upper(df: int, x: float) -> float:
    """Upper-tail probability P(X >= x) for X ~ chi-square(df)."""
    if df < 1 or int(df) != df:
        raise InputError(f"df must be a positive integer, got {df}")
    if math.isnan(x) or x < 0:
        raise InputError(f"x must be >= 0, got {x}")
    return gamma_upper_regularized(0.5 * df, 0.5 * x)


def chi_sq_quantile(df: int, nu: float) -> float:
    """Critical value q with P(X > q) = nu for X ~ chi-square(df)."""
    if df < 1 or int(df) != df:
        raise InputError(f"df must be a positive integer, got {df}")
    if not 0.0 < nu < 1.0:
        raise InputError(f"nu must lie in (0, 1), got {nu}")
    hi = max(1.0, float(df))
    while chi_sq_upper(df, hi) > nu:
        hi *= 2.0
    return brentq(
        lambda x: chi_sq_upper(df, x) - nu, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500
    )
