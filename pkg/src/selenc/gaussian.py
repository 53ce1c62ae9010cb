"""Gaussian CDF and inverse CDF in float64.

The inverse uses Acklam's rational approximation (relative error about
1.2e-9) followed by one Newton step against the CDF, which brings it to
rounding level. The Newton residual for p > 0.5 is taken on the upper tail
``1 - p`` (exact in floating point) so large quantiles keep their accuracy.
"""

import numpy as np
from scipy.special import erfc

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02, 1.383577518672690e02,
      -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02, 6.680131188771972e01,
      -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00, -2.549732539343734e00,
      4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425
_SQRT2 = np.sqrt(2.0)
_SQRT2PI = np.sqrt(2.0 * np.pi)


def _check_sigma(sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")


def gaussian_cdf(x, mu=0.0, sigma=1.0):
    _check_sigma(sigma)
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return 0.5 * erfc(-z / _SQRT2)


def _acklam(p):
    z = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = np.sqrt(-2.0 * np.log(p[lo]))
    z[lo] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    )
    q = np.sqrt(-2.0 * np.log1p(-p[hi]))
    z[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
        (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    )
    q = p[mid] - 0.5
    r = q * q
    z[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )
    return z


def gaussian_icdf(p, mu=0.0, sigma=1.0):
    _check_sigma(sigma)
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("p must lie strictly inside (0, 1)")
    z = _acklam(p)
    pdf = np.exp(-0.5 * z * z) / _SQRT2PI
    upper = p > 0.5
    # residual of the lower CDF below the median, of the upper tail above it
    resid = np.where(upper, (1.0 - p) - 0.5 * erfc(z / _SQRT2), 0.5 * erfc(-z / _SQRT2) - p)
    z = z - resid / pdf
    x = mu + sigma * z
    return x[0] if scalar else x
