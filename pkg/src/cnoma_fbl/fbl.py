"""Finite-blocklength primitives for the AWGN normal approximation.

All functions accept Python scalars or numpy arrays and broadcast like
numpy ufuncs. Scalar inputs give Python floats back.
"""

import math

import numpy as np
from scipy import special

LN2 = math.log(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _out(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def gaussian_q(x):
    """Gaussian tail probability Q(x) = P[N(0,1) > x].

    ``ndtr`` evaluates the tail through erfc, so values are accurate
    down to the subnormal range (x up to roughly 37).
    """
    return _out(special.ndtr(-np.asarray(x, dtype=float)))


def log_gaussian_q(x):
    """Natural log of Q(x); finite for arbitrarily large x."""
    return _out(special.log_ndtr(-np.asarray(x, dtype=float)))


def gaussian_pdf(x):
    x = np.asarray(x, dtype=float)
    return _out(np.exp(-0.5 * x * x) / _SQRT2PI)


def gaussian_q_inv(p):
    """Inverse of :func:`gaussian_q` on the open unit interval.

    Starts from the rational approximation in ``ndtri`` and applies two
    Newton corrections. The correction uses log Q for the upper tail so
    tiny probabilities keep full relative precision.
    """
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("gaussian_q_inv: p must lie in (0, 1)")
    x = -special.ndtri(p)
    upper = p < 0.5
    for _ in range(2):
        q = special.ndtr(-x)
        pdf = np.exp(-0.5 * x * x) / _SQRT2PI
        with np.errstate(divide="ignore", invalid="ignore"):
            # upper tail: Newton on log Q, lower tail: Newton on Q directly
            step_log = (special.log_ndtr(-x) - np.log(p)) * q / pdf
            step_lin = (q - p) / pdf
        step = np.where(upper, step_log, step_lin)
        x = x + np.where(np.isfinite(step), step, 0.0)
    return _out(x)


def _check_gamma(gamma):
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < 0) or np.any(np.isnan(gamma)):
        raise ValueError("SNR must be nonnegative")
    return gamma


def shannon_capacity(gamma):
    """log2(1 + gamma) in bits per channel use."""
    gamma = _check_gamma(gamma)
    return _out(np.log1p(gamma) / LN2)


def channel_dispersion(gamma):
    """V = 1 - (1 + gamma)^-2 (in squared nats)."""
    gamma = _check_gamma(gamma)
    return _out(1.0 - 1.0 / (1.0 + gamma) ** 2)


def fbl_rate(gamma, m, eps):
    """Normal-approximation rate for SNR ``gamma``, blocklength ``m`` and BLER ``eps``.

    Negative values (penalty larger than capacity) are clamped to zero.
    The approximation is only meaningful for m >= 100.
    """
    gamma = _check_gamma(gamma)
    m = np.asarray(m, dtype=float)
    if np.any(m < 1):
        raise ValueError("blocklength must be >= 1")
    c = np.log1p(gamma) / LN2
    v = 1.0 - 1.0 / (1.0 + gamma) ** 2
    rate = c - np.sqrt(v / m) * np.asarray(gaussian_q_inv(eps)) / LN2
    return _out(np.maximum(rate, 0.0))


def _f_arg(gamma, rate, m):
    """Argument of Q in the decoding-error approximation.

    Corner cases at gamma = 0 (V = 0): rate 0 gives f = 0 (error 1/2),
    any positive rate gives f = -inf (error 1).
    """
    c = np.log1p(gamma) / LN2
    v = 1.0 - 1.0 / (1.0 + gamma) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (c - rate) * LN2 * np.sqrt(m / v)
    f = np.where(v > 0, f, np.where(rate > 0, -np.inf, 0.0))
    return f


def decoding_error(gamma, rate, m):
    """BLER of a length-``m`` code at ``rate`` bits/use over SNR ``gamma``."""
    gamma = _check_gamma(gamma)
    rate = np.asarray(rate, dtype=float)
    m = np.asarray(m, dtype=float)
    return _out(special.ndtr(-_f_arg(gamma, rate, m)))


def log_decoding_error(gamma, rate, m):
    gamma = _check_gamma(gamma)
    return _out(special.log_ndtr(-_f_arg(gamma, np.asarray(rate, float), np.asarray(m, float))))
