"""Scalar Gaussian machinery: normal CDF/PDF and closed-form moments of
rectified and max-of-two Gaussians.

The array functions (`relu_moments`, `max_moments`) broadcast over their
arguments and are what the probabilistic layers call. The `MomentPair`
wrappers are the scalar surface.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

# Below this variance a distribution is treated as a point mass.
VAR_MIN = 1e-12
# Largest negative variance (before clamping) tolerated from cancellation.
_CANCEL_TOL = 1e-9

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class MomentPair(NamedTuple):
    mean: float
    variance: float


def std_normal_cdf(z: float) -> float:
    """Phi(z), the standard normal CDF."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def std_normal_pdf(z: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _clamp(bracket):
    if __debug__:
        worst = np.min(bracket, initial=0.0)
        assert worst > -_CANCEL_TOL, f"variance cancellation too large: {worst}"
    return np.maximum(bracket, 0.0)


def relu_moments(mean, var):
    """Mean and variance of max(0, Z) for Z ~ N(mean, var), elementwise.

    Works in units of the input standard deviation so the variance
    bracket stays O(1); for positive ``mean/std`` it is rewritten in
    terms of the upper tail Phi(-r) to avoid cancelling r**2 terms.
    """
    mean, var = np.broadcast_arrays(np.asarray(mean, dtype=np.float64),
                                    np.asarray(var, dtype=np.float64))
    var = np.maximum(var, 0.0)
    point = var < VAR_MIN
    theta = np.sqrt(np.where(point, 1.0, var))
    r = mean / theta
    cdf = ndtr(r)
    upper = ndtr(-r)
    pdf = _pdf(r)

    out_mean = theta * (r * cdf + pdf)
    pos = r >= 0
    bracket = np.where(
        pos,
        1.0 + (r * r - 1.0) * upper - r * pdf - (r * upper) ** 2
        + 2.0 * r * upper * pdf - pdf * pdf,
        (r * r + 1.0) * cdf + r * pdf - (r * cdf + pdf) ** 2,
    )
    out_var = theta * theta * _clamp(bracket)

    out_mean = np.where(point, np.maximum(mean, 0.0), out_mean)
    out_var = np.where(point, 0.0, out_var)
    return out_mean, out_var


def max_moments(mean_a, var_a, mean_b, var_b):
    """Clark's moments of max(A, B) for independent Gaussians A and B.

    Means are centred on their midpoint before evaluating the formulas,
    which keeps the second-moment subtraction well conditioned.
    """
    mean_a, var_a, mean_b, var_b = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mean_a, var_a, mean_b, var_b)))
    var_a = np.maximum(var_a, 0.0)
    var_b = np.maximum(var_b, 0.0)
    s2 = var_a + var_b
    point = s2 < VAR_MIN
    theta = np.sqrt(np.where(point, 1.0, s2))

    centre = 0.5 * (mean_a + mean_b)
    half_gap = 0.5 * (mean_a - mean_b)
    alpha = (mean_a - mean_b) / theta
    pa = ndtr(alpha)
    pb = ndtr(-alpha)
    pdf = _pdf(alpha)

    out_mean = centre + half_gap * (pa - pb) + theta * pdf
    bracket = alpha * alpha * pa * pb - pdf * pdf - alpha * pdf * (pa - pb)
    out_var = var_a * pa + var_b * pb + s2 * bracket
    if __debug__:
        assert np.min(out_var, initial=0.0) > -_CANCEL_TOL * np.max(s2, initial=1.0)
    out_var = np.maximum(out_var, 0.0)

    a_wins = mean_a >= mean_b
    out_mean = np.where(point, np.where(a_wins, mean_a, mean_b), out_mean)
    out_var = np.where(point, np.where(a_wins, var_a, var_b), out_var)
    return out_mean, out_var


def relu_gaussian_moments(moments: MomentPair) -> MomentPair:
    m, v = relu_moments(moments.mean, moments.variance)
    return MomentPair(float(m), float(v))


def max_pair_moments(a: MomentPair, b: MomentPair) -> MomentPair:
    m, v = max_moments(a.mean, a.variance, b.mean, b.variance)
    return MomentPair(float(m), float(v))
