"""Numeric sampling support: the real lower branch of the Lambert W
function and the radial quantile of the planar Laplace distribution.

The radial density of planar Laplace noise with parameter eps is
f(r) = eps^2 * r * exp(-eps * r), with CDF C(r) = 1 - (1 + eps*r) * exp(-eps*r).
Inverting C at probability u reduces to W_{-1}((u - 1)/e).
"""

from __future__ import annotations

import math

_INV_E = math.exp(-1.0)
_RESIDUAL_TOL = 1e-12
_MAX_HALLEY_STEPS = 64


def lambert_w_minus1(z: float) -> float:
    """W on the lower real branch: the w <= -1 solving w * exp(w) = z.

    Defined for z in [-1/e, 0). Uses a branch-point series or log-log
    asymptotic as the initial guess, then Halley iteration until the
    residual |w*exp(w) - z| drops below 1e-12.
    """
    if z < -_INV_E or z >= 0.0:
        if math.isclose(z, -_INV_E, rel_tol=0.0, abs_tol=1e-15):
            z = -_INV_E
        else:
            raise ValueError(f"lower branch needs z in [-1/e, 0), got {z}")

    # Branch-point expansion in p = -sqrt(2 (e z + 1)); exact at z = -1/e.
    s = 2.0 * (math.e * z + 1.0)
    if s <= 0.0:
        return -1.0
    if s < 1e-4:
        p = -math.sqrt(s)
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    else:
        # Asymptotic guess w ~ log(-z) - log(-log(-z)) for z -> 0^-.
        L1 = math.log(-z)
        L2 = math.log(-L1)
        w = L1 - L2 + L2 / L1

    for _ in range(_MAX_HALLEY_STEPS):
        ew = math.exp(w)
        f = w * ew - z
        if abs(f) < _RESIDUAL_TOL:
            return w
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w -= step
        if w >= -1.0:
            w = -1.0 - 1e-16  # stay on the lower branch
    ew = math.exp(w)
    if abs(w * ew - z) < 1e2 * _RESIDUAL_TOL:
        return w
    raise ArithmeticError(f"Halley iteration did not converge for z={z}")


def laplace_radial_cdf(r: float, epsilon: float) -> float:
    """P(radius <= r) for planar Laplace noise with parameter epsilon."""
    if r < 0:
        return 0.0
    x = epsilon * r
    return 1.0 - (1.0 + x) * math.exp(-x)


def laplace_radial_quantile(u: float, epsilon: float) -> float:
    """Radius with CDF value u; u in [0, 1). Zero maps exactly to zero."""
    if not 0.0 <= u < 1.0:
        raise ValueError(f"quantile probability must be in [0, 1), got {u}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if u == 0.0:
        return 0.0
    w = lambert_w_minus1((u - 1.0) * _INV_E)
    return -(w + 1.0) / epsilon
