"""Smooth truncated amplitude-Gaussian metric (ST-AGM).

Per pixel, with measured intensity ``b >= 0`` and truncation ``0 < eps < 1``::

    g(x; b) = (1 - eps) / 2 * (b - |x|^2 / eps)    if |x| < eps * sqrt(b)
            = (|x| - sqrt(b))^2 / 2                 otherwise

The amplitude metric is replaced by a concave cap near the origin, which
makes the gradient Lipschitz with constant ``2/eps - 1`` while keeping the
minimizers at ``|x| = sqrt(b)``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = [
    "check_epsilon",
    "stagm_pointwise",
    "stagm_value",
    "stagm_gradient",
    "lipschitz_constant",
    "stagm_prox",
    "prox_magnitude",
    "prox_magnitude_threshold",
]


def check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"truncation epsilon must lie in (0, 1), got {epsilon}")
    return epsilon


def _objective(mag, b, epsilon):
    sb = np.sqrt(b)
    inner_branch = 0.5 * (1.0 - epsilon) * (b - mag ** 2 / epsilon)
    outer_branch = 0.5 * (mag - sb) ** 2
    return np.where(mag < epsilon * sb, inner_branch, outer_branch)


def stagm_pointwise(z, f, epsilon: float) -> np.ndarray:
    """Element-wise ``g(z; f)``."""
    epsilon = check_epsilon(epsilon)
    z = np.asarray(z)
    f = np.asarray(f, dtype=np.float64)
    if z.shape != f.shape:
        raise ValueError(f"shape mismatch {z.shape} vs {f.shape}")
    return _objective(np.abs(z), f, epsilon)


def stagm_value(z, f, epsilon: float) -> float:
    return float(np.sum(stagm_pointwise(z, f, epsilon)))


def stagm_gradient(z, f, epsilon: float) -> np.ndarray:
    """Gradient ``(1 - 1/eps) z`` on the cap and ``(1 - sqrt(f)/|z|) z`` elsewhere.

    The gradient is taken with respect to the real inner product
    ``Re<x, y>``, i.e. the real-vector gradient of ``(Re z, Im z)`` packed
    back into a complex number.
    """
    epsilon = check_epsilon(epsilon)
    z = np.asarray(z, dtype=np.complex128)
    sb = np.sqrt(np.asarray(f, dtype=np.float64))
    mag = np.abs(z)
    cap = mag < epsilon * sb
    # off the cap |z| >= eps*sqrt(f) > 0 unless f == 0, where the factor is 1
    safe = np.where(cap | (mag == 0), 1.0, mag)
    factor = np.where(cap, 1.0 - 1.0 / epsilon, 1.0 - sb / safe)
    return factor * z


def lipschitz_constant(epsilon: float) -> float:
    epsilon = check_epsilon(epsilon)
    return 2.0 / epsilon - 1.0


def _sign(y):
    mag = np.abs(y)
    return np.where(mag > 0, y / np.where(mag > 0, mag, 1.0), 1.0 + 0j)


def prox_magnitude(ymag, b, lam: float, epsilon: float) -> np.ndarray:
    """Magnitude of the prox by evaluating both branch candidates.

    Candidates are the minimizer of the outer quadratic restricted to
    ``|x| >= eps sqrt(b)`` and the minimizer of the concave-plus-quadratic
    inner piece restricted to ``[0, eps sqrt(b)]``; whichever attains the
    lower objective wins, ties going to the outer branch.
    """
    ymag = np.asarray(ymag, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sb = np.sqrt(b)
    edge = epsilon * sb

    outer = np.maximum((sb + lam * ymag) / (1.0 + lam), edge)

    # inner piece: (1-eps)/2 (b - t^2/eps) + lam/2 (t - |y|)^2, curvature lam - (1-eps)/eps
    curv = lam - (1.0 - epsilon) / epsilon
    if curv > 0:
        stat = lam * ymag / curv
        inner = np.clip(stat, 0.0, edge)
    else:
        # concave on the interval: the minimum sits at an endpoint
        f0 = 0.5 * lam * ymag ** 2
        fe = 0.5 * lam * (edge - ymag) ** 2
        inner = np.where(f0 <= fe, 0.0, edge)

    def total(t):
        return _objective(t, b, epsilon) + 0.5 * lam * (t - ymag) ** 2

    # the cap is open at |x| = eps sqrt(b); evaluate the inner piece by its formula
    inner_val = 0.5 * (1.0 - epsilon) * (b - inner ** 2 / epsilon) + 0.5 * lam * (inner - ymag) ** 2
    outer_val = total(outer)
    return np.where(inner_val < outer_val, inner, outer)


def prox_magnitude_threshold(ymag, b, lam: float, epsilon: float) -> np.ndarray:
    """Magnitude of the prox by the closed-form branch threshold.

    The inner branch is taken when ``|y| < (eps - (1 - eps)/lam) sqrt(b)``.
    """
    ymag = np.asarray(ymag, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sb = np.sqrt(b)
    thresh = (epsilon - (1.0 - epsilon) / lam) * sb
    denom = lam - (1.0 - epsilon) / epsilon
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.maximum(0.0, lam * ymag / denom) if denom != 0 else np.zeros_like(ymag)
    outer = (sb + lam * ymag) / (1.0 + lam)
    return np.where(ymag < thresh, inner, outer)


def stagm_prox(y, f, lam: float, epsilon: float, sqrt_f=None) -> np.ndarray:
    """Proximal map ``argmin_x G(x; f) + lam/2 |x - y|^2``, element-wise.

    The phase of ``y`` is kept (``sign(0) = 1``).  The magnitude follows the
    closed-form threshold rule of :func:`prox_magnitude_threshold`; the
    two-candidate search in :func:`prox_magnitude` is its independent check.
    ``sqrt_f`` may be passed to reuse a precomputed ``sqrt(f)``.
    """
    epsilon = check_epsilon(epsilon)
    if lam <= 0:
        raise ConfigError(f"prox penalty must be positive, got {lam}")
    y = np.asarray(y, dtype=np.complex128)
    sb = np.sqrt(np.asarray(f, dtype=np.float64)) if sqrt_f is None else sqrt_f
    mag = np.abs(y)
    # subnormal |y| would overflow sqrt(b) / |y|; those take the phase explicitly
    tiny = mag < np.finfo(np.float64).tiny
    # outer branch: x = (sqrt(b) + lam |y|) / (1 + lam) * y / |y|
    factor = sb / np.where(tiny, 1.0, mag)
    factor += lam
    factor /= 1.0 + lam
    out = factor * y
    if tiny.any():
        sb_t = np.broadcast_to(sb, y.shape)[tiny]
        out[tiny] = (sb_t + lam * mag[tiny]) / (1.0 + lam) * _sign(y[tiny] * 2.0 ** 1000)
    coeff = epsilon - (1.0 - epsilon) / lam
    if coeff > 0:
        # inner branch is linear in y: lam / (lam - (1 - eps)/eps) > 0 here
        cap = mag < coeff * sb
        out[cap] = (lam / (lam - (1.0 - epsilon) / epsilon)) * y[cap]
    return out
