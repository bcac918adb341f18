"""Closed-form one-dimensional two-point model with atoms at ``+a`` and ``-a``.

The Bayes denoiser is ``a * tanh(a x / sigma**2)``. Its fixed points undergo a
pitchfork bifurcation at ``sigma_c = a``: a single fixed point at the origin
for ``sigma >= a`` and two extra symmetric branches ``±x*`` below it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .grid import LogGrid, Profile

__all__ = [
    "TwoPointModel",
    "toy_denoiser",
    "toy_posterior_var",
    "toy_score",
    "toy_mmse",
    "toy_mmse_profile",
    "critical_sigma",
    "hessian_at_zero",
    "fixed_points",
    "positive_branch",
]

DEFAULT_QUAD_ORDER = 256
# numpy's Gauss-Hermite weights overflow beyond roughly 370 nodes
MAX_QUAD_ORDER = 360


@dataclass(frozen=True)
class TwoPointModel:
    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"atom location a must be positive, got {self.a}")


def _sigma(sigma):
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    return s


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def toy_denoiser(m: TwoPointModel, x, sigma):
    s = _sigma(sigma)
    return _out(m.a * np.tanh(m.a * np.asarray(x, dtype=float) / s**2))


def toy_posterior_var(m: TwoPointModel, x, sigma):
    s = _sigma(sigma)
    e = np.exp(-2.0 * np.abs(m.a * np.asarray(x, dtype=float) / s**2))
    # sech^2(z) = 4 e^{-2|z|} / (1 + e^{-2|z|})^2, no overflow for large |z|
    return _out(m.a**2 * 4.0 * e / (1.0 + e) ** 2)


def toy_score(m: TwoPointModel, x, sigma):
    s = _sigma(sigma)
    x = np.asarray(x, dtype=float)
    return _out((m.a * np.tanh(m.a * x / s**2) - x) / s**2)


def _gauss_hermite(order: int):
    if not 16 <= order <= MAX_QUAD_ORDER:
        raise ConfigError(f"quad_order must lie in [16, {MAX_QUAD_ORDER}], got {order}")
    t, w = np.polynomial.hermite.hermgauss(order)
    return t, w / np.sqrt(np.pi)


def toy_mmse(m: TwoPointModel, sigma, quad_order: int = DEFAULT_QUAD_ORDER):
    """Bayes MMSE by Gauss-Hermite quadrature over the ``+a`` mixture component.

    The posterior variance is even under ``x -> -x``, so the ``-a`` component
    contributes the same expectation and one component suffices.
    """
    s = _sigma(sigma)
    t, w = _gauss_hermite(quad_order)
    x = m.a + np.sqrt(2.0) * s[..., None] * t
    return _out(np.sum(w * toy_posterior_var(m, x, s[..., None]), axis=-1))


def toy_second_moment(m: TwoPointModel, sigma, quad_order: int = DEFAULT_QUAD_ORDER):
    """``E[xhat*(x)^2]`` under the noisy marginal, by the same quadrature."""
    s = _sigma(sigma)
    t, w = _gauss_hermite(quad_order)
    x = m.a + np.sqrt(2.0) * s[..., None] * t
    return _out(np.sum(w * toy_denoiser(m, x, s[..., None]) ** 2, axis=-1))


def toy_mmse_profile(m: TwoPointModel, grid: LogGrid, quad_order: int = DEFAULT_QUAD_ORDER) -> Profile:
    return Profile(grid, toy_mmse(m, grid.centers, quad_order))


def critical_sigma(m: TwoPointModel) -> float:
    return float(m.a)


def hessian_at_zero(m: TwoPointModel, sigma):
    """Curvature of ``log p(x; sigma)`` at the origin: ``(a^2 - sigma^2) / sigma^4``."""
    s = _sigma(sigma)
    return _out((m.a**2 - s**2) / s**4)


def positive_branch(m: TwoPointModel, sigma: float, tol: float = 1e-12) -> float:
    """Positive nonzero solution of ``x = a tanh(a x / sigma^2)``, or 0 if none.

    Bisection on ``[tol, a]``: the root lies in ``(0, a)`` whenever the slope
    ``a^2 / sigma^2`` at the origin exceeds one.
    """
    sigma = float(_sigma(sigma))
    if not tol > 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    if sigma >= m.a:
        return 0.0

    def f(x):
        return m.a * np.tanh(m.a * x / sigma**2) - x

    lo, hi = min(tol, 0.5 * m.a), m.a
    if f(lo) <= 0:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fixed_points(m: TwoPointModel, sigma: float, tol: float = 1e-12) -> list[float]:
    """All fixed points of the Bayes denoiser, sorted: ``[0]`` or ``[-x*, 0, x*]``."""
    x = positive_branch(m, sigma, tol)
    if x == 0.0:
        return [0.0]
    return [-x, 0.0, x]
