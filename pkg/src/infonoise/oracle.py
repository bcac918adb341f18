"""Exact Bayes-optimal denoising under a finite-dataset (empirical) prior.

For atoms ``x_1..x_N`` the noisy marginal is an isotropic Gaussian mixture, the
posterior is a softmax over ``-||x - x_i||^2 / (2 sigma^2)``, and the posterior
mean, trace covariance, log-density and score follow in closed form. A
Gaussian prior with known MMSE and conditional entropy is included as a
reference for the entropy-rate identity ``dH/dsigma = mmse / sigma**3``.

All query functions accept a single point of shape ``(d,)`` or a batch of
shape ``(M, d)``; with a batch, ``sigma`` may also be one value per point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError, DomainError
from .grid import LogGrid, Profile

__all__ = [
    "Dataset",
    "GaussianPrior",
    "PosteriorStats",
    "posterior_weights",
    "posterior_stats",
    "bayes_denoiser",
    "posterior_trace_cov",
    "mmse_profile",
    "entropy_rate_profile",
    "entropy_rate_logsnr",
    "log_density",
    "score",
    "gaussian_mmse",
    "gaussian_cond_entropy",
    "gaussian_denoiser",
]

# expansion ||x||^2 + ||x_i||^2 - 2 x.x_i is redone directly below this ratio
_CANCELLATION_RATIO = 1e-6


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    sq_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"dataset must be an (N, d) array with N, d >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DataError("dataset contains non-finite values")
        x.setflags(write=False)
        sq = np.einsum("ij,ij->i", x, x)
        sq.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sq_norms", sq)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def variance(self) -> float:
        """Total within-dataset variance ``sum_i ||x_i - mean||^2 / N``."""
        return float(np.mean(np.sum((self.samples - self.mean()) ** 2, axis=1)))


@dataclass(frozen=True)
class PosteriorStats:
    weights: np.ndarray
    mean: np.ndarray
    trace_cov: np.ndarray


@dataclass(frozen=True)
class GaussianPrior:
    s: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.s > 0 or self.d < 1:
            raise ConfigError(f"GaussianPrior needs s > 0 and d >= 1, got s={self.s}, d={self.d}")


def _check_sigma(sigma):
    if np.ndim(sigma) == 0:
        sigma = float(sigma)
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        return sigma
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError("sigma must be positive")
    return s


def _row_sigma(sigma, m: int):
    # scalar sigma, or one sigma per row of a batch
    if np.ndim(sigma) == 0:
        return sigma
    if sigma.shape != (m,):
        raise DataError(f"need one sigma per point: {sigma.shape} vs {m} points")
    return sigma[:, None]


def _as_points(data: Dataset, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x2 = np.atleast_2d(x.reshape(1, -1) if single else x)
    if data.d == 1 and x.ndim == 1 and x.size != 1:
        # a flat vector of scalar observations
        x2, single = x.reshape(-1, 1), False
    if x2.shape[1] != data.d:
        raise DataError(f"point dimension {x2.shape[1]} does not match dataset dimension {data.d}")
    return x2, single


def _sq_dists(data: Dataset, x: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", x, x)
    d2 = xx[:, None] + data.sq_norms[None, :] - 2.0 * x @ data.samples.T
    scale = xx[:, None] + data.sq_norms[None, :]
    bad = d2 < _CANCELLATION_RATIO * scale
    if np.any(bad):
        rows, cols = np.nonzero(bad)
        diff = x[rows] - data.samples[cols]
        d2[rows, cols] = np.einsum("ij,ij->i", diff, diff)
    return np.maximum(d2, 0.0)


def _logits(data: Dataset, x: np.ndarray, sigma) -> np.ndarray:
    sigma = _row_sigma(sigma, x.shape[0])
    return -_sq_dists(data, x) / (2.0 * sigma * sigma)


def _log_weights(data: Dataset, x: np.ndarray, sigma: float) -> np.ndarray:
    logits = _logits(data, x, sigma)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _weights(data: Dataset, x: np.ndarray, sigma) -> np.ndarray:
    # renormalize: rounding in large logits can leave exp(log w) off the simplex by ~1e-12
    w = np.exp(_log_weights(data, x, sigma))
    return w / w.sum(axis=1, keepdims=True)


def posterior_weights(data: Dataset, x, sigma):
    """Posterior probabilities of each atom given observation ``x``."""
    sigma = _check_sigma(sigma)
    pts, single = _as_points(data, x)
    w = _weights(data, pts, sigma)
    return w[0] if single else w


def posterior_stats(data: Dataset, x, sigma) -> PosteriorStats:
    sigma = _check_sigma(sigma)
    pts, single = _as_points(data, x)
    w = _weights(data, pts, sigma)
    mean = w @ data.samples
    resid = data.samples[None, :, :] - mean[:, None, :]
    tr = np.einsum("mn,mnd,mnd->m", w, resid, resid)
    if single:
        return PosteriorStats(w[0], mean[0], tr[0])
    return PosteriorStats(w, mean, tr)


def bayes_denoiser(data: Dataset, x, sigma):
    """Posterior mean ``E[x0 | x_sigma = x]``."""
    sigma = _check_sigma(sigma)
    pts, single = _as_points(data, x)
    mean = _weights(data, pts, sigma) @ data.samples
    return mean[0] if single else mean


def posterior_trace_cov(data: Dataset, x, sigma):
    """Trace of the posterior covariance, the conditional MSE of the Bayes denoiser."""
    tr = posterior_stats(data, x, sigma).trace_cov
    return float(tr) if np.ndim(tr) == 0 else tr


def mmse_profile(
    data: Dataset,
    grid: LogGrid,
    n_mc: int = 10_000,
    seed: int = 0,
    batch: int = 65_536,
) -> Profile:
    """Monte-Carlo MMSE at every grid center.

    Cell ``k`` averages the posterior trace covariance over ``n_mc`` draws of
    ``x0 + sigma_k * eps`` with ``x0`` uniform over the atoms. Each cell uses
    its own random streams derived from ``(seed, k)``, one for atom indices and
    one for noise, so the result does not depend on ``batch``.
    """
    if n_mc < 1:
        raise ConfigError(f"n_mc must be >= 1, got {n_mc}")
    root = np.random.SeedSequence(seed)
    streams = root.spawn(grid.K)
    values = np.empty(grid.K)
    batch = max(1, min(batch, (1 << 24) // (data.N * data.d)))
    for k, sigma in enumerate(grid.centers):
        idx_rng, eps_rng = (np.random.default_rng(s) for s in streams[k].spawn(2))
        total, left = 0.0, n_mc
        while left > 0:
            m = min(batch, left)
            idx = idx_rng.integers(0, data.N, size=m)
            eps = eps_rng.standard_normal((m, data.d))
            x = data.samples[idx] + sigma * eps
            total += float(np.sum(posterior_stats(data, x, sigma).trace_cov))
            left -= m
        values[k] = total / n_mc
    return Profile(grid, values)


def entropy_rate_profile(mmse: Profile) -> Profile:
    """``dH[x0|x_sigma]/dsigma = mmse(sigma) / sigma**3`` at every center."""
    if np.any(mmse.values < 0):
        raise DataError("MMSE profile has negative entries")
    return Profile(mmse.grid, mmse.values / mmse.grid.centers**3)


def entropy_rate_logsnr(mmse_value, sigma):
    """Rate of entropy decrease per unit log-SNR, ``mmse / (2 sigma**2)``."""
    sigma = _check_sigma(sigma)
    return 0.5 * mmse_value / sigma**2


def log_density(data: Dataset, x, sigma):
    """Log-density of the noisy marginal (an equal-weight Gaussian mixture)."""
    sigma = _check_sigma(sigma)
    pts, single = _as_points(data, x)
    out = (
        -0.5 * data.d * np.log(2 * np.pi * np.asarray(sigma) ** 2)
        + logsumexp(_logits(data, pts, sigma), axis=1)
        - np.log(data.N)
    )
    return float(out[0]) if single else out


def score(data: Dataset, x, sigma):
    """Score of the noisy marginal via Tweedie: ``(denoised - x) / sigma**2``."""
    sigma = _check_sigma(sigma)
    pts, single = _as_points(data, x)
    mean = _weights(data, pts, sigma) @ data.samples
    out = (mean - pts) / _row_sigma(sigma, pts.shape[0]) ** 2
    return out[0] if single else out


def gaussian_mmse(prior: GaussianPrior, sigma):
    sigma = _check_sigma(sigma)
    s2 = prior.s**2
    return prior.d * s2 * sigma**2 / (s2 + sigma**2)


def gaussian_cond_entropy(prior: GaussianPrior, sigma):
    """``H[x0 | x_sigma]`` in nats for an isotropic Gaussian prior."""
    sigma = _check_sigma(sigma)
    s2 = prior.s**2
    return 0.5 * prior.d * np.log(2 * np.pi * np.e * s2 * sigma**2 / (s2 + sigma**2))


def gaussian_denoiser(prior: GaussianPrior):
    """Posterior-mean denoiser ``s^2 x / (s^2 + sigma^2)`` as a callable."""
    s2 = prior.s**2

    def denoise(x, sigma):
        return s2 * np.asarray(x, dtype=float) / (s2 + sigma**2)

    return denoise
