"""Sigma discretizations for sampling and a Heun probability-flow ODE solver."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateProfileError, IntegrationError
from .grid import Profile, SigmaRange, cumulative_integral

__all__ = [
    "InferenceGrid",
    "InfoMap",
    "info_map",
    "infogrid",
    "reference_grid",
    "heun_sample",
    "heun_nfe",
    "grid_uniformity",
    "pf_drift",
]

Denoiser = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class InferenceGrid:
    """Noise levels ``nodes[0] = sigma_max > ... > nodes[N] = sigma_min``."""

    nodes: np.ndarray

    def __post_init__(self):
        n = np.array(self.nodes, dtype=float).reshape(-1)
        if n.size < 2 or not np.all(np.diff(n) < 0) or not n[-1] > 0:
            raise ConfigError("inference grid must be positive and strictly decreasing")
        n.setflags(write=False)
        object.__setattr__(self, "nodes", n)

    @property
    def N(self) -> int:
        return self.nodes.size - 1


@dataclass(frozen=True, eq=False)
class InfoMap:
    """Cumulative information coordinate ``u(sigma) ∝ ∫ s r(s) ds``.

    Tabulated at ``[sigma_min, centers..., sigma_max]`` and linear in sigma
    between those nodes.
    """

    sigma: np.ndarray
    u: np.ndarray

    def __call__(self, sigma):
        out = np.interp(sigma, self.sigma, self.u)
        return float(out) if np.ndim(out) == 0 else out

    def inverse(self, level):
        level = np.asarray(level, dtype=float)
        # leftmost sigma attaining the level: monotone but possibly flat u
        k = np.clip(np.searchsorted(self.u, level, side="left"), 1, self.u.size - 1)
        u0, u1 = self.u[k - 1], self.u[k]
        s0, s1 = self.sigma[k - 1], self.sigma[k]
        span = u1 - u0
        frac = np.divide(level - u0, span, out=np.zeros_like(level), where=span > 0)
        out = s0 + np.clip(frac, 0.0, 1.0) * (s1 - s0)
        return float(out) if out.ndim == 0 else out


def info_map(rate: Profile) -> InfoMap:
    if np.any(rate.values < 0):
        raise DegenerateProfileError("rate profile has negative values")
    weighted = Profile(rate.grid, rate.grid.centers * rate.values)
    nodes, cum = cumulative_integral(weighted)
    if not cum[-1] > 0:
        raise DegenerateProfileError("rate profile has zero weighted integral")
    u = cum / cum[-1]
    u[-1] = 1.0
    return InfoMap(nodes, u)


def infogrid(rate: Profile, N: int, range: SigmaRange | None = None) -> InferenceGrid:
    """Nodes spaced uniformly in the information coordinate of ``rate``."""
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if range is not None and range != rate.grid.range:
        raise ConfigError("requested range differs from the rate profile's grid range")
    umap = info_map(rate)
    levels = 1.0 - np.arange(N + 1) / N
    nodes = umap.inverse(levels)
    nodes[0], nodes[-1] = rate.grid.sigma_max, rate.grid.sigma_min
    if not np.all(np.diff(nodes) < 0):
        raise DegenerateProfileError(
            "rate profile is flat in the information coordinate; nodes would coincide"
        )
    return InferenceGrid(nodes)


def reference_grid(N: int, range: SigmaRange | None = None, rho_exp: float = 7.0) -> InferenceGrid:
    """Power-law spaced grid ``(smax^(1/ρ) + i/N (smin^(1/ρ) - smax^(1/ρ)))^ρ``."""
    if N < 1 or not rho_exp >= 1:
        raise ConfigError(f"need N >= 1 and rho_exp >= 1, got N={N}, rho_exp={rho_exp}")
    range = range or SigmaRange()
    lo, hi = range.sigma_min ** (1 / rho_exp), range.sigma_max ** (1 / rho_exp)
    nodes = (hi + np.arange(N + 1) / N * (lo - hi)) ** rho_exp
    nodes[0], nodes[-1] = range.sigma_max, range.sigma_min
    return InferenceGrid(nodes)


def heun_nfe(N: int) -> int:
    """Denoiser evaluations for ``N`` steps with a final Euler step."""
    return 2 * N - 1


def pf_drift(denoiser: Denoiser, x: np.ndarray, sigma: float) -> np.ndarray:
    """``dx/dsigma = (x - D(x, sigma)) / sigma``."""
    return (x - denoiser(x, sigma)) / sigma


def heun_sample(denoiser: Denoiser, grid: InferenceGrid, x_init) -> np.ndarray:
    """Integrate the probability-flow ODE from ``grid.nodes[0]`` to ``grid.nodes[-1]``.

    Second-order Heun steps everywhere except the last step, which is plain
    Euler, so a run costs ``2N - 1`` denoiser calls. ``x_init`` should be
    drawn from ``N(0, sigma_max^2 I)`` by the caller.
    """
    x = np.array(x_init, dtype=float)
    s = grid.nodes
    for i in range(grid.N):
        h = s[i + 1] - s[i]
        d = pf_drift(denoiser, x, s[i])
        if not np.all(np.isfinite(d)):
            raise IntegrationError(f"non-finite denoiser output at step {i} (sigma={s[i]:g})")
        x_next = x + h * d
        if i < grid.N - 1:
            d2 = pf_drift(denoiser, x_next, s[i + 1])
            if not np.all(np.isfinite(d2)):
                raise IntegrationError(
                    f"non-finite denoiser output at step {i} corrector (sigma={s[i + 1]:g})"
                )
            x_next = x + 0.5 * h * (d + d2)
        x = x_next
    return x


def grid_uniformity(grid: InferenceGrid, rate: Profile) -> float:
    """Largest deviation of the per-step information increment from ``1/N``."""
    umap = info_map(rate)
    u = umap(np.clip(grid.nodes, rate.grid.sigma_min, rate.grid.sigma_max))
    return float(np.max(np.abs(u[:-1] - u[1:] - 1.0 / grid.N)))
