"""From entropy-rate profiles to target allocations and training schedules.

The pipeline is::

    rate --calibrate pivot--> c --gate--> gated rate --normalize--> rho
    rho / w  --normalize--> pi          (so that pi * w is proportional to rho)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ConfigError, DegenerateProfileError, DomainError
from .grid import (
    LogGrid,
    Profile,
    TabulatedDensity,
    inverse_cdf_sample,
    normalize_to_density,
)

__all__ = [
    "GateParams",
    "Weighting",
    "OnsetPivot",
    "PowerLawPivot",
    "Allocation",
    "gate",
    "apply_gate",
    "calibrate_pivot",
    "calibrate_pivot_onset",
    "calibrate_pivot_powerlaw",
    "loss_weight",
    "build_allocation",
    "schedule_from_allocation",
    "effective_emphasis",
    "baseline_sampler",
    "smooth_profile",
    "loglog_slope",
]

DEFAULT_ONSET_P = 0.002
DEFAULT_GATE_N = 3


@dataclass(frozen=True)
class GateParams:
    c: float
    n: float = DEFAULT_GATE_N

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ConfigError(f"gate pivot c must be positive, got {self.c}")
        if not self.n >= 2:
            raise ConfigError(f"gate exponent n must be >= 2, got {self.n}")


@dataclass(frozen=True)
class Weighting:
    """Per-noise loss weight: ``unit`` (w = 1) or ``edm``."""

    kind: str = "unit"
    sigma_data: float = 0.5

    def __post_init__(self):
        if self.kind not in ("unit", "edm"):
            raise ConfigError(f"unknown weighting {self.kind!r}")
        if self.kind == "edm" and not self.sigma_data > 0:
            raise ConfigError("edm weighting needs sigma_data > 0")

    def __call__(self, sigma):
        return loss_weight(self, sigma)

    def to_dict(self) -> dict:
        if self.kind == "unit":
            return {"kind": "unit"}
        return {"kind": "edm", "sigma_data": self.sigma_data}

    @classmethod
    def from_dict(cls, obj) -> "Weighting":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj.get("kind", "unit"), float(obj.get("sigma_data", 0.5)))


@dataclass(frozen=True)
class OnsetPivot:
    """Onset-of-information rule, for continuous endpoints."""

    p: float = DEFAULT_ONSET_P

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ConfigError(f"onset threshold must lie in (0, 1), got {self.p}")

    def to_dict(self) -> dict:
        return {"kind": "onset", "p": self.p}


@dataclass(frozen=True)
class PowerLawPivot:
    """Power-law boundary rule, for discrete endpoints."""

    window: int = 9
    slope_tol: float = 0.15

    def __post_init__(self):
        if self.window < 3:
            raise ConfigError(f"power-law window must be >= 3, got {self.window}")
        if not self.slope_tol > 0:
            raise ConfigError("power-law slope tolerance must be positive")

    def to_dict(self) -> dict:
        return {"kind": "powerlaw", "window": self.window, "slope_tol": self.slope_tol}


PivotMethod = Union[OnsetPivot, PowerLawPivot]


def pivot_from_dict(obj) -> PivotMethod:
    if isinstance(obj, str):
        obj = {"kind": obj}
    kind = obj.get("kind", "onset")
    if kind == "onset":
        return OnsetPivot(float(obj.get("p", DEFAULT_ONSET_P)))
    if kind == "powerlaw":
        return PowerLawPivot(int(obj.get("window", 9)), float(obj.get("slope_tol", 0.15)))
    raise ConfigError(f"unknown pivot method {kind!r}")


def _positive_sigma(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    return s


def gate(sigma, params: GateParams):
    """Smooth low-noise gate ``sigma**n / (sigma**n + c**n)``."""
    s = _positive_sigma(sigma)
    # 1 / (1 + (c/s)^n) avoids overflow of s^n and c^n separately
    out = 1.0 / (1.0 + (params.c / s) ** params.n)
    return float(out) if out.ndim == 0 else out


def apply_gate(profile: Profile, params: GateParams) -> Profile:
    return Profile(profile.grid, profile.values * gate(profile.grid.centers, params))


def loss_weight(w: Weighting, sigma):
    s = _positive_sigma(sigma)
    if w.kind == "unit":
        out = np.ones_like(s)
    else:
        sd = w.sigma_data
        out = (s**2 + sd**2) / (s * sd) ** 2
    return float(out) if out.ndim == 0 else out


def _max_normalized(profile: Profile) -> np.ndarray:
    v = profile.values
    if np.any(v < 0):
        raise DegenerateProfileError("entropy-rate profile has negative values")
    peak = v.max()
    if not peak > 0:
        raise DegenerateProfileError("entropy-rate profile is identically zero")
    return v / peak


def calibrate_pivot_onset(profile: Profile, p: float = DEFAULT_ONSET_P) -> float:
    """Pivot at the persistent onset of the profile, scanning from high noise.

    Returns the lowest grid center of the trailing run of cells whose
    max-normalized value stays below ``p`` up to ``sigma_max``. If the top
    cell is already at or above ``p`` there is no such run and ``sigma_min``
    is returned, which leaves the gate essentially inert.
    """
    OnsetPivot(p)
    rbar = _max_normalized(profile)
    above = np.flatnonzero(rbar >= p)
    last = above[-1]  # the peak cell is always above p
    if last == profile.grid.K - 1:
        return profile.grid.sigma_min
    return float(profile.grid.centers[last + 1])


def loglog_slope(profile: Profile, window: int) -> np.ndarray:
    """Least-squares slope of ``log r`` vs ``log sigma`` over centered windows.

    Entry ``j`` is the slope of the window ``[j, j + window)``, i.e. centered
    on cell ``j + window // 2``.
    """
    v = profile.values
    if np.any(~(v > 0)):
        raise DegenerateProfileError("log-log slope needs a strictly positive profile")
    x = np.log(profile.grid.centers)
    y = np.log(v)
    xs = np.lib.stride_tricks.sliding_window_view(x, window)
    ys = np.lib.stride_tricks.sliding_window_view(y, window)
    xc = xs - xs.mean(axis=1, keepdims=True)
    return (xc * (ys - ys.mean(axis=1, keepdims=True))).sum(axis=1) / (xc**2).sum(axis=1)


def calibrate_pivot_powerlaw(profile: Profile, method: PowerLawPivot = PowerLawPivot()) -> float:
    """Upper edge of the stable low-noise power-law segment.

    The segment grows from ``sigma_min`` while every windowed slope in it
    stays within ``slope_tol`` of the segment's mean slope. It must contain at
    least ``window`` slope estimates; otherwise the knee (largest absolute
    second difference of ``log r`` in ``log sigma``) is returned instead.
    """
    grid = profile.grid
    W = method.window
    if grid.K < W + 2:
        raise ConfigError(f"grid with K={grid.K} too small for window {W}")
    slopes = loglog_slope(profile, W)
    end = 0
    for j in range(1, slopes.size + 1):
        seg = slopes[:j]
        if np.max(np.abs(seg - seg.mean())) > method.slope_tol:
            break
        end = j
    if end >= W:
        last_cell = end - 1 + W - 1  # last cell covered by the last window
        return float(grid.edges[last_cell + 1])
    y = np.log(profile.values)
    curvature = np.abs(y[2:] - 2 * y[1:-1] + y[:-2]) / grid.log_step**2
    return float(grid.centers[1 + int(np.argmax(curvature))])


def calibrate_pivot(profile: Profile, method: PivotMethod) -> float:
    if isinstance(method, OnsetPivot):
        return calibrate_pivot_onset(profile, method.p)
    if isinstance(method, PowerLawPivot):
        return calibrate_pivot_powerlaw(profile, method)
    raise ConfigError(f"unknown pivot method {method!r}")


def smooth_profile(profile: Profile) -> Profile:
    """3-point moving average along the grid; end cells average two points."""
    v = profile.values
    s = np.convolve(v, np.ones(3), mode="same")
    n = np.full(v.size, 3.0)
    n[0] = n[-1] = 2.0
    return Profile(profile.grid, s / n)


@dataclass(frozen=True, eq=False)
class Allocation:
    """Target allocation ``rho`` and its CDF, the entropic time ``u``."""

    rho: TabulatedDensity

    @property
    def grid(self) -> LogGrid:
        return self.rho.grid

    def u(self, sigma):
        return self.rho.cdf_at(sigma)

    def u_inverse(self, z):
        return inverse_cdf_sample(self.rho, z)


def build_allocation(gated: Profile) -> Allocation:
    return Allocation(normalize_to_density(gated))


WeightLike = Union[Weighting, Callable[[np.ndarray], np.ndarray]]


def _weights_on(w: WeightLike, grid: LogGrid) -> np.ndarray:
    vals = np.asarray(w(grid.centers), dtype=float) * np.ones(grid.K)
    if np.any(~(vals > 0)) or not np.all(np.isfinite(vals)):
        raise ConfigError("loss weight must be finite and positive on every cell")
    return vals


def schedule_from_allocation(alloc: Allocation | TabulatedDensity, w: WeightLike) -> TabulatedDensity:
    """Sampling schedule ``pi ∝ rho / w``."""
    rho = alloc.rho if isinstance(alloc, Allocation) else alloc
    if isinstance(w, Weighting) and w.kind == "unit":
        return rho
    return normalize_to_density(Profile(rho.grid, rho.density / _weights_on(w, rho.grid)))


def effective_emphasis(pi: TabulatedDensity, w: WeightLike) -> Profile:
    return Profile(pi.grid, pi.density * _weights_on(w, pi.grid))


def baseline_sampler(kind: str, grid: LogGrid, mean: float = -1.2, std: float = 1.2) -> TabulatedDensity:
    """Fixed reference samplers: ``log_uniform`` or ``log_normal``.

    ``log_normal`` is the density of ``sigma`` when ``log sigma ~ N(mean, std**2)``,
    truncated to the grid range.
    """
    s = grid.centers
    if kind == "log_uniform":
        vals = 1.0 / s
    elif kind == "log_normal":
        if not (std > 0 and np.isfinite(mean)):
            raise ConfigError(f"log_normal needs std > 0, got mean={mean}, std={std}")
        z = (np.log(s) - mean) / std
        vals = np.exp(-0.5 * z**2) / (s * std * np.sqrt(2 * np.pi))
    else:
        raise ConfigError(f"unknown baseline sampler {kind!r}")
    return normalize_to_density(Profile(grid, vals))
