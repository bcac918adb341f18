"""Log-spaced sigma grids, tabulated profiles and tabulated densities.

Every profile in the package lives on a :class:`LogGrid`: ``K`` cells of equal
width in ``log(sigma)`` covering ``[sigma_min, sigma_max]``. Profile values sit
at the geometric cell centers. A :class:`TabulatedDensity` adds a piecewise
linear CDF over the cell edges, which is what inverse-CDF sampling inverts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateProfileError, DomainError

__all__ = [
    "SigmaRange",
    "LogGrid",
    "Profile",
    "TabulatedDensity",
    "build_log_grid",
    "locate_bin",
    "integrate",
    "cumulative_integral",
    "normalize_to_density",
    "inverse_cdf_sample",
    "evaluate_density",
    "total_variation",
]

DEFAULT_SIGMA_MIN = 0.002
DEFAULT_SIGMA_MAX = 80.0
DEFAULT_K = 128


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SigmaRange:
    sigma_min: float = DEFAULT_SIGMA_MIN
    sigma_max: float = DEFAULT_SIGMA_MAX

    def __post_init__(self):
        lo, hi = float(self.sigma_min), float(self.sigma_max)
        if not (np.isfinite(lo) and np.isfinite(hi) and 0.0 < lo < hi):
            raise ConfigError(f"need 0 < sigma_min < sigma_max, got [{lo}, {hi}]")
        object.__setattr__(self, "sigma_min", lo)
        object.__setattr__(self, "sigma_max", hi)

    def contains(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        return (sigma >= self.sigma_min) & (sigma <= self.sigma_max)


@dataclass(frozen=True, eq=False)
class LogGrid:
    """Equal-log-width partition of a :class:`SigmaRange` into ``K`` cells.

    ``edges`` has ``K + 1`` entries, ``centers`` and ``widths`` have ``K``.
    Use :func:`build_log_grid` to construct one.
    """

    range: SigmaRange
    K: int
    edges: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)

    @property
    def sigma_min(self) -> float:
        return self.range.sigma_min

    @property
    def sigma_max(self) -> float:
        return self.range.sigma_max

    @property
    def log_step(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min) / self.K)

    def locate(self, sigma):
        return locate_bin(self, sigma)

    def __eq__(self, other):
        if not isinstance(other, LogGrid):
            return NotImplemented
        return self.range == other.range and self.K == other.K

    def __hash__(self):
        return hash((self.range, self.K))


def build_log_grid(range: SigmaRange | None = None, K: int = DEFAULT_K) -> LogGrid:
    """Build a log grid with ``K`` cells over ``range``.

    Cell centers are geometric midpoints ``sqrt(left * right)``; the outer
    edges are pinned exactly to ``sigma_min`` and ``sigma_max``.
    """
    if range is None:
        range = SigmaRange()
    if not isinstance(range, SigmaRange):
        raise ConfigError(f"range must be a SigmaRange, got {type(range).__name__}")
    if int(K) != K or K < 2:
        raise ConfigError(f"K must be an integer >= 2, got {K}")
    K = int(K)
    lo, hi = range.sigma_min, range.sigma_max
    edges = lo * (hi / lo) ** (np.arange(K + 1) / K)
    edges[0], edges[-1] = lo, hi
    centers = np.sqrt(edges[:-1] * edges[1:])
    widths = np.diff(edges)
    return LogGrid(range, K, _frozen(edges), _frozen(centers), _frozen(widths))


def locate_bin(grid: LogGrid, sigma):
    """Index ``k`` of the cell with ``edges[k] <= sigma < edges[k+1]``.

    ``sigma == sigma_max`` maps to ``K - 1``. Accepts scalars or arrays.
    """
    s = np.asarray(sigma, dtype=float)
    if not np.all(grid.range.contains(s)):
        raise DomainError(
            f"sigma outside [{grid.sigma_min}, {grid.sigma_max}]: {sigma!r}"
        )
    t = np.log(s / grid.sigma_min) / grid.log_step
    k = np.clip(np.floor(t).astype(np.int64), 0, grid.K - 1)
    # log arithmetic can land one cell off right at an edge
    k = np.where(s < grid.edges[k], k - 1, k)
    k = np.where((s >= grid.edges[k + 1]) & (k < grid.K - 1), k + 1, k)
    if k.ndim == 0:
        return int(k)
    return k


@dataclass(frozen=True, eq=False)
class Profile:
    """Real values tabulated at the cell centers of a grid."""

    grid: LogGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (self.grid.K,):
            raise ConfigError(f"profile needs {self.grid.K} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise DegenerateProfileError("profile contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def sigma(self) -> np.ndarray:
        return self.grid.centers

    def map(self, fn) -> "Profile":
        return Profile(self.grid, fn(self.grid.centers, self.values))

    def __mul__(self, other) -> "Profile":
        other = other.values if isinstance(other, Profile) else other
        return Profile(self.grid, self.values * other)

    __rmul__ = __mul__


def _nodes(grid: LogGrid, values: np.ndarray):
    # centers padded with the range endpoints, values held constant outward
    x = np.concatenate(([grid.sigma_min], grid.centers, [grid.sigma_max]))
    y = np.concatenate((values[:1], values, values[-1:]))
    return x, y


def integrate(profile: Profile) -> float:
    """Trapezoid rule over the cell centers, extended to both range ends."""
    x, y = _nodes(profile.grid, profile.values)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def cumulative_integral(profile: Profile) -> tuple[np.ndarray, np.ndarray]:
    """Running trapezoid integral at the padded node set.

    Returns ``(nodes, cumulative)`` with ``nodes = [sigma_min, centers...,
    sigma_max]`` and ``cumulative[0] == 0``.
    """
    x, y = _nodes(profile.grid, profile.values)
    c = np.concatenate(([0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))))
    return x, c


@dataclass(frozen=True, eq=False)
class TabulatedDensity:
    """Normalized density at cell centers plus a piecewise-linear CDF at edges.

    Within a cell the CDF is linear in sigma, so draws are uniform inside
    the cell they fall in. ``cdf[0] == 0`` and ``cdf[-1] == 1`` exactly.
    """

    grid: LogGrid
    density: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        d = _frozen(np.reshape(self.density, -1))
        c = _frozen(np.reshape(self.cdf, -1))
        if d.shape != (self.grid.K,) or c.shape != (self.grid.K + 1,):
            raise ConfigError("density/cdf shapes do not match the grid")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DegenerateProfileError("density must be finite and nonnegative")
        if c[0] != 0.0 or c[-1] != 1.0 or np.any(np.diff(c) < 0):
            raise DegenerateProfileError("cdf must rise monotonically from 0 to 1")
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "cdf", c)

    @property
    def masses(self) -> np.ndarray:
        """Probability mass of each cell."""
        return np.diff(self.cdf)

    def cdf_at(self, sigma):
        s = np.asarray(sigma, dtype=float)
        if not np.all(self.grid.range.contains(s)):
            raise DomainError(f"sigma outside the grid range: {sigma!r}")
        out = np.interp(s, self.grid.edges, self.cdf)
        return float(out) if out.ndim == 0 else out

    def sample(self, z):
        return inverse_cdf_sample(self, z)

    def draw(self, rng: np.random.Generator, size=None):
        return inverse_cdf_sample(self, rng.random(size))

    def evaluate(self, sigma):
        return evaluate_density(self, sigma)

    def as_profile(self) -> Profile:
        return Profile(self.grid, self.density)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "sigma_min": g.sigma_min,
            "sigma_max": g.sigma_max,
            "K": g.K,
            "edges": g.edges.tolist(),
            "centers": g.centers.tolist(),
            "density": self.density.tolist(),
            "cdf": self.cdf.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TabulatedDensity":
        grid = build_log_grid(SigmaRange(obj["sigma_min"], obj["sigma_max"]), obj["K"])
        if "edges" in obj and not np.allclose(obj["edges"], grid.edges, rtol=1e-12, atol=0):
            raise ConfigError("stored edges do not match the declared log grid")
        return cls(grid, np.asarray(obj["density"], float), np.asarray(obj["cdf"], float))


def normalize_to_density(profile: Profile) -> TabulatedDensity:
    """Scale a nonnegative profile to unit trapezoid integral and tabulate its CDF.

    The CDF accumulates per-cell masses ``density[k] * widths[k]`` and is
    renormalized so that it ends at exactly 1.
    """
    v = profile.values
    if np.any(v < 0):
        raise DegenerateProfileError("profile has negative values")
    total = integrate(profile)
    if not (total > 0 and np.isfinite(total)):
        raise DegenerateProfileError("profile has zero integral")
    density = v / total
    cum = np.concatenate(([0.0], np.cumsum(density * profile.grid.widths)))
    cdf = cum / cum[-1]
    cdf[-1] = 1.0
    return TabulatedDensity(profile.grid, density, cdf)


def inverse_cdf_sample(density: TabulatedDensity, z):
    """Map ``z`` in ``[0, 1]`` through the inverse of the piecewise-linear CDF."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(~((z_arr >= 0.0) & (z_arr <= 1.0))):
        raise DomainError(f"z must lie in [0, 1], got {z!r}")
    g, cdf = density.grid, density.cdf
    k = np.searchsorted(cdf, z_arr, side="right") - 1
    top = k >= g.K
    k = np.clip(k, 0, g.K - 1)
    lo, hi = cdf[k], cdf[k + 1]
    span = hi - lo
    frac = np.divide(z_arr - lo, span, out=np.zeros_like(z_arr), where=span > 0)
    out = g.edges[k] + np.clip(frac, 0.0, 1.0) * g.widths[k]
    out = np.where(top, g.sigma_max, out)
    out = np.where(z_arr == 0.0, g.sigma_min, out)
    return float(out) if out.ndim == 0 else out


def evaluate_density(density: TabulatedDensity, sigma):
    """Density at ``sigma``, linear in ``log(sigma)`` between cell centers."""
    s = np.asarray(sigma, dtype=float)
    if not np.all(density.grid.range.contains(s)):
        raise DomainError(f"sigma outside the grid range: {sigma!r}")
    out = np.interp(np.log(s), np.log(density.grid.centers), density.density)
    return float(out) if out.ndim == 0 else out


def total_variation(p: TabulatedDensity, q: TabulatedDensity) -> float:
    """Total-variation distance between two densities on the same grid."""
    if p.grid != q.grid:
        raise ConfigError("densities live on different grids")
    return float(0.5 * np.sum(np.abs(p.masses - q.masses)))
