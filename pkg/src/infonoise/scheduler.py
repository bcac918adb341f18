"""Online noise-level scheduler driven by per-sample denoising losses.

The scheduler keeps a FIFO of recent losses per log-grid bin. Every ``M``
draws past the warm-up, once every bin holds at least ``N_min`` losses, it
turns the buffer means into an EMA estimate of the MMSE, converts that to an
entropy rate ``mmse / sigma**3``, gates the low-noise tail at a calibrated
pivot, divides by the loss weight and publishes a new sampling density.

Ownership: ``record_loss`` and ``maybe_refresh`` belong to a single writer
(the training loop). Readers only touch ``snapshot``, which is replaced by a
single attribute assignment and never mutated in place.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Optional, Union

import numpy as np

from .allocate import (
    GateParams,
    OnsetPivot,
    PivotMethod,
    PowerLawPivot,
    Weighting,
    apply_gate,
    baseline_sampler,
    calibrate_pivot,
    loss_weight,
    pivot_from_dict,
    smooth_profile,
)
from .errors import AbsentDataError, ConfigError, DataError, DegenerateProfileError
from .grid import (
    LogGrid,
    Profile,
    SigmaRange,
    TabulatedDensity,
    build_log_grid,
    inverse_cdf_sample,
    locate_bin,
    normalize_to_density,
)

__all__ = [
    "SchedulerConfig",
    "ScheduleSnapshot",
    "Scheduler",
    "FixedSchedule",
    "new_scheduler",
    "build_sampler",
    "rate_to_schedule",
]


@dataclass
class SchedulerConfig:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    K: int = 128
    pi_base: Union[str, TabulatedDensity] = "log_uniform"
    pi_base_mean: float = -1.2
    pi_base_std: float = 1.2
    N_warm: int = 5000
    M: int = 1000
    B: int = 256
    beta: float = 0.1
    weighting: Weighting = field(default_factory=Weighting)
    n_gate: float = 3
    N_min: int = 8
    pivot: PivotMethod = field(default_factory=OnsetPivot)
    smoothing: bool = True
    # literal EMA start from zero instead of seeding with the first buffer mean
    ema_from_zero: bool = False
    clear_buffers: bool = False

    def validate(self) -> None:
        SigmaRange(self.sigma_min, self.sigma_max)
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.N_warm < 0 or self.M < 1 or self.B < 1 or self.N_min < 1:
            raise ConfigError("need N_warm >= 0, M >= 1, B >= 1, N_min >= 1")
        if not 0 < self.beta <= 1:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.n_gate >= 2:
            raise ConfigError(f"n_gate must be >= 2, got {self.n_gate}")
        if not isinstance(self.weighting, Weighting):
            raise ConfigError("weighting must be a Weighting")
        if not isinstance(self.pivot, (OnsetPivot, PowerLawPivot)):
            raise ConfigError("pivot must be OnsetPivot or PowerLawPivot")

    @property
    def grid(self) -> LogGrid:
        return build_log_grid(SigmaRange(self.sigma_min, self.sigma_max), self.K)

    def base_density(self) -> TabulatedDensity:
        if isinstance(self.pi_base, TabulatedDensity):
            if self.pi_base.grid != self.grid:
                raise ConfigError("pi_base lives on a different grid than the scheduler")
            return self.pi_base
        return baseline_sampler(self.pi_base, self.grid, self.pi_base_mean, self.pi_base_std)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (Weighting, OnsetPivot, PowerLawPivot)):
                v = v.to_dict()
            elif isinstance(v, TabulatedDensity):
                v = {"kind": "tabulated", **v.to_dict()}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SchedulerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown scheduler config keys: {sorted(unknown)}")
        kw = dict(obj)
        if "weighting" in kw:
            kw["weighting"] = Weighting.from_dict(kw["weighting"])
        if "pivot" in kw:
            kw["pivot"] = pivot_from_dict(kw["pivot"])
        if isinstance(kw.get("pi_base"), dict):
            pb = kw["pi_base"]
            kw["pi_base"] = TabulatedDensity.from_dict(pb) if pb.get("kind") == "tabulated" else pb["kind"]
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "SchedulerConfig":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(obj)


@dataclass(frozen=True, eq=False)
class ScheduleSnapshot:
    version: int
    density: TabulatedDensity
    rate_profile: Optional[Profile] = None
    raw_rate: Optional[Profile] = None
    pivot_c: Optional[float] = None
    step: int = 0

    def to_record(self) -> dict:
        return {
            "step": self.step,
            "version": self.version,
            "pivot_c": self.pivot_c,
            "r_hat": None if self.raw_rate is None else self.raw_rate.values.tolist(),
            "r_tilde": None if self.rate_profile is None else self.rate_profile.values.tolist(),
            "density": self.density.density.tolist(),
        }


def build_sampler(q, grid: LogGrid) -> TabulatedDensity:
    """Continuous sampler from per-cell values ``q``; mass of cell k is ∝ q_k Δσ_k."""
    q = np.asarray(q, dtype=float)
    if q.shape != (grid.K,) or np.any(q < 0) or not np.all(np.isfinite(q)):
        raise DegenerateProfileError("sampler values must be K finite nonnegative numbers")
    if not np.any(q > 0):
        raise DegenerateProfileError("sampler values are all zero")
    return normalize_to_density(Profile(grid, q))


def rate_to_schedule(rate: Profile, config: SchedulerConfig):
    """Post-process an ungated rate exactly as a scheduler refresh does.

    Returns ``(density, gated_rate, pivot_c)``. Used for offline references.
    """
    c = calibrate_pivot(rate, config.pivot)
    gated = apply_gate(rate, GateParams(c, config.n_gate))
    if config.smoothing:
        gated = smooth_profile(gated)
    q = gated.values / loss_weight(config.weighting, rate.grid.centers)
    return build_sampler(q, rate.grid), gated, c


class Scheduler:
    def __init__(self, config: SchedulerConfig):
        config.validate()
        self.config = config
        self.grid = config.grid
        self.base = config.base_density()
        K = self.grid.K
        self.buffers = [deque(maxlen=config.B) for _ in range(K)]
        self.counts = np.zeros(K, dtype=np.int64)
        self.ema_mse = np.zeros(K) if config.ema_from_zero else np.full(K, np.nan)
        self.step = 0
        self.skipped_refreshes = 0
        self._last_checked = 0
        self.snapshot = ScheduleSnapshot(0, self.base)

    @property
    def warm(self) -> bool:
        return self.step <= self.config.N_warm

    def sample_sigma(self, rng: np.random.Generator) -> float:
        return float(self.sample_sigmas(rng, 1)[0])

    def sample_sigmas(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` noise levels; each draw advances the step counter by one."""
        z = rng.random(n)
        steps = self.step + 1 + np.arange(n)
        self.step += n
        in_warmup = steps <= self.config.N_warm
        out = np.empty(n)
        if np.any(in_warmup):
            out[in_warmup] = inverse_cdf_sample(self.base, z[in_warmup])
        if not np.all(in_warmup):
            out[~in_warmup] = inverse_cdf_sample(self.snapshot.density, z[~in_warmup])
        return out

    def record_loss(self, sigma, loss) -> None:
        """Push one unweighted loss (or a batch of them) into its sigma bin."""
        sig = np.atleast_1d(np.asarray(sigma, dtype=float))
        ell = np.atleast_1d(np.asarray(loss, dtype=float))
        if sig.shape != ell.shape:
            raise DataError("sigma and loss batches differ in length")
        if np.any(~np.isfinite(ell)) or np.any(ell < 0):
            raise DataError(f"losses must be finite and nonnegative, got {loss!r}")
        bins = locate_bin(self.grid, sig)
        B = self.config.B
        for k, v in zip(np.atleast_1d(bins), ell):
            self.buffers[k].append(float(v))
            if self.counts[k] < B:
                self.counts[k] += 1

    def _due(self) -> bool:
        # a multiple of M was reached since the previous check
        M = self.config.M
        due = self.step // M > self._last_checked // M
        self._last_checked = self.step
        return due

    def maybe_refresh(self) -> Optional[ScheduleSnapshot]:
        due = self._due()
        if self.warm or not due or self.counts.min() < self.config.N_min:
            return None
        cfg = self.config
        means = np.array([sum(b) / len(b) for b in self.buffers])
        fresh = np.isnan(self.ema_mse)
        ema = (1 - cfg.beta) * self.ema_mse + cfg.beta * means
        ema[fresh] = means[fresh]
        raw = Profile(self.grid, ema / self.grid.centers**3)
        try:
            density, gated, c = rate_to_schedule(raw, cfg)
        except DegenerateProfileError:
            self.ema_mse = ema
            self.skipped_refreshes += 1
            return None
        self.ema_mse = ema
        if cfg.clear_buffers:
            for b in self.buffers:
                b.clear()
            self.counts[:] = 0
        snap = ScheduleSnapshot(self.snapshot.version + 1, density, gated, raw, c, self.step)
        self.snapshot = snap
        return snap

    def export_profile(self) -> Profile:
        """Current ungated entropy-rate estimate."""
        if self.snapshot.raw_rate is None:
            raise AbsentDataError("no refresh has completed yet")
        return self.snapshot.raw_rate


def new_scheduler(config: SchedulerConfig | None = None) -> Scheduler:
    return Scheduler(config or SchedulerConfig())


class FixedSchedule:
    """Scheduler-shaped wrapper around a fixed density; never refreshes."""

    def __init__(self, density: TabulatedDensity):
        self.grid = density.grid
        self.snapshot = ScheduleSnapshot(0, density)
        self.step = 0

    def sample_sigmas(self, rng: np.random.Generator, n: int) -> np.ndarray:
        self.step += n
        return inverse_cdf_sample(self.snapshot.density, rng.random(n))

    def sample_sigma(self, rng: np.random.Generator) -> float:
        return float(self.sample_sigmas(rng, 1)[0])

    def record_loss(self, sigma, loss) -> None:
        pass

    def maybe_refresh(self) -> None:
        return None
