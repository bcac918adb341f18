"""Oracle-driven scheduler runs and offline reference schedules."""
from __future__ import annotations

from typing import Callable, Iterator, Optional

import numpy as np

from .errors import ConfigError
from .grid import TabulatedDensity, total_variation
from .oracle import Dataset, entropy_rate_profile, mmse_profile, posterior_trace_cov
from .scheduler import Scheduler, SchedulerConfig, rate_to_schedule
from .toy import TwoPointModel, toy_mmse_profile

__all__ = ["reference_schedule", "simulate", "two_point_atom"]


def two_point_atom(data: Dataset) -> Optional[float]:
    """``a`` if the dataset is exactly ``{-a, +a}`` in one dimension, else None."""
    if data.d != 1 or data.N != 2:
        return None
    lo, hi = sorted(data.samples[:, 0])
    if hi > 0 and lo == -hi:
        return float(hi)
    return None


def reference_schedule(
    data: Dataset,
    config: SchedulerConfig,
    method: str = "auto",
    n_mc: int = 20_000,
    seed: int = 0,
) -> TabulatedDensity:
    """Offline target: the refresh post-processing applied to an exact MMSE profile.

    ``method`` is ``toy`` (quadrature, two-point data only), ``mc`` (Monte
    Carlo over the empirical prior) or ``auto``.
    """
    grid = config.grid
    a = two_point_atom(data)
    if method == "auto":
        method = "toy" if a is not None else "mc"
    if method not in ("toy", "mc"):
        raise ConfigError(f"unknown reference method {method!r}")
    if method == "toy":
        if a is None:
            raise ConfigError("toy reference needs a symmetric two-point 1D dataset")
        mmse = toy_mmse_profile(TwoPointModel(a), grid)
    else:
        mmse = mmse_profile(data, grid, n_mc=n_mc, seed=seed)
    density, _, _ = rate_to_schedule(entropy_rate_profile(mmse), config)
    return density


def simulate(
    data: Dataset,
    sched: Scheduler,
    steps: int,
    rng: np.random.Generator,
    reference: Optional[TabulatedDensity] = None,
    on_refresh: Optional[Callable[[dict], None]] = None,
) -> Iterator[dict]:
    """Drive ``sched`` with stochastic oracle losses for ``steps`` draws.

    Each draw picks an atom ``x0`` uniformly, forms ``x0 + sigma * eps`` and
    records the posterior trace covariance there as the loss. Yields one
    record per published refresh, with ``tv_reference`` when a reference
    density is supplied.
    """
    M = sched.config.M
    done = 0
    while done < steps:
        # the published density only changes at multiples of M
        n = min(steps - done, M - sched.step % M)
        sigma = sched.sample_sigmas(rng, n)
        x0 = data.samples[rng.integers(data.N, size=n)]
        x = x0 + sigma[:, None] * rng.standard_normal((n, data.d))
        ell = posterior_trace_cov(data, x, sigma)
        sched.record_loss(sigma, ell)
        done += n
        snap = sched.maybe_refresh()
        if snap is not None:
            rec = snap.to_record()
            if reference is not None:
                rec["tv_reference"] = total_variation(snap.density, reference)
            if on_refresh is not None:
                on_refresh(rec)
            yield rec
