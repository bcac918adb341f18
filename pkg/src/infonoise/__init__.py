"""Information-driven noise schedules for diffusion training and sampling.

The submodules cover the log-sigma grid and tabulated densities (``grid``),
pivots, gates and schedules (``allocate``), the exact empirical-Bayes oracle
(``oracle``), the two-point model (``toy``), the online scheduler
(``scheduler``), inference grids and the Heun sampler (``infer``) and a small
trainable denoiser (``train``).
"""

__version__ = "0.1.0"

from .allocate import (
    Allocation,
    GateParams,
    OnsetPivot,
    PowerLawPivot,
    Weighting,
    apply_gate,
    baseline_sampler,
    build_allocation,
    calibrate_pivot,
    effective_emphasis,
    gate,
    schedule_from_allocation,
)
from .errors import (
    AbsentDataError,
    ConfigError,
    DataError,
    DegenerateProfileError,
    DomainError,
    InfoNoiseError,
    IntegrationError,
)
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
from .infer import InferenceGrid, heun_nfe, heun_sample, infogrid, reference_grid
from .oracle import (
    Dataset,
    GaussianPrior,
    bayes_denoiser,
    entropy_rate_profile,
    mmse_profile,
    posterior_stats,
    score,
)
from .scheduler import FixedSchedule, Scheduler, SchedulerConfig, ScheduleSnapshot, new_scheduler
from .toy import TwoPointModel, fixed_points, toy_denoiser, toy_mmse
from .train import MlpDenoiser, TrainConfig, loss_and_grad, train_loop

__all__ = [
    "__version__",
    "Allocation",
    "GateParams",
    "OnsetPivot",
    "PowerLawPivot",
    "Weighting",
    "apply_gate",
    "baseline_sampler",
    "build_allocation",
    "calibrate_pivot",
    "effective_emphasis",
    "gate",
    "schedule_from_allocation",
    "AbsentDataError",
    "ConfigError",
    "DataError",
    "DegenerateProfileError",
    "DomainError",
    "InfoNoiseError",
    "IntegrationError",
    "LogGrid",
    "Profile",
    "SigmaRange",
    "TabulatedDensity",
    "build_log_grid",
    "inverse_cdf_sample",
    "locate_bin",
    "normalize_to_density",
    "InferenceGrid",
    "heun_nfe",
    "heun_sample",
    "infogrid",
    "reference_grid",
    "Dataset",
    "GaussianPrior",
    "bayes_denoiser",
    "entropy_rate_profile",
    "mmse_profile",
    "posterior_stats",
    "score",
    "FixedSchedule",
    "Scheduler",
    "SchedulerConfig",
    "ScheduleSnapshot",
    "new_scheduler",
    "TwoPointModel",
    "fixed_points",
    "toy_denoiser",
    "toy_mmse",
    "MlpDenoiser",
    "TrainConfig",
    "loss_and_grad",
    "train_loop",
]
