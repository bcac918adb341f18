"""A small tanh MLP denoiser with hand-written backprop, and a training loop.

The network maps ``[x, log sigma]`` to an estimate of the clean sample. Each
training step draws noise levels from the scheduler, takes one optimizer step
on the weighted squared error and feeds the *unweighted* per-item losses back
to the scheduler.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .allocate import Weighting, loss_weight
from .errors import ConfigError, DataError
from .oracle import Dataset

__all__ = [
    "MlpDenoiser",
    "TrainConfig",
    "TrainResult",
    "forward",
    "loss_and_grad",
    "train_loop",
    "CHECKPOINT_FORMAT",
]

CHECKPOINT_FORMAT = "infonoise-mlp/1"


@dataclass
class MlpDenoiser:
    """Fully connected network; hidden layers use tanh, the output is linear.

    ``weights[l]`` has shape ``(sizes[l + 1], sizes[l])``. The input size is
    ``d + 1`` (the point and ``log sigma``), the output size is ``d``.

    With ``sigma_data=None`` the network output is the denoised estimate.
    With a data scale ``sigma_data`` the estimate is
    ``c_skip x + c_out F(c_in x, log sigma)``, where ``c_skip = sd^2/(s^2+sd^2)``,
    ``c_out = s sd / sqrt(s^2+sd^2)`` and ``c_in = 1/sqrt(s^2+sd^2)``; the skip
    path keeps the low-noise error of order ``sigma^2``.
    """

    sizes: tuple
    weights: list
    biases: list
    sigma_data: Optional[float] = None

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or self.sizes[0] != self.sizes[-1] + 1:
            raise ConfigError(f"layer sizes must run from d + 1 to d, got {self.sizes}")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[l + 1], self.sizes[l]) or b.shape != (self.sizes[l + 1],):
                raise ConfigError(f"layer {l} parameter shapes do not match sizes {self.sizes}")
        if self.sigma_data is not None and not self.sigma_data > 0:
            raise ConfigError(f"sigma_data must be positive, got {self.sigma_data}")

    @classmethod
    def init(
        cls,
        d: int,
        hidden: Sequence[int] = (64, 64),
        rng: Optional[np.random.Generator] = None,
        zero_last: bool = False,
        sigma_data: Optional[float] = None,
    ) -> "MlpDenoiser":
        rng = rng or np.random.default_rng(0)
        sizes = (d + 1, *hidden, d)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
            biases.append(np.zeros(fan_out))
        if zero_last:
            weights[-1][:] = 0.0
        return cls(sizes, weights, biases, sigma_data)

    @property
    def d(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for pair in zip(self.weights, self.biases) for p in pair])

    def set_flat(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ConfigError(f"expected {self.n_params} parameters, got {theta.size}")
        i = 0
        for l in range(len(self.weights)):
            for arr in (self.weights[l], self.biases[l]):
                arr[...] = theta[i : i + arr.size].reshape(arr.shape)
                i += arr.size

    def copy(self) -> "MlpDenoiser":
        return MlpDenoiser(
            self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.sigma_data
        )

    def __call__(self, x, sigma):
        return forward(self, x, sigma)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "sizes": list(self.sizes),
            "activation": "tanh",
            "sigma_data": self.sigma_data,
            "params": self.get_flat().tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MlpDenoiser":
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"unsupported checkpoint format {obj.get('format')!r}")
        sizes = tuple(obj["sizes"])
        net = cls(
            sizes,
            [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
            [np.zeros(o) for o in sizes[1:]],
            obj.get("sigma_data"),
        )
        net.set_flat(np.asarray(obj["params"], dtype=float))
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpDenoiser":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _scalings(mlp: MlpDenoiser, sig: np.ndarray):
    """Per-row ``(c_skip, c_out, c_in)``, each of shape ``(M, 1)``."""
    if mlp.sigma_data is None:
        one = np.ones((sig.size, 1))
        return np.zeros((sig.size, 1)), one, one
    sd2 = mlp.sigma_data**2
    s = sig[:, None]
    root = np.sqrt(s**2 + sd2)
    return sd2 / root**2, s * mlp.sigma_data / root, 1.0 / root


def _inputs(mlp: MlpDenoiser, x, sigma):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != mlp.d:
        raise DataError(f"input dimension {x2.shape[-1]} does not match network dimension {mlp.d}")
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (x2.shape[0],))
    if np.any(~(sig > 0)):
        raise DataError("sigma must be positive")
    c_skip, c_out, c_in = _scalings(mlp, sig)
    return np.hstack([c_in * x2, np.log(sig)[:, None]]), x2, c_skip, c_out, single


def _forward_cached(mlp: MlpDenoiser, h: np.ndarray):
    acts = [h]
    last = len(mlp.weights) - 1
    for l, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ W.T + b
        h = z if l == last else np.tanh(z)
        acts.append(h)
    return acts


def forward(mlp: MlpDenoiser, x, sigma) -> np.ndarray:
    inp, x2, c_skip, c_out, single = _inputs(mlp, x, sigma)
    out = c_skip * x2 + c_out * _forward_cached(mlp, inp)[-1]
    return out[0] if single else out


def loss_and_grad(
    mlp: MlpDenoiser,
    x0: np.ndarray,
    sigma: np.ndarray,
    eps: np.ndarray,
    w: Weighting = Weighting(),
):
    """Weighted denoising objective and its exact gradient.

    Returns ``(objective, grads, per_item_loss)`` where ``objective`` is the
    batch mean of ``w(sigma) * ||x0 - D(x0 + sigma eps, sigma)||^2``, ``grads``
    is a list of ``(dW, db)`` per layer and ``per_item_loss`` holds the
    unweighted squared errors.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (x0.shape[0],))
    if x0.shape[0] == 0:
        raise DataError("empty batch")
    inp, x, c_skip, c_out, _ = _inputs(mlp, x0 + sigma[:, None] * eps, sigma)
    acts = _forward_cached(mlp, inp)
    resid = c_skip * x + c_out * acts[-1] - x0
    ell = np.einsum("ij,ij->i", resid, resid)
    wt = np.asarray(loss_weight(w, sigma), dtype=float) * np.ones_like(ell)
    m = x0.shape[0]
    objective = float(np.mean(wt * ell))

    delta = (2.0 / m) * wt[:, None] * resid * c_out
    grads = [None] * len(mlp.weights)
    for l in range(len(mlp.weights) - 1, -1, -1):
        grads[l] = (delta.T @ acts[l], delta.sum(axis=0))
        if l > 0:
            delta = (delta @ mlp.weights[l]) * (1.0 - acts[l] ** 2)
    return objective, grads, ell


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    steps: int = 5000
    optimizer: str = "momentum"
    momentum: float = 0.9
    seed: int = 0
    sigma_per_batch: bool = False
    log_every: int = 100

    def validate(self) -> None:
        if not self.lr > 0 or self.batch_size < 1 or self.steps < 0:
            raise ConfigError("need lr > 0, batch_size >= 1, steps >= 0")
        if self.optimizer not in ("sgd", "momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    mlp: MlpDenoiser
    refresh_log: list = field(default_factory=list)
    train_log: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def train_loop(data: Dataset, sched, mlp: MlpDenoiser, cfg: TrainConfig, weighting: Weighting | None = None, rng=None, callback=None) -> TrainResult:
    """Train ``mlp`` in place; ``sched`` is a Scheduler or a FixedSchedule.

    ``weighting`` defaults to the scheduler's configured loss weight (unit for
    a fixed schedule). ``callback(step, mlp, sched)`` runs after every step.
    """
    cfg.validate()
    if weighting is None:
        config = getattr(sched, "config", None)
        weighting = config.weighting if config is not None else Weighting()
    if data.d != mlp.d:
        raise DataError(f"dataset dimension {data.d} does not match network dimension {mlp.d}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    result = TrainResult(mlp)
    velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in zip(mlp.weights, mlp.biases)]
    B = cfg.batch_size
    window = []
    for step in range(1, cfg.steps + 1):
        if cfg.sigma_per_batch:
            sigma = np.repeat(sched.sample_sigmas(rng, 1), B)
        else:
            sigma = sched.sample_sigmas(rng, B)
        x0 = data.samples[rng.integers(data.N, size=B)]
        eps = rng.standard_normal((B, data.d))
        obj, grads, ell = loss_and_grad(mlp, x0, sigma, eps, weighting)
        for l, (dW, db) in enumerate(grads):
            if cfg.optimizer == "momentum":
                vW, vb = velocity[l]
                vW *= cfg.momentum
                vW -= cfg.lr * dW
                vb *= cfg.momentum
                vb -= cfg.lr * db
                mlp.weights[l] += vW
                mlp.biases[l] += vb
            else:
                mlp.weights[l] -= cfg.lr * dW
                mlp.biases[l] -= cfg.lr * db
        sched.record_loss(sigma, ell)
        snap = sched.maybe_refresh()
        if snap is not None:
            result.refresh_log.append(snap.to_record())
        mean_loss = float(ell.mean())
        result.losses.append(mean_loss)
        window.append(mean_loss)
        if step % cfg.log_every == 0 or step == cfg.steps:
            result.train_log.append(
                {"step": step, "mean_loss": float(np.mean(window)), "snapshot_version": sched.snapshot.version}
            )
            window = []
        if callback is not None:
            callback(step, mlp, sched)
    return result
