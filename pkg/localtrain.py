"""Local training on a participant shard: plain SGD updates and sample-level DP-SGD."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from model import Model
from paramvec import ParamVector, RngStream
from synthdata import ClientDataset, Sample

LOGGER = logging.getLogger(__name__)

Batch = Union[ClientDataset, Sequence[Sample]]


class EmptyShardError(ValueError):
    pass


@dataclass(frozen=True)
class DPSGDConfig:
    z: float    # noise multiplier
    c: float    # per-sample clip bound

    def __post_init__(self):
        if self.z < 0:
            raise ValueError(f"DP-SGD noise multiplier must be >= 0, got {self.z}")
        if self.c <= 0:
            raise ValueError(f"DP-SGD clip bound must be > 0, got {self.c}")


@dataclass(frozen=True)
class LocalConfig:
    eta: float
    epochs: int
    batch_size: int
    dp: Optional[DPSGDConfig] = None
    frequency: int = 1      # aggregations per epochs-worth of local work

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.eta}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.frequency < 1:
            raise ValueError(f"aggregation frequency must be >= 1, got {self.frequency}")

    def local_steps(self, n: int) -> int:
        """Steps per round on an n-sample shard: epochs * ceil(n/K), split over ``frequency`` rounds."""
        if self.epochs == 0:
            return 0
        per_epoch = math.ceil(n / min(self.batch_size, n))
        return max(1, math.ceil(self.epochs * per_epoch / self.frequency))


@dataclass(frozen=True)
class UpdatePacket:
    """One participant's round contribution."""
    participant_id: int
    delta: ParamVector                      # raw update, local minus global
    local_steps: int                        # tau_i
    n_samples: int                          # n_i
    clipped: Optional[ParamVector] = None   # set by the server after clipping


def _as_arrays(batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, ClientDataset):
        return batch.features, batch.labels
    if len(batch) == 0:
        raise EmptyShardError("batch is empty")
    return np.stack([s.features.values for s in batch]), np.array([s.label for s in batch], dtype=np.float64)


def grad(model: Model, batch: Batch) -> ParamVector:
    """Mean of per-sample loss gradients at the current parameters."""
    features, labels = _as_arrays(batch)
    return ParamVector(np.mean(model.per_sample_gradients(model.theta.values, features, labels), axis=0))


def clip_rows(gradients: np.ndarray, c: float) -> np.ndarray:
    """Per-sample clip g / max(1, ||g|| / c)."""
    norms = np.sqrt(np.sum(gradients * gradients, axis=1))
    return gradients / np.maximum(1.0, norms / c)[:, None]


def local_update(model: Model, data: ClientDataset, cfg: LocalConfig, stream: RngStream,
                 participant_id: int = 0) -> UpdatePacket:
    """Train from the received global parameters and report the raw update.

    Runs ``cfg.local_steps(n)`` steps: minibatch SGD over fresh shuffles, or DP-SGD on
    Poisson batches when ``cfg.dp`` is set.
    """
    n = len(data)
    if n == 0:
        raise EmptyShardError(f"participant {participant_id}: empty shard")
    theta_global = model.theta
    steps = cfg.local_steps(n)

    if cfg.dp is not None:
        theta_local = dp_sgd_round(model, data, cfg, stream, n_batches=steps).theta if steps else theta_global
    else:
        batch_size = min(cfg.batch_size, n)
        steps_per_epoch = math.ceil(n / batch_size)
        rng = stream.generator
        theta = np.array(theta_global.values)
        perm = None
        for step in range(steps):
            b = step % steps_per_epoch
            if b == 0:
                perm = rng.permutation(n)
            idx = perm[b * batch_size:(b + 1) * batch_size]
            g = np.mean(model.per_sample_gradients(theta, data.features[idx], data.labels[idx]), axis=0)
            theta = theta - cfg.eta * g
        theta_local = ParamVector(theta)

    delta = theta_local - theta_global
    LOGGER.debug(f"participant {participant_id}: {steps} local steps on {n} samples")
    return UpdatePacket(participant_id=participant_id, delta=delta, local_steps=steps, n_samples=n)


def poisson_batches(stream: RngStream, n: int, batch_size: int, n_batches: int) -> list[np.ndarray]:
    """Index sets where each sample joins each batch independently with probability K/n."""
    rate = batch_size / n
    rng = stream.generator
    return [np.flatnonzero(rng.random(n) < rate) for _ in range(n_batches)]


def clipped_sgd(model: Model, data: ClientDataset, eta: float, c: float, batches: Sequence[np.ndarray],
                batch_size: int) -> Model:
    """theta <- theta - eta/K * (sum of clipped per-sample gradients) for every batch."""
    theta = np.array(model.theta.values)
    for idx in batches:
        total = np.zeros_like(theta)
        if idx.size:
            g = model.per_sample_gradients(theta, data.features[idx], data.labels[idx])
            total = np.sum(clip_rows(g, c), axis=0)
        theta = theta - eta * (total / batch_size)
    return model.with_theta(ParamVector(theta))


def noisy_batch_gradient(model: Model, data: ClientDataset, idx: np.ndarray, cfg: LocalConfig,
                         rng: np.random.Generator) -> np.ndarray:
    """g~ = (1/K) (sum of clipped gradients + N(0, z^2 c^2 I)) for one batch at the current parameters."""
    theta = model.theta.values
    total = np.zeros_like(theta)
    if idx.size:
        total = np.sum(clip_rows(model.per_sample_gradients(theta, data.features[idx], data.labels[idx]),
                                 cfg.dp.c), axis=0)
    return (total + rng.normal(0.0, cfg.dp.z * cfg.dp.c, size=theta.size)) / cfg.batch_size


def dp_sgd_round(model: Model, data: ClientDataset, cfg: LocalConfig, stream: RngStream,
                 n_batches: Optional[int] = None) -> Model:
    """DP-SGD over Poisson batches, ceil(N/K) of them unless ``n_batches`` is given."""
    if cfg.dp is None:
        raise ValueError("dp_sgd_round needs a LocalConfig with dp settings")
    n = len(data)
    if n == 0:
        raise EmptyShardError("empty shard")
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds shard size {n}")
    if n_batches is None:
        n_batches = math.ceil(n / cfg.batch_size)
    batches = poisson_batches(stream, n, cfg.batch_size, n_batches)

    noise_rng = stream.spawn(0).generator
    for idx in batches:
        g = noisy_batch_gradient(model, data, idx, cfg, noise_rng)
        model = model.with_theta(ParamVector(model.theta.values - cfg.eta * g))
    return model
