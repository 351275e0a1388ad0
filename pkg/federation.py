"""Server side of client-level DP federated learning.

One round: broadcast theta to every (sub-)participant, collect their local updates, clip and
aggregate them with the Gaussian mechanism, apply the server optimizer, and report the noise
level xi, the diversity level phi and the intermediary ratio lambda = xi / phi next to the
usual evaluation metrics.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from constants import (AUC_SENTINEL, BETA1, BETA2, CLIP_LR, CLIP_QUANTILE, CLIP_QUANTILE_NOISE,
                       DECISION_THRESHOLD, RATIO_GUARD, SERVER_LR, TAU_ADAPT, ServerOptimizer, Stream)
from dpmech import (ClipState, NoiseSpec, adapt_clip, aggregate, effective_noise_multiplier,
                    initial_clip_state)
from localtrain import LocalConfig, UpdatePacket, local_update
from model import LogisticModel
from paramvec import ParamVector, RngStream, l2_norm
from synthdata import ClientDataset, IntermediaryPartition
from utils import AccuracyMeter

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServerHyper:
    server_lr: float = SERVER_LR
    beta1: float = BETA1
    beta2: float = BETA2
    tau: float = TAU_ADAPT


@dataclass(frozen=True)
class ServerState:
    theta: ParamVector
    round: int = 0
    optimizer: ServerOptimizer = ServerOptimizer.FEDAVG
    hyper: ServerHyper = field(default_factory=ServerHyper)
    moment1: Optional[ParamVector] = None
    moment2: Optional[ParamVector] = None
    clip: Optional[ClipState] = None     # None until the first round sets C from the update norms
    last_xi: float = 0.0
    last_phi: float = 0.0

    def __post_init__(self):
        for moment in (self.moment1, self.moment2):
            if moment is not None and moment.dim != self.theta.dim:
                raise ValueError(f"optimizer moment has dim {moment.dim}, theta has dim {self.theta.dim}")


def init_server_state(theta: ParamVector, optimizer: ServerOptimizer = ServerOptimizer.FEDAVG,
                      hyper: ServerHyper = ServerHyper(), clip: Optional[ClipState] = None) -> ServerState:
    moment1 = moment2 = None
    if optimizer == ServerOptimizer.FEDADAM:
        moment1 = ParamVector.zeros(theta.dim)
        moment2 = ParamVector(np.full(theta.dim, hyper.tau ** 2))
    return ServerState(theta=theta, optimizer=optimizer, hyper=hyper, moment1=moment1, moment2=moment2, clip=clip)


@dataclass(frozen=True)
class RoundConfig:
    local: LocalConfig
    z: float
    seed: int
    subsample_ratio: float = 1.0
    clip_adaptive: bool = True
    clip_lr: float = CLIP_LR
    clip_quantile: float = CLIP_QUANTILE
    clip_quantile_noise: float = CLIP_QUANTILE_NOISE


@dataclass(frozen=True)
class RoundReport:
    round: int
    xi: float
    phi: float
    lam: float
    clip_C: float
    v_per_client: tuple[int, ...]
    n_participants: int
    train_loss: float
    test_acc: float
    test_auc: float
    guarded: bool = False
    auc_defined: bool = True
    epsilon_so_far: float = math.nan
    sim_std: float = math.nan           # spread of update directions around the aggregate
    v_target: int = 0                   # controller target after this round; 0 when it did not run
    v_next: int = 0                     # v applied from the next round on; 0 when the controller did not run


@dataclass(frozen=True)
class EvalResult:
    acc: float
    auc: float
    loss: float
    auc_defined: bool = True


@dataclass(frozen=True)
class Participant:
    participant_id: int
    client_id: int
    shard: int
    data: ClientDataset


def _ratio(numerator: float, clipped_sum: ParamVector, fallback: float) -> tuple[float, bool]:
    denominator = l2_norm(clipped_sum)
    if denominator < RATIO_GUARD:
        return fallback, True
    return numerator / denominator, False


def noise_level(zeta: ParamVector, clipped_sum: ParamVector, fallback: float = 0.0) -> tuple[float, bool]:
    """xi = ||zeta|| / ||sum of clipped updates||; ``(fallback, True)`` when the denominator vanishes."""
    if zeta.dim != clipped_sum.dim:
        raise ValueError(f"noise has dim {zeta.dim}, clipped sum has dim {clipped_sum.dim}")
    return _ratio(l2_norm(zeta), clipped_sum, fallback)


def diversity_level(raw_norms: Sequence[float], clipped_sum: ParamVector, fallback: float = 0.0) -> tuple[float, bool]:
    """phi = sum of raw update norms / ||sum of clipped updates||; same guard as ``noise_level``."""
    if len(raw_norms) == 0:
        raise ValueError("diversity level needs at least one update norm")
    return _ratio(float(sum(raw_norms)), clipped_sum, fallback)


def direction_spread(deltas: Sequence[ParamVector], clipped_sum: ParamVector) -> float:
    """Standard deviation of the cosine similarities between each update and the aggregate.

    Zero updates count as cosine 0. NaN when the aggregate itself vanishes.
    """
    if not deltas:
        raise ValueError("direction spread needs at least one update")
    reference = l2_norm(clipped_sum)
    if reference < RATIO_GUARD:
        return math.nan
    cosines = []
    for delta in deltas:
        norm = l2_norm(delta)
        cosines.append(float(np.dot(delta.values, clipped_sum.values)) / (norm * reference) if norm > 0 else 0.0)
    return float(np.std(cosines))


def fednova_normalize(packets: Sequence[UpdatePacket]) -> list[UpdatePacket]:
    """Rescale every update to the mean local step count, tau_eff / tau_i * delta_i."""
    steps = [p.local_steps for p in packets]
    if len(set(steps)) <= 1:
        return list(packets)
    tau_eff = sum(steps) / len(steps)
    return [replace(p, delta=p.delta * (tau_eff / p.local_steps)) if p.local_steps > 0 else p
            for p in packets]


def server_step(state: ServerState, noisy_mean: ParamVector) -> ServerState:
    """Apply the aggregated update with the state's server optimizer."""
    if noisy_mean.dim != state.theta.dim:
        raise ValueError(f"update has dim {noisy_mean.dim}, theta has dim {state.theta.dim}")
    if state.optimizer in (ServerOptimizer.FEDAVG, ServerOptimizer.FEDNOVA):
        # fednova packets were tau-normalised before clipping
        return replace(state, theta=state.theta + noisy_mean)
    if state.optimizer == ServerOptimizer.FEDADAM:
        # pseudo-gradient is -noisy_mean
        hyper = state.hyper
        delta = noisy_mean.values
        m = hyper.beta1 * state.moment1.values + (1.0 - hyper.beta1) * delta
        v = hyper.beta2 * state.moment2.values + (1.0 - hyper.beta2) * delta * delta
        theta = state.theta.values + hyper.server_lr * m / (np.sqrt(v) + hyper.tau)
        return replace(state, theta=ParamVector(theta), moment1=ParamVector(m), moment2=ParamVector(v))
    raise NotImplementedError(f"Server optimizer {state.optimizer} is not supported.")


def subsample(participants: Sequence, ratio: float, stream: RngStream) -> list:
    """Uniform selection without replacement of round(ratio n) items (at least one), in input order."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"subsample ratio must be in (0, 1], got {ratio}")
    n = len(participants)
    if ratio == 1.0 or n == 0:
        return list(participants)
    size = max(1, int(math.floor(ratio * n + 0.5)))
    chosen = np.sort(stream.generator.choice(n, size=size, replace=False))
    return [participants[i] for i in chosen]


def pool_datasets(datasets: Sequence[ClientDataset]) -> ClientDataset:
    if not datasets:
        raise ValueError("nothing to pool")
    return ClientDataset(-1, np.concatenate([d.features for d in datasets]),
                         np.concatenate([d.labels for d in datasets]))


def auc_score(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Rank statistic over all positive/negative pairs, ties count 1/2. None for single-class labels."""
    positives = labels > 0.5
    n_pos = int(np.sum(positives))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((np.sum(ranks[positives]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(model: LogisticModel, test_sets: Sequence[ClientDataset]) -> EvalResult:
    """Accuracy at threshold 0.5, pairwise AUC and mean log loss on the pooled test sets."""
    pooled = pool_datasets(test_sets)
    scores = model.predict_proba(pooled.features)
    meter = AccuracyMeter()
    meter.update_batch(pooled.labels > 0.5, scores >= DECISION_THRESHOLD)
    acc = float(meter.accuracy)
    loss = model.loss(pooled.features, pooled.labels)
    auc = auc_score(scores, pooled.labels)
    if auc is None:
        LOGGER.warning(f"test labels are single-class: AUC undefined, reporting {AUC_SENTINEL}")
        return EvalResult(acc=acc, auc=AUC_SENTINEL, loss=loss, auc_defined=False)
    return EvalResult(acc=acc, auc=auc, loss=loss)


def participants_of(partitions: Sequence[tuple[ClientDataset, IntermediaryPartition]]) -> list[list[Participant]]:
    """Per client, its intermediaries with federation-wide participant ids in client-then-shard order."""
    grouped, next_id = [], 0
    for dataset, partition in partitions:
        client = []
        for j, shard in enumerate(partition.shard_datasets(dataset)):
            client.append(Participant(next_id, dataset.client_id, j, shard))
            next_id += 1
        grouped.append(client)
    return grouped


def run_round(state: ServerState, partitions: Sequence[tuple[ClientDataset, IntermediaryPartition]],
              cfg: RoundConfig, test_sets: Sequence[ClientDataset]) -> tuple[ServerState, RoundReport]:
    """Broadcast, local updates, clip, noisy aggregation, server step, metrics."""
    t = state.round + 1
    grouped = participants_of(partitions)
    selected = subsample(grouped, cfg.subsample_ratio, RngStream(cfg.seed, Stream.SUBSAMPLE, t))
    participants = [p for client in selected for p in client]

    global_model = LogisticModel(state.theta)
    packets = [local_update(global_model, p.data, cfg.local,
                            RngStream.for_participant(cfg.seed, Stream.LOCAL, p.participant_id, t),
                            participant_id=p.participant_id)
               for p in participants]
    if state.optimizer == ServerOptimizer.FEDNOVA:
        packets = fednova_normalize(packets)

    clip = state.clip
    if clip is None:
        clip = initial_clip_state([l2_norm(p.delta) for p in packets], eta_C=cfg.clip_lr,
                                  gamma=cfg.clip_quantile, sigma_b=cfg.clip_quantile_noise)
    sigma_b = clip.sigma_b if cfg.clip_adaptive else 0.0
    noise = NoiseSpec(z=effective_noise_multiplier(cfg.z, sigma_b), n_participants=len(packets))
    result = aggregate(packets, clip, noise, RngStream(cfg.seed, Stream.NOISE, t))

    new_state = server_step(state, result.noisy_mean)

    xi, xi_guarded = noise_level(result.noise_vector, result.clipped_sum, fallback=state.last_xi)
    phi, phi_guarded = diversity_level(result.raw_norms, result.clipped_sum, fallback=state.last_phi)
    guarded = xi_guarded or phi_guarded
    sim_std = direction_spread([p.delta for p in packets], result.clipped_sum)
    lam = xi / phi if phi > RATIO_GUARD else 0.0
    if guarded:
        LOGGER.warning(f"Round {t}: clipped aggregate vanished, carrying xi={xi:.4g}, phi={phi:.4g} forward")

    next_clip = adapt_clip(clip, result.raw_norms, RngStream(cfg.seed, Stream.CLIP, t)) if cfg.clip_adaptive else clip
    new_state = replace(new_state, round=t, clip=next_clip, last_xi=xi, last_phi=phi)

    new_model = LogisticModel(new_state.theta)
    train_pool = pool_datasets([d for d, _ in partitions])
    metrics = evaluate(new_model, test_sets)

    report = RoundReport(round=t, xi=xi, phi=phi, lam=lam, clip_C=clip.C,
                         v_per_client=tuple(part.v for _, part in partitions),
                         n_participants=len(packets),
                         train_loss=new_model.loss(train_pool.features, train_pool.labels),
                         test_acc=metrics.acc, test_auc=metrics.auc,
                         guarded=guarded, auc_defined=metrics.auc_defined, sim_std=sim_std)
    return new_state, report
