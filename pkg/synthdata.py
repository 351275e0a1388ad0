"""Client datasets: synthetic heterogeneous federations, CSV ingest and intermediary partitions."""
import logging
import math
import pathlib
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from constants import Stream
from paramvec import ParamVector, RngStream

LOGGER = logging.getLogger(__name__)


class PartitionError(ValueError):
    pass


class CsvParseError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    features: ParamVector
    label: float


class ClientDataset:
    """Samples of one client, stored as a read-only feature matrix and label vector."""

    def __init__(self, client_id: int, features: np.ndarray, labels: np.ndarray):
        features = np.array(features, dtype=np.float64)
        labels = np.array(labels, dtype=np.float64).reshape(-1)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ValueError(f"client {client_id}: dataset must be a nonempty 2d feature matrix, "
                             f"got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(f"client {client_id}: {features.shape[0]} feature rows but {labels.shape[0]} labels")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(labels))):
            raise ValueError(f"client {client_id}: features and labels must be finite")
        features.flags.writeable = False
        labels.flags.writeable = False
        self.client_id = int(client_id)
        self.features = features
        self.labels = labels

    @classmethod
    def from_samples(cls, client_id: int, samples: Sequence[Sample]) -> 'ClientDataset':
        if not samples:
            raise ValueError(f"client {client_id}: no samples")
        return cls(client_id,
                   np.stack([s.features.values for s in samples]),
                   np.array([s.label for s in samples]))

    @property
    def samples(self) -> tuple[Sample, ...]:
        return tuple(Sample(ParamVector(x), float(y)) for x, y in zip(self.features, self.labels))

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices: Sequence[int]) -> 'ClientDataset':
        idx = np.asarray(indices, dtype=np.int64)
        return ClientDataset(self.client_id, self.features[idx], self.labels[idx])

    def __len__(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ClientDataset):
            return NotImplemented
        return (self.client_id == other.client_id
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    def __repr__(self):
        return f"ClientDataset(client_id={self.client_id}, n={len(self)}, dim={self.dim})"


@dataclass(frozen=True)
class IntermediaryPartition:
    """Disjoint split of one client's sample indices into ``v`` shards (sizes differ by at most 1)."""
    parent_client_id: int
    shards: tuple[tuple[int, ...], ...]
    v: int
    n_samples: int

    def __post_init__(self):
        if self.v < 1 or len(self.shards) != self.v:
            raise PartitionError(f"client {self.parent_client_id}: expected {self.v} shards, got {len(self.shards)}")
        sizes = [len(s) for s in self.shards]
        if min(sizes) == 0:
            raise PartitionError(f"client {self.parent_client_id}: empty shard")
        if max(sizes) - min(sizes) > 1:
            raise PartitionError(f"client {self.parent_client_id}: unbalanced shard sizes {sizes}")
        union = set()
        for shard in self.shards:
            if union.intersection(shard):
                raise PartitionError(f"client {self.parent_client_id}: shards overlap")
            union.update(shard)
        if union != set(range(self.n_samples)):
            raise PartitionError(f"client {self.parent_client_id}: shards do not cover all {self.n_samples} samples")

    def shard_datasets(self, d: ClientDataset) -> list[ClientDataset]:
        if d.client_id != self.parent_client_id or len(d) != self.n_samples:
            raise PartitionError(f"partition of client {self.parent_client_id} applied to {d}")
        return [d.take(shard) for shard in self.shards]


def _client_stream(seed: int, kind: Stream, client_id: int, round: int = 0) -> RngStream:
    return RngStream.for_participant(seed, kind, client_id, round)


def generate_federation(n_clients: int, samples_per_client: int, dim: int, heterogeneity: float,
                        seed: int) -> list[ClientDataset]:
    """Clients with features from shifted Gaussians and labels from one shared logistic model.

    Client i draws x ~ N(s_i, I) with shift s_i ~ N(0, heterogeneity^2 I); labels are
    Bernoulli(sigmoid(w* . x)) with w* ~ N(0, (4/dim) I) shared across the federation.
    """
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    if samples_per_client < 2:
        raise ValueError(f"samples_per_client must be >= 2, got {samples_per_client}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError(f"heterogeneity must be in [0, 1], got {heterogeneity}")

    truth_rng = RngStream(seed, Stream.DATA).generator
    w_star = truth_rng.normal(0.0, 2.0 / math.sqrt(dim), size=dim)

    clients = []
    for client_id in range(n_clients):
        rng = _client_stream(seed, Stream.DATA, client_id + 1).generator
        shift = rng.normal(0.0, 1.0, size=dim) * heterogeneity
        features = rng.normal(0.0, 1.0, size=(samples_per_client, dim)) + shift
        labels = (rng.random(samples_per_client) < expit(features @ w_star)).astype(np.float64)
        clients.append(ClientDataset(client_id, features, labels))

    LOGGER.debug(f"Generated {n_clients} clients x {samples_per_client} samples (dim={dim}, "
                 f"heterogeneity={heterogeneity}, seed={seed})")
    return clients


def holdout(d: ClientDataset, test_fraction: float, seed: int) -> tuple[ClientDataset, ClientDataset]:
    """Random per-client train/test split; both parts keep the client id."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * len(d)))
    if n_test < 1 or n_test >= len(d):
        raise ValueError(f"client {d.client_id}: cannot hold out {n_test} of {len(d)} samples")
    perm = _client_stream(seed, Stream.HOLDOUT, d.client_id).generator.permutation(len(d))
    return d.take(np.sort(perm[n_test:])), d.take(np.sort(perm[:n_test]))


def split_client(d: ClientDataset, v: int, seed: int, round: int = 0) -> IntermediaryPartition:
    """Random permutation then round-robin assignment into ``v`` shards.

    Every call draws a fresh partition; shards of an earlier split are never reused.
    """
    if v < 1:
        raise PartitionError(f"v must be >= 1, got {v}")
    if v > len(d):
        raise PartitionError(f"client {d.client_id}: cannot split {len(d)} samples into {v} non-empty shards")
    perm = _client_stream(seed, Stream.SPLIT, d.client_id, round).generator.permutation(len(d))
    shards = tuple(tuple(sorted(int(i) for i in perm[j::v])) for j in range(v))
    return IntermediaryPartition(d.client_id, shards, v, len(d))


def load_csv(path: Union[str, pathlib.Path], label_column: str, client_id: int = 0) -> ClientDataset:
    """One sample per row; features in file column order without the label column."""
    path = pathlib.Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"CSV file '{path}' doesn't exist")
    try:
        frame = pd.read_csv(path, encoding='utf-8', dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise CsvParseError(f"{path}: file is empty")
    if frame.shape[0] == 0:
        raise CsvParseError(f"{path}: no data rows")
    if label_column not in frame.columns:
        raise CsvParseError(f"{path}: label column '{label_column}' not found in header {list(frame.columns)}")

    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors='coerce'))
    bad = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise CsvParseError(f"{path}: row {row + 1}, column '{frame.columns[col]}': "
                            f"non-numeric or missing value {frame.iat[row, col]!r}")

    feature_columns = [c for c in frame.columns if c != label_column]
    if not feature_columns:
        raise CsvParseError(f"{path}: no feature columns besides '{label_column}'")
    LOGGER.info(f"Loaded {frame.shape[0]} samples with {len(feature_columns)} features from {path}")
    return ClientDataset(client_id,
                         numeric[feature_columns].to_numpy(dtype=np.float64),
                         numeric[label_column].to_numpy(dtype=np.float64))
