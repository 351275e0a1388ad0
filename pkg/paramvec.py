"""Flat parameter vectors and deterministic random streams.

Every model, update, noise draw and gradient in fedsplit is a ``ParamVector``: an immutable,
finite, float64 vector of fixed dimension. Randomness is drawn from ``RngStream``s keyed by
``(global_seed, stream_id, round)`` on top of numpy's counter-based Philox generator, so any
participant or round can be replayed in isolation.
"""
import logging
from typing import Iterable, Sequence, Union

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from constants import STREAM_STRIDE, Stream

LOGGER = logging.getLogger(__name__)


class DimensionMismatchError(ValueError):
    pass


class EmptyVectorError(ValueError):
    pass


class ParamVector:
    """Immutable float64 vector. All entries are finite."""

    __slots__ = ('_values',)

    def __init__(self, values: Union[Iterable[float], np.ndarray]):
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise EmptyVectorError("ParamVector needs at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"ParamVector entries must be finite, got {arr}")
        arr.flags.writeable = False
        self._values = arr

    @classmethod
    def zeros(cls, dim: int) -> 'ParamVector':
        return cls(np.zeros(dim))

    @property
    def values(self) -> np.ndarray:
        """Read-only view of the entries."""
        return self._values

    @property
    def dim(self) -> int:
        return self._values.size

    def __len__(self):
        return self.dim

    def __iter__(self):
        return iter(self._values.tolist())

    def __getitem__(self, item):
        return self._values[item]

    def _check_dim(self, other: 'ParamVector'):
        if self.dim != other.dim:
            raise DimensionMismatchError(f"dimension mismatch: {self.dim} != {other.dim}")

    def __add__(self, other: 'ParamVector') -> 'ParamVector':
        self._check_dim(other)
        return ParamVector(self._values + other._values)

    def __sub__(self, other: 'ParamVector') -> 'ParamVector':
        self._check_dim(other)
        return ParamVector(self._values - other._values)

    def __mul__(self, a: float) -> 'ParamVector':
        return ParamVector(self._values * float(a))

    __rmul__ = __mul__

    def __truediv__(self, a: float) -> 'ParamVector':
        return ParamVector(self._values / float(a))

    def __neg__(self) -> 'ParamVector':
        return ParamVector(-self._values)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self._values, other._values))

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self):
        return f"ParamVector(dim={self.dim}, values={np.array2string(self._values, threshold=8)})"


class RngStream:
    """Random stream owned by exactly one logical participant.

    Two streams built from the same ``(global_seed, stream_id, round)`` produce the same
    draw sequence on any platform; the stream itself is stateful and advances with every draw.
    """

    def __init__(self, global_seed: int, stream_id: int, round: int = 0, path: tuple[int, ...] = ()):
        self.global_seed = int(global_seed)
        self.stream_id = int(stream_id)
        self.round = int(round)
        self.path = tuple(int(p) for p in path)
        seed_seq = SeedSequence([self.global_seed, self.stream_id, self.round, *self.path])
        self.generator: Generator = Generator(Philox(seed_seq))

    @classmethod
    def for_participant(cls, global_seed: int, kind: Stream, participant: int, round: int = 0) -> 'RngStream':
        return cls(global_seed, int(kind) * STREAM_STRIDE + int(participant), round)

    def spawn(self, offset: int) -> 'RngStream':
        """Independent child stream for a sub-purpose of the same owner (e.g. noise vs batching)."""
        if offset < 0:
            raise ValueError(f"spawn offset must be >= 0, got {offset}")
        # SeedSequence pads short entropy with zeros, so path entries are kept nonzero
        return RngStream(self.global_seed, self.stream_id, self.round, self.path + (int(offset) + 1,))

    def __repr__(self):
        return (f"RngStream(seed={self.global_seed}, stream={self.stream_id}, round={self.round}"
                f"{', path=' + str(self.path) if self.path else ''})")


def l2_norm(x: ParamVector) -> float:
    return float(np.sqrt(np.dot(x.values, x.values)))


def gaussian_sample(stream: RngStream, dim: int, sigma: float) -> ParamVector:
    """``dim`` i.i.d. draws from N(0, sigma^2); sigma = 0 gives the exact zero vector."""
    if dim <= 0:
        raise EmptyVectorError(f"cannot sample an empty vector (dim={dim})")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return ParamVector.zeros(dim)
    return ParamVector(stream.generator.normal(0.0, sigma, size=dim))


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """a * x + y"""
    if x.dim != y.dim:
        raise DimensionMismatchError(f"axpy dimension mismatch: {x.dim} != {y.dim}")
    return ParamVector(float(a) * x.values + y.values)


def vector_sum(vectors: Sequence[ParamVector]) -> ParamVector:
    """Index-ordered accumulation, bitwise reproducible."""
    if not vectors:
        raise EmptyVectorError("cannot sum an empty sequence of vectors")
    acc = np.array(vectors[0].values, dtype=np.float64)
    for vec in vectors[1:]:
        if vec.dim != acc.size:
            raise DimensionMismatchError(f"dimension mismatch: {vec.dim} != {acc.size}")
        acc += vec.values
    return ParamVector(acc)


def vector_mean(vectors: Sequence[ParamVector]) -> ParamVector:
    return vector_sum(vectors) / len(vectors)
