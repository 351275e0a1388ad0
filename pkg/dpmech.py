"""Client-level DP: update clipping, the Gaussian aggregation mechanism and adaptive clip bounds."""
import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from constants import CLIP_LR, CLIP_QUANTILE, CLIP_QUANTILE_NOISE
from localtrain import UpdatePacket
from paramvec import DimensionMismatchError, ParamVector, RngStream, gaussian_sample, l2_norm, vector_sum

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClipState:
    C: float
    eta_C: float = CLIP_LR
    gamma: float = CLIP_QUANTILE
    sigma_b: float = CLIP_QUANTILE_NOISE

    def __post_init__(self):
        if not (self.C > 0 and math.isfinite(self.C)):
            raise ValueError(f"clip bound must be positive and finite, got {self.C}")
        if self.eta_C <= 0:
            raise ValueError(f"clip adaptation rate must be > 0, got {self.eta_C}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"target quantile must be in (0, 1), got {self.gamma}")
        if self.sigma_b < 0:
            raise ValueError(f"quantile noise must be >= 0, got {self.sigma_b}")


@dataclass(frozen=True)
class NoiseSpec:
    z: float
    n_participants: int

    def __post_init__(self):
        if self.z < 0:
            raise ValueError(f"noise multiplier must be >= 0, got {self.z}")
        if self.n_participants < 1:
            raise ValueError(f"need at least one participant, got {self.n_participants}")

    def sigma(self, C: float) -> float:
        """Std of the noise on the averaged update, z C / N."""
        return self.z * C / self.n_participants


@dataclass(frozen=True)
class AggregateResult:
    noisy_mean: ParamVector
    clipped_sum: ParamVector
    raw_norms: tuple[float, ...]
    noise_vector: ParamVector
    packets: tuple[UpdatePacket, ...]   # with ``clipped`` filled in


def clip_update(delta: ParamVector, C: float) -> ParamVector:
    """delta / max(||delta|| / C, 1); the result never has norm above C."""
    if C <= 0:
        raise ValueError(f"clip bound must be > 0, got {C}")
    norm = l2_norm(delta)
    if norm <= C:
        return delta
    clipped = delta / max(norm / C, 1.0)
    values = clipped.values
    while float(np.sqrt(np.dot(values, values))) > C:
        values = values * np.nextafter(1.0, 0.0)
    return ParamVector(values)


def effective_noise_multiplier(z: float, sigma_b: float) -> float:
    """Update-noise multiplier once part of the budget pays for the noised quantile estimate.

    z_delta = (z^-2 - (2 sigma_b)^-2)^(-1/2); sigma_b = 0 leaves z unchanged.
    """
    if sigma_b == 0 or z == 0:
        return z
    remainder = z ** -2 - (2.0 * sigma_b) ** -2
    if remainder <= 0:
        raise ValueError(f"quantile noise sigma_b={sigma_b} is too small for z={z}: need sigma_b > z/2")
    return remainder ** -0.5


def initial_clip_state(raw_norms: Sequence[float], eta_C: float = CLIP_LR, gamma: float = CLIP_QUANTILE,
                       sigma_b: float = CLIP_QUANTILE_NOISE) -> ClipState:
    """Clip bound set to the median of the first-round raw update norms.

    The median is taken before any noise is added and is not accounted for.
    """
    if len(raw_norms) == 0:
        raise ValueError("cannot initialise the clip bound without update norms")
    median = float(np.median(raw_norms))
    if median <= 0:
        LOGGER.warning(f"median update norm is {median}; clip bound floored to 1e-12")
        median = 1e-12
    LOGGER.warning(f"Clip bound initialised to the median raw update norm C={median:.6g} "
                   f"(computed before noise, not covered by the privacy accountant)")
    return ClipState(C=median, eta_C=eta_C, gamma=gamma, sigma_b=sigma_b)


def aggregate(updates: Sequence[UpdatePacket], clip: ClipState, noise: NoiseSpec,
              stream: RngStream) -> AggregateResult:
    """(1/N) (sum_i clip(delta_i, C) + N(0, z^2 C^2 I)) over the N packets received this round."""
    if not updates:
        raise ValueError("aggregate needs at least one update")
    dim = updates[0].delta.dim
    for packet in updates:
        if packet.delta.dim != dim:
            raise DimensionMismatchError(f"participant {packet.participant_id}: update dim {packet.delta.dim} != {dim}")
    if noise.n_participants != len(updates):
        raise ValueError(f"noise spec is for {noise.n_participants} participants, got {len(updates)} updates")

    raw_norms = tuple(l2_norm(p.delta) for p in updates)
    clipped = [replace(p, clipped=clip_update(p.delta, clip.C)) for p in updates]
    clipped_sum = vector_sum([p.clipped for p in clipped])
    zeta = gaussian_sample(stream, dim, noise.z * clip.C)
    noisy_mean = (clipped_sum + zeta) / len(updates)
    LOGGER.debug(f"aggregated {len(updates)} updates: C={clip.C:.4g}, sigma={noise.sigma(clip.C):.4g}, "
                 f"clipped {sum(n > clip.C for n in raw_norms)}/{len(updates)}")
    return AggregateResult(noisy_mean, clipped_sum, raw_norms, zeta, tuple(clipped))


def adapt_clip(state: ClipState, raw_norms: Sequence[float], stream: RngStream) -> ClipState:
    """Geometric quantile tracking: C <- C exp(-eta_C (b~ - gamma)).

    b~ is the (optionally noised) fraction of updates whose norm is within C.
    """
    if len(raw_norms) == 0:
        raise ValueError("adapt_clip needs at least one norm")
    count = float(sum(1 for n in raw_norms if n <= state.C))
    if state.sigma_b > 0:
        count += float(stream.generator.normal(0.0, state.sigma_b))
    b_tilde = count / len(raw_norms)
    new_C = state.C * math.exp(-state.eta_C * (b_tilde - state.gamma))
    return replace(state, C=new_C)
