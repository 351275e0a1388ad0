"""Adaptive intermediary generation.

Splitting every client into v intermediaries scales the noise level and the diversity level
as xi_v = xi / v and phi_v = v phi, so the intermediary ratio lambda = xi / phi falls as 1/v^2.
The controller picks v = sqrt(N xi / phi) from v=1-equivalent values, which puts the new
ratio around 1/N.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPlan:
    v_per_client: tuple[int, ...]
    round_set_at: int = 0

    def __post_init__(self):
        if not self.v_per_client or min(self.v_per_client) < 1:
            raise ValueError(f"every client needs v >= 1, got {self.v_per_client}")

    @property
    def total_participants(self) -> int:
        return sum(self.v_per_client)

    @property
    def v(self) -> int:
        """Nominal (uniform) v; clients with fewer samples than v are capped below it."""
        return max(self.v_per_client)


@dataclass(frozen=True)
class RatioObservation:
    xi: float
    phi: float
    lam: float
    v_current: int

    def __post_init__(self):
        if self.xi < 0 or self.phi <= 0:
            raise ValueError(f"need xi >= 0 and phi > 0, got xi={self.xi}, phi={self.phi}")
        if self.v_current < 1:
            raise ValueError(f"v_current must be >= 1, got {self.v_current}")

    @classmethod
    def from_levels(cls, xi: float, phi: float, v_current: int) -> 'RatioObservation':
        return cls(xi=xi, phi=phi, lam=xi / phi if phi > 0 else math.inf, v_current=v_current)


def max_split(n_samples: int, min_shard: int = 1) -> int:
    """Largest v whose smallest shard, floor(n/v), still holds ``min_shard`` samples."""
    if min_shard < 1:
        raise ValueError(f"min_shard must be >= 1, got {min_shard}")
    return max(1, n_samples // min_shard)


def initial_plan(n_clients: int, v: int = 1, sample_counts: Sequence[int] = (), min_shard: int = 1) -> SplitPlan:
    if sample_counts:
        return SplitPlan(tuple(min(v, max_split(n, min_shard)) for n in sample_counts), round_set_at=0)
    return SplitPlan((v,) * n_clients, round_set_at=0)


def target_v(N: int, xi_base: float, phi_base: float) -> int:
    """max(1, round(sqrt(N xi / phi)))"""
    if phi_base <= 0:
        raise ValueError(f"phi must be > 0, got {phi_base}")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return max(1, int(round(math.sqrt(N * xi_base / phi_base))))


def rebase_ratio(obs: RatioObservation) -> tuple[float, float]:
    """Invert the scaling laws: (v xi_v, phi_v / v)."""
    return obs.v_current * obs.xi, obs.phi / obs.v_current


def _apply(plan: SplitPlan, v_new: int, sample_counts: Sequence[int], round: int, min_shard: int) -> SplitPlan:
    if len(sample_counts) != len(plan.v_per_client):
        raise ValueError(f"{len(sample_counts)} sample counts for {len(plan.v_per_client)} clients")
    v_per_client = tuple(max(1, min(v_new, max_split(n, min_shard))) for n in sample_counts)
    if v_per_client == plan.v_per_client:
        return plan
    return SplitPlan(v_per_client, round_set_at=round)


def initialize_plan(plan: SplitPlan, obs: RatioObservation, N: int, round: int,
                    sample_counts: Sequence[int], min_shard: int = 1) -> SplitPlan:
    """One unclamped jump from the first-round measurement."""
    v_new = target_v(N, *rebase_ratio(obs))
    LOGGER.info(f"Round {round}: initial intermediary count v={v_new} (lambda={obs.lam:.4g})")
    return _apply(plan, v_new, sample_counts, round, min_shard)


def update_plan(plan: SplitPlan, obs: RatioObservation, N: int, round: int,
                sample_counts: Sequence[int], min_shard: int = 1) -> SplitPlan:
    """Re-target v from the last round's ratio, moving at most one step from the current v."""
    if round <= plan.round_set_at:
        raise ValueError(f"plan was set at round {plan.round_set_at}, cannot update at round {round}")
    v_target = target_v(N, *rebase_ratio(obs))
    v_new = min(max(v_target, plan.v - 1), plan.v + 1)
    if v_new != v_target:
        LOGGER.debug(f"Round {round}: v target {v_target} clamped to {v_new}")
    return _apply(plan, v_new, sample_counts, round, min_shard)
