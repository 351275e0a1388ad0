"""Privacy accounting for the client-level Gaussian mechanism.

At full participation the T-fold composition of Gaussian mechanisms with noise multiplier z
is exactly one Gaussian mechanism with multiplier z / sqrt(T), so the privacy curve is the
analytic Gaussian one:

    delta(eps) = Phi(1/(2 s) - eps s) - e^eps Phi(-1/(2 s) - eps s),    s = z / sqrt(T).

The second term is evaluated in the log domain (``log_ndtr``) so budgets of several hundred
stay finite.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from constants import ACCOUNTANT_RTOL, CALIBRATION_RTOL

LOGGER = logging.getLogger(__name__)

_MAX_BRACKET_DOUBLINGS = 200


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    z: float
    rounds: int
    sampling_ratio: float = 1.0


def _check_delta(delta: float):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")


def gaussian_delta(epsilon: float, z_eff: float) -> float:
    """delta(eps) of a Gaussian mechanism with sensitivity 1 and noise std z_eff."""
    if z_eff <= 0:
        raise ValueError(f"effective noise multiplier must be > 0, got {z_eff}")
    a = 1.0 / (2.0 * z_eff)
    first = ndtr(a - epsilon * z_eff)
    second = math.exp(epsilon + log_ndtr(-a - epsilon * z_eff))
    return float(max(first - second, 0.0))


def epsilon_for(z: float, T: int, delta: float) -> float:
    """Smallest eps with delta(eps) <= delta for T rounds at noise multiplier z (full participation)."""
    _check_delta(delta)
    if z <= 0:
        raise ValueError(f"noise multiplier must be > 0, got {z}")
    if T < 1:
        raise ValueError(f"rounds must be >= 1, got {T}")
    z_eff = z / math.sqrt(T)

    def excess(eps):
        return gaussian_delta(eps, z_eff) - delta

    if excess(0.0) <= 0:
        return 0.0
    hi = 1.0
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise CalibrationError(f"no epsilon bracket found for z={z}, T={T}, delta={delta}")
    return float(brentq(excess, 0.0, hi, xtol=1e-12, rtol=ACCOUNTANT_RTOL))


def calibrate_z(target_epsilon: float, T: int, delta: float) -> float:
    """Smallest z with epsilon_for(z, T, delta) <= target_epsilon."""
    _check_delta(delta)
    if target_epsilon <= 0:
        raise ValueError(f"target epsilon must be > 0, got {target_epsilon}")

    def excess(z):
        return epsilon_for(z, T, delta) - target_epsilon

    lo, hi = 0.5, 1.0
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(hi) <= 0:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise CalibrationError(f"no noise multiplier reaches epsilon={target_epsilon} (T={T}, delta={delta})")
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if excess(lo) > 0:
            break
        lo /= 2.0
    else:
        raise CalibrationError(f"search range for epsilon={target_epsilon} does not bracket (T={T}, delta={delta})")
    return float(brentq(excess, lo, hi, xtol=1e-14, rtol=CALIBRATION_RTOL))


def privacy_budget(z: float, T: int, delta: float, sampling_ratio: float = 1.0) -> PrivacyBudget:
    """Budget of a run. Subsampling (q < 1) is accounted without amplification."""
    if not 0.0 < sampling_ratio <= 1.0:
        raise ValueError(f"sampling ratio must be in (0, 1], got {sampling_ratio}")
    if sampling_ratio < 1.0:
        LOGGER.warning(f"sampling ratio {sampling_ratio} < 1: reporting the full-participation budget "
                       f"(no amplification by subsampling)")
    epsilon = epsilon_for(z, T, delta) if z > 0 else math.inf
    return PrivacyBudget(epsilon=epsilon, delta=delta, z=z, rounds=T, sampling_ratio=sampling_ratio)


def delta_rule(n_clients: int) -> float:
    """10^-k for the smallest integer k with 10^-k <= 1/n."""
    if n_clients < 1:
        raise ValueError(f"n_clients must be >= 1, got {n_clients}")
    k = 0
    while 10 ** k < n_clients:
        k += 1
    return float(f"1e-{k}")


def group_privacy(epsilon: float, delta: float, n: int) -> tuple[float, float]:
    """(n eps, delta * sum_{i<n} e^{i eps}) for a group of n sub-clients.

    Unrolling delta_n = delta_{n-1} + e^{(n-1) eps} delta gives e^{i eps} terms, not eps^i.
    """
    if n < 1:
        raise ValueError(f"group size must be >= 1, got {n}")
    return n * epsilon, delta * float(np.sum(np.exp(epsilon * np.arange(n))))


def composition_bound(epsilon: float, delta: float, k: int, d: float) -> tuple[float, float]:
    """Advanced composition of k (eps, delta)-DP mechanisms with slack d."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"slack d must be in [0, 1], got {d}")
    base = k * epsilon
    drift = (math.exp(epsilon) - 1.0) * epsilon * k / (math.exp(epsilon) + 1.0)
    if d > 0:
        second = drift + epsilon * math.sqrt(2.0 * k * math.log(math.e + math.sqrt(k * epsilon ** 2) / d))
        third = drift + epsilon * math.sqrt(2.0 * k * math.log(1.0 / d))
    else:
        second = third = math.inf
    epsilon_prime = min(base, second, third)
    delta_prime = 1.0 - (1.0 - delta) ** k * (1.0 - d)
    return epsilon_prime, delta_prime


def moment_accountant_asymptotic(epsilon_step: float, T: int) -> float:
    """eps sqrt(T): growth envelope of the composed budget."""
    return epsilon_step * math.sqrt(T)
