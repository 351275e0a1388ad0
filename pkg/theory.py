"""Executable oracles for the convergence analysis of noisy SGD on convex losses.

For a mu-convex, beta-smooth loss and step size eta, the variance between a noisy trajectory
and its noiseless twin after t + 1 noise injections is at least

    [(1 - 2 eta beta + eta^2 mu^2)^(t+1) - 1] eta^2 sigma^2 / ((eta^2 mu^2 - 2 eta beta) K^2).

The quadratic loss attains this with equality. Note the rate base a = 1 - 2 eta beta + eta^2 mu^2
is below one for small eta, in which case the bound converges to a plateau instead of diverging;
divergence needs eta mu^2 > 2 beta.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm
from tqdm import tqdm

from localtrain import clipped_sgd
from model import QuadraticModel
from paramvec import ParamVector, RngStream
from synthdata import ClientDataset

LOGGER = logging.getLogger(__name__)

CONVERGENT = 'convergent'
DIVERGENT = 'divergent'


@dataclass(frozen=True)
class ConvexSpec:
    mu: float
    beta: float
    eta: float
    sigma: float
    K: int
    steps: int
    dim: int = 1

    def __post_init__(self):
        if self.mu <= 0 or self.beta < self.mu:
            raise ValueError(f"need 0 < mu <= beta, got mu={self.mu}, beta={self.beta}")
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.K < 1 or self.steps < 1 or self.dim < 1:
            raise ValueError(f"K, steps and dim must be >= 1, got K={self.K}, steps={self.steps}, dim={self.dim}")

    @property
    def rate_base(self) -> float:
        return 1.0 - 2.0 * self.eta * self.beta + self.eta ** 2 * self.mu ** 2

    @property
    def regime(self) -> str:
        return CONVERGENT if self.rate_base < 1.0 else DIVERGENT

    @property
    def plateau(self) -> float:
        """Limit of the bound as t grows (convergent regime only)."""
        if self.regime != CONVERGENT:
            return math.inf
        return (self.eta * self.sigma) ** 2 / ((2.0 * self.eta * self.beta - (self.eta * self.mu) ** 2) * self.K ** 2)


@dataclass(frozen=True)
class DivergenceEstimate:
    t: int              # number of noisy steps taken
    estimate: float     # mean of ||theta~_t - theta_t||^2 over trials
    half_width: float   # simultaneous 95% half-width


@dataclass(frozen=True)
class BoundCheck:
    t: int
    bound: float
    estimate: float
    half_width: float
    passed: bool


@dataclass(frozen=True)
class NoiseCumulationFit:
    horizons: tuple[int, ...]
    stds: tuple[float, ...]
    slope: float


def geometric_recurrence(a: float, b: float, t: int) -> float:
    """Closed form of x_t = a x_{t-1} + b with x_0 = 0: (a^t - 1) / (a - 1) b."""
    if a == 1:
        raise ValueError("a = 1 has no geometric closed form; x_t = t b")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return (a ** t - 1.0) / (a - 1.0) * b


def iterate_recurrence(a: float, b: float, t: int, x0: float = 0.0) -> float:
    x = x0
    for _ in range(t):
        x = a * x + b
    return x


def sensitivity_bound(t: int, eta: float, c: float) -> float:
    """2 eta t c"""
    return 2.0 * eta * t * c


def variance_lower_bound(spec: ConvexSpec, t: int) -> float:
    denominator = spec.eta ** 2 * spec.mu ** 2 - 2.0 * spec.eta * spec.beta
    if denominator == 0:
        raise ValueError(f"degenerate spec: eta^2 mu^2 - 2 eta beta = 0 for {spec}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    base = 1.0 + denominator
    return ((base ** (t + 1) - 1.0) * spec.eta ** 2 * spec.sigma ** 2) / (denominator * spec.K ** 2)


def _cyclic_batches(n: int, batch_size: int, steps: int) -> list[np.ndarray]:
    return [np.arange(s * batch_size, (s + 1) * batch_size) % n for s in range(steps)]


def clipped_trajectory(model: QuadraticModel, data: ClientDataset, eta: float, c: float, steps: int,
                       batch_size: int = 1) -> list[ParamVector]:
    """Noiseless clipped SGD over fixed cyclic batches; theta_0 … theta_steps."""
    trajectory = [model.theta]
    for batch in _cyclic_batches(len(data), batch_size, steps):
        model = clipped_sgd(model, data, eta, c, [batch], batch_size)
        trajectory.append(model.theta)
    return trajectory


def empirical_sensitivity(data: ClientDataset, pool: ClientDataset, eta: float, c: float, steps: int,
                          mu: float = 1.0, batch_size: int = 1) -> list[float]:
    """max ||theta_t(D) - theta_t(D')|| over every D' replacing one sample of D by one pool sample."""
    dim = data.dim
    model = QuadraticModel(ParamVector.zeros(dim), ParamVector.zeros(dim), mu=mu)
    reference = clipped_trajectory(model, data, eta, c, steps, batch_size)
    worst = np.zeros(steps + 1)
    for i in range(len(data)):
        for j in range(len(pool)):
            features = np.array(data.features)
            labels = np.array(data.labels)
            features[i] = pool.features[j]
            labels[i] = pool.labels[j]
            neighbour = ClientDataset(data.client_id, features, labels)
            trajectory = clipped_trajectory(model, neighbour, eta, c, steps, batch_size)
            for t, (a, b) in enumerate(zip(reference, trajectory)):
                worst[t] = max(worst[t], float(np.linalg.norm(a.values - b.values)))
    return worst.tolist()


def _simultaneous_z(n_points: int, confidence: float = 0.95) -> float:
    return float(norm.ppf(1.0 - (1.0 - confidence) / (2.0 * n_points)))


def monte_carlo_divergence(spec: ConvexSpec, trials: int, stream: RngStream,
                           progress: bool = False) -> list[DivergenceEstimate]:
    """Paired noisy / noiseless gradient descent on the quadratic loss from the same start.

    Each noisy step adds (eta / K) N(0, sigma^2 I); returns the mean squared distance after
    t = 1 … steps steps with a simultaneous 95% half-width.
    """
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    rng = stream.generator
    theta_star = np.zeros(spec.dim)
    clean = np.ones(spec.dim)
    noisy = np.tile(clean, (trials, 1))
    z_crit = _simultaneous_z(spec.steps)

    estimates = []
    for t in tqdm(range(1, spec.steps + 1), desc='monte carlo', disable=not progress):
        clean = clean - spec.eta * spec.mu * (clean - theta_star)
        noisy = noisy - spec.eta * spec.mu * (noisy - theta_star)
        if spec.sigma > 0:
            noisy = noisy + (spec.eta / spec.K) * rng.normal(0.0, spec.sigma, size=noisy.shape)
        squared = np.sum((noisy - clean) ** 2, axis=1)
        half_width = z_crit * float(np.std(squared, ddof=1)) / math.sqrt(trials)
        estimates.append(DivergenceEstimate(t, float(np.mean(squared)), half_width))
    return estimates


def check_lower_bound(spec: ConvexSpec, estimates: Sequence[DivergenceEstimate]) -> list[BoundCheck]:
    """The bound (times dim) must not exceed the upper confidence limit of the estimate.

    The estimate after t steps is compared with the bound indexed t - 1: both count t noise
    injections.
    """
    checks = []
    for est in estimates:
        bound = variance_lower_bound(spec, est.t - 1) * spec.dim
        checks.append(BoundCheck(est.t, bound, est.estimate, est.half_width,
                                 passed=est.estimate + est.half_width >= bound))
    return checks


def noise_cumulation_slope(sigma: float, horizons: Sequence[int], trials: int,
                           stream: RngStream) -> NoiseCumulationFit:
    """Log-log slope of the std of summed per-step noise against the horizon (about 0.5)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if len(horizons) < 2:
        raise ValueError("need at least two horizons for a fit")
    rng = stream.generator
    stds = []
    for horizon in horizons:
        sums = rng.normal(0.0, sigma, size=(trials, horizon)).sum(axis=1)
        stds.append(float(np.std(sums, ddof=1)))
    slope = float(np.polyfit(np.log(horizons), np.log(stds), 1)[0])
    return NoiseCumulationFit(tuple(int(h) for h in horizons), tuple(stds), slope)
