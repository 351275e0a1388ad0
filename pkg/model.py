import numpy as np
from scipy.special import expit

from constants import ModelKind
from paramvec import ParamVector


class Model:
    """Linear-in-parameters model with per-sample gradients. Instances are immutable."""
    kind: ModelKind = None

    def __init__(self, theta: ParamVector):
        self.theta = theta

    @property
    def dim(self) -> int:
        return self.theta.dim

    def with_theta(self, theta: ParamVector) -> 'Model':
        raise NotImplementedError

    def per_sample_losses(self, theta: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def per_sample_gradients(self, theta: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """[n, dim] matrix of per-sample loss gradients at ``theta``."""
        raise NotImplementedError

    def loss(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.per_sample_losses(self.theta.values, features, labels)))


class LogisticModel(Model):
    """Binary logistic regression without intercept: p(y=1|x) = sigmoid(theta . x)."""
    kind = ModelKind.LOGISTIC

    def with_theta(self, theta: ParamVector) -> 'LogisticModel':
        return LogisticModel(theta)

    def per_sample_losses(self, theta, features, labels):
        logits = features @ theta
        return np.logaddexp(0.0, logits) - labels * logits

    def per_sample_gradients(self, theta, features, labels):
        # |sigmoid(z) - y| <= 1, so each row norm is bounded by the feature norm
        residual = expit(features @ theta) - labels
        return residual[:, None] * features

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return expit(features @ self.theta.values)

    def __repr__(self):
        return f"LogisticModel(dim={self.dim})"


class QuadraticModel(Model):
    """Per-sample loss (mu/2) ||theta - theta_star - x||^2.

    Features are offsets from the optimum; on zero-feature data the loss is
    L(theta) = (mu/2) ||theta - theta_star||^2, which is mu-convex and beta-smooth with beta = mu.
    """
    kind = ModelKind.QUADRATIC

    def __init__(self, theta: ParamVector, theta_star: ParamVector, mu: float = 1.0):
        super().__init__(theta)
        if theta_star.dim != theta.dim:
            raise ValueError(f"theta_star has dim {theta_star.dim}, theta has dim {theta.dim}")
        if mu < 0:
            raise ValueError(f"mu must be >= 0, got {mu}")
        self.theta_star = theta_star
        self.mu = float(mu)

    @property
    def beta(self) -> float:
        return self.mu

    def with_theta(self, theta: ParamVector) -> 'QuadraticModel':
        return QuadraticModel(theta, self.theta_star, self.mu)

    def per_sample_losses(self, theta, features, labels):
        residual = theta - self.theta_star.values - features
        return 0.5 * self.mu * np.sum(residual * residual, axis=1)

    def per_sample_gradients(self, theta, features, labels):
        return self.mu * (theta - self.theta_star.values - features)

    def __repr__(self):
        return f"QuadraticModel(dim={self.dim}, mu={self.mu})"
