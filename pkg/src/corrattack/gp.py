"""Exact Gaussian-process regression with a Matern-5/2 ARD kernel.

Inputs are 4-dimensional action features living in the unit hypercube;
observed values are standardized before fitting. Kernel systems are solved
by dense Cholesky factorization: the forgetting window keeps them small, so
no scalable approximation is needed.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import _kernels
from .errors import NumericalFailureError

FEATURE_DIM = 4

LENGTHSCALE_BOUNDS = (0.005, 2.0)
OUTPUTSCALE_BOUNDS = (0.05, 20.0)
NOISE_BOUNDS = (0.0005, 0.1)

JITTER_INITIAL = 1e-8
JITTER_RETRIES = 5

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADAM_LR = 0.1
FD_STEP = 1e-4

VARIANCE_FLOOR = 1e-12
NUM_FIT_PARAMS = 7  # 4 lengthscales, outputscale, noise (log space) + mean


@dataclass
class GpHyperparams:
    lengthscales: np.ndarray
    outputscale: float
    noise_variance: float
    mean_constant: float

    @classmethod
    def default(cls):
        # geometric mean of each bound interval; mean starts at 0
        return cls(
            lengthscales=np.full(FEATURE_DIM, 0.1),
            outputscale=1.0,
            noise_variance=math.sqrt(NOISE_BOUNDS[0] * NOISE_BOUNDS[1]),
            mean_constant=0.0,
        )

    def clamped(self):
        return GpHyperparams(
            lengthscales=np.clip(self.lengthscales, *LENGTHSCALE_BOUNDS),
            outputscale=float(np.clip(self.outputscale, *OUTPUTSCALE_BOUNDS)),
            noise_variance=float(np.clip(self.noise_variance, *NOISE_BOUNDS)),
            mean_constant=self.mean_constant,
        )

    def within_bounds(self):
        lo, hi = LENGTHSCALE_BOUNDS
        return (
            bool(np.all((self.lengthscales >= lo) & (self.lengthscales <= hi)))
            and OUTPUTSCALE_BOUNDS[0] <= self.outputscale <= OUTPUTSCALE_BOUNDS[1]
            and NOISE_BOUNDS[0] <= self.noise_variance <= NOISE_BOUNDS[1]
        )

    def to_vector(self):
        """Pack as (log ls x4, log outputscale, log noise, mean)."""
        return np.concatenate(
            [
                np.log(self.lengthscales),
                [math.log(self.outputscale), math.log(self.noise_variance), self.mean_constant],
            ]
        )

    @classmethod
    def from_vector(cls, theta):
        return cls(
            lengthscales=np.exp(theta[:FEATURE_DIM]),
            outputscale=math.exp(theta[FEATURE_DIM]),
            noise_variance=math.exp(theta[FEATURE_DIM + 1]),
            mean_constant=float(theta[FEATURE_DIM + 2]),
        )


@dataclass
class GpDataset:
    """Standardized sample set: features in [0,1]^4, values zero-mean unit-std."""

    features: np.ndarray
    values: np.ndarray
    raw_mean: float
    raw_std: float

    @classmethod
    def from_raw(cls, features, raw_values):
        features = np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_DIM)
        raw_values = np.asarray(raw_values, dtype=np.float64).reshape(-1)
        if features.shape[0] != raw_values.shape[0]:
            raise ValueError("features and values must have equal length")
        n = raw_values.shape[0]
        if n == 0:
            return cls(features, raw_values, 0.0, 1.0)
        mean = float(np.mean(raw_values))
        std = float(np.std(raw_values)) if n >= 2 else 1.0
        if std < 1e-12:
            std = 1.0
        return cls(features, (raw_values - mean) / std, mean, std)

    def __len__(self):
        return self.features.shape[0]


@dataclass
class GpPosterior:
    """Predictive mean and variance at one point, in standardized units."""

    mean: float
    variance: float

    def destandardized(self, dataset):
        return (
            self.mean * dataset.raw_std + dataset.raw_mean,
            self.variance * dataset.raw_std**2,
        )


@dataclass
class AdamState:
    """Per-parameter first/second moments; persists across fit_step calls."""

    m: np.ndarray = field(default_factory=lambda: np.zeros(NUM_FIT_PARAMS))
    v: np.ndarray = field(default_factory=lambda: np.zeros(NUM_FIT_PARAMS))
    t: int = 0


def matern52_ard(z1, z2, hp):
    """Scalar Matern-5/2 ARD kernel value between two feature vectors."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != (FEATURE_DIM,) or z2.shape != (FEATURE_DIM,):
        raise ValueError(f"feature vectors must have dimension {FEATURE_DIM}")
    sq = float(np.sum(((z1 - z2) / hp.lengthscales) ** 2))
    r = math.sqrt(sq)
    sr5 = _kernels.SQRT5 * r
    return hp.outputscale * (1.0 + sr5 + (5.0 / 3.0) * sq) * math.exp(-sr5)


def kernel_matrix(hp, za, zb):
    return _kernels.matern52_cross(
        np.asarray(za, dtype=np.float64),
        np.asarray(zb, dtype=np.float64),
        hp.lengthscales,
        hp.outputscale,
    )


def _factorize(hp, features):
    """Cholesky of K + noise*I with escalating jitter; raises on failure."""
    k = kernel_matrix(hp, features, features)
    n = k.shape[0]
    diag = np.arange(n)
    k[diag, diag] += hp.noise_variance
    try:
        return cho_factor(k, lower=True)
    except LinAlgError:
        pass
    jitter = JITTER_INITIAL
    for _ in range(JITTER_RETRIES):
        try:
            bumped = k.copy()
            bumped[diag, diag] += jitter
            return cho_factor(bumped, lower=True)
        except LinAlgError:
            jitter *= 10.0
    raise NumericalFailureError(
        f"kernel matrix not positive definite after jitter escalation (n={n})"
    )


def log_marginal_likelihood(hp, data):
    """Gaussian log-marginal likelihood of the standardized values under hp."""
    n = len(data)
    if n == 0:
        raise ValueError("dataset must be nonempty")
    factor = _factorize(hp, data.features)
    y = data.values - hp.mean_constant
    alpha = cho_solve(factor, y)
    log_det_half = float(np.sum(np.log(np.diag(factor[0]))))
    return float(-0.5 * y @ alpha - log_det_half - 0.5 * n * math.log(2.0 * math.pi))


def lml_gradient_fd(hp, data, step=FD_STEP):
    """Central finite-difference gradient of the LML over the packed parameters."""
    theta = hp.to_vector()
    grad = np.empty(NUM_FIT_PARAMS)
    for p in range(NUM_FIT_PARAMS):
        hi = theta.copy()
        lo = theta.copy()
        hi[p] += step
        lo[p] -= step
        f_hi = log_marginal_likelihood(GpHyperparams.from_vector(hi), data)
        f_lo = log_marginal_likelihood(GpHyperparams.from_vector(lo), data)
        grad[p] = (f_hi - f_lo) / (2.0 * step)
    return grad


def fit_step(hp, data, state=None):
    """One Adam ascent step on the LML; clamps the result into bounds.

    Positive parameters move in log space; the constant mean moves directly.
    `state` carries the optimizer moments and is updated in place; pass the
    same object across calls to continue a trajectory.
    """
    if len(data) < 2:
        raise ValueError("fit_step needs at least 2 samples")
    if state is None:
        state = AdamState()
    grad = lml_gradient_fd(hp, data)
    state.t += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = state.m / (1.0 - ADAM_BETA1**state.t)
    v_hat = state.v / (1.0 - ADAM_BETA2**state.t)
    step = ADAM_LR * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    if not np.any(step):
        return hp.clamped()  # stationary: skip the log/exp round trip
    theta = hp.to_vector() + step
    return GpHyperparams.from_vector(theta).clamped()


def posterior_batch(hp, data, z):
    """Predictive mean/variance at each row of z, in standardized units."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, FEATURE_DIM)
    n = len(data)
    if n == 0:
        mean = np.full(z.shape[0], hp.mean_constant)
        var = np.full(z.shape[0], hp.outputscale + hp.noise_variance)
        return mean, var
    factor = _factorize(hp, data.features)
    y = data.values - hp.mean_constant
    alpha = cho_solve(factor, y)
    k_star = kernel_matrix(hp, data.features, z)
    mean = hp.mean_constant + k_star.T @ alpha
    solved = cho_solve(factor, k_star)
    var = hp.outputscale - np.sum(k_star * solved, axis=0)
    return mean, np.maximum(var, VARIANCE_FLOOR)


def posterior(hp, data, z):
    """GpPosterior at a single feature vector."""
    mean, var = posterior_batch(hp, data, np.asarray(z).reshape(1, FEATURE_DIM))
    return GpPosterior(float(mean[0]), float(var[0]))
