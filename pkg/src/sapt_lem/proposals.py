"""Random-walk and adaptive random-walk proposals on a uniform prior box.

Both kernels are symmetric: Gaussian steps are folded back into the prior
box by reflection, so the Metropolis ratio needs no proposal correction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FactorizationFailure, InsufficientHistory

#: log-prior (and log-likelihood) value used in place of -inf
SENTINEL = -1e10


@dataclass(frozen=True)
class PriorBounds:
    """Closed uniform prior box ``[lower_j, upper_j]`` per parameter."""

    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.shape != (len(self.names),):
            raise ConfigError("bounds must have one (lower, upper) pair per name")
        if not np.all(lower < upper):
            raise ConfigError("every prior interval needs lower < upper")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_dict(cls, mapping):
        names = tuple(mapping)
        lo = [mapping[k][0] for k in names]
        hi = [mapping[k][1] for k in names]
        return cls(names, np.array(lo, float), np.array(hi, float))

    def to_dict(self):
        return {k: [float(a), float(b)] for k, a, b in zip(self.names, self.lower, self.upper)}

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def __len__(self):
        return len(self.names)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def normalize(self, theta):
        return (np.asarray(theta, float) - self.lower) / self.width

    def denormalize(self, unit):
        return self.lower + np.asarray(unit, float) * self.width


@dataclass(frozen=True)
class RwConfig:
    phi: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.phi < 1.0:
            raise ConfigError("phi must lie in [0, 1)")


@dataclass(frozen=True)
class ArwConfig:
    """Adaptive random-walk schedule.

    ``min_step_fraction`` sets the per-parameter covariance floor
    ``lambda_j = min_step_fraction * (b_j - a_j)``.
    """

    adapt_interval: int = 25
    min_step_fraction: float = 0.01
    warmup: int = 100

    def __post_init__(self):
        if self.adapt_interval < 1:
            raise ConfigError("adapt_interval must be >= 1")
        if self.min_step_fraction <= 0:
            raise ConfigError("min_step_fraction must be > 0")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")

    def min_steps(self, bounds: PriorBounds) -> np.ndarray:
        return self.min_step_fraction * bounds.width


@dataclass
class ChainHistory:
    """Append-only record of the chain iterates of one replica."""

    rows: list = field(default_factory=list)

    def append(self, theta):
        self.rows.append(np.array(theta, dtype=float))

    def __len__(self):
        return len(self.rows)

    def as_array(self) -> np.ndarray:
        return np.vstack(self.rows)


def reflect(theta, bounds: PriorBounds) -> np.ndarray:
    """Fold ``theta`` into the closed prior box by repeated mirror reflection."""
    x = np.asarray(theta, dtype=float)
    w = bounds.width
    y = np.mod(x - bounds.lower, 2.0 * w)
    y = np.where(y > w, 2.0 * w - y, y)
    return bounds.lower + y


def rw_step_sizes(bounds: PriorBounds, phi: float) -> np.ndarray:
    return bounds.width * phi


def propose_rw(theta, bounds: PriorBounds, phi: float, rng: np.random.Generator) -> np.ndarray:
    """Diagonal Gaussian step with ``sigma_j = (b_j - a_j) * phi``, reflected into bounds."""
    theta = np.asarray(theta, dtype=float)
    step = rng.standard_normal(theta.shape) * rw_step_sizes(bounds, phi)
    return reflect(theta + step, bounds)


def update_covariance(history, min_steps) -> np.ndarray:
    """Sample covariance of the chain history plus ``diag(min_steps**2)``."""
    rows = history.as_array() if isinstance(history, ChainHistory) else np.asarray(history, float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise InsufficientHistory("need at least two iterates to estimate a covariance")
    cov = np.atleast_2d(np.cov(rows, rowvar=False))
    cov = 0.5 * (cov + cov.T)
    return cov + np.diag(np.asarray(min_steps, float) ** 2)


def cholesky_factor(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise FactorizationFailure("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(str(exc)) from exc


def propose_arw(theta, cov, bounds: PriorBounds, rng: np.random.Generator, factor=None) -> np.ndarray:
    """Multivariate-normal step with covariance ``cov``, reflected into bounds.

    ``factor`` may carry a precomputed lower Cholesky factor of ``cov`` so a
    frozen kernel is not refactorized on every call.
    """
    if factor is None:
        factor = cholesky_factor(cov)
    theta = np.asarray(theta, dtype=float)
    step = factor @ rng.standard_normal(theta.shape)
    return reflect(theta + step, bounds)


def log_prior(theta, bounds: PriorBounds) -> float:
    theta = np.asarray(theta, dtype=float)
    inside = np.all((theta >= bounds.lower) & (theta <= bounds.upper))
    return 0.0 if inside else SENTINEL
