"""Student-t log-likelihoods for final elevation and sediment records.

The unknown noise variances carry inverse-gamma priors and are integrated
out analytically, which leaves a product of Student-t kernels. Constants
are dropped: the sampler only ever uses likelihood differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionMismatch, NumericalOverflow
from .lem import GridTopography, ParameterVector, Problem, SimulationOutput, simulate
from .proposals import SENTINEL


@dataclass
class Observations:
    elevation_truth: GridTopography
    sediment_truth: np.ndarray

    @classmethod
    def from_problem(cls, problem: Problem) -> "Observations":
        gt = problem.ground_truth
        return cls(gt.final_topography, np.asarray(gt.sediment, float))


@dataclass(frozen=True)
class LikelihoodConfig:
    nu_elev: int
    nu_sed: int

    def __post_init__(self):
        if self.nu_elev < 1 or self.nu_sed < 1:
            raise ConfigError("degrees of freedom must be >= 1")

    @classmethod
    def for_problem(cls, problem: Problem) -> "LikelihoodConfig":
        """One degree of freedom per observed value in each data set."""
        nr, nc = problem.initial_topography.shape
        sed = problem.ground_truth.sediment
        return cls(nu_elev=nr * nc, nu_sed=int(sed.size))


@dataclass(frozen=True)
class LogLikelihood:
    value: float
    elev: float
    sed: float
    failed: bool = False

    @classmethod
    def from_parts(cls, elev, sed):
        return cls(float(elev + sed), float(elev), float(sed))

    @classmethod
    def sentinel(cls):
        return cls(SENTINEL, SENTINEL, 0.0, failed=True)


def _student_t_sum(residual, nu):
    return -0.5 * (nu + 1.0) * float(np.sum(np.log1p(residual * residual / nu)))


def log_lik_elev(pred, truth, nu) -> float:
    p = pred.elevation if isinstance(pred, GridTopography) else np.asarray(pred, float)
    t = truth.elevation if isinstance(truth, GridTopography) else np.asarray(truth, float)
    if p.shape != t.shape:
        raise DimensionMismatch(f"predicted grid {p.shape} vs observed {t.shape}")
    return _student_t_sum(t - p, nu)


def log_lik_sed(pred, truth, nu) -> float:
    p = np.asarray(pred, float)
    t = np.asarray(truth, float)
    if p.shape != t.shape:
        raise DimensionMismatch(f"predicted sediment {p.shape} vs observed {t.shape}")
    return _student_t_sum(t - p, nu)


def log_lik_combined(output: SimulationOutput, obs: Observations, cfg: LikelihoodConfig) -> LogLikelihood:
    elev = log_lik_elev(output.final_topography, obs.elevation_truth, cfg.nu_elev)
    sed = log_lik_sed(output.sediment, obs.sediment_truth, cfg.nu_sed)
    return LogLikelihood.from_parts(elev, sed)


def evaluate_true(params, problem: Problem, cfg: Optional[LikelihoodConfig] = None,
                  obs: Optional[Observations] = None, slow_ms: float = 0.0):
    """Run the forward model and score it against the problem's observations.

    Returns ``(loglik, output)``. A diverging forward model yields the
    sentinel likelihood with ``failed=True`` and ``output=None``.
    ``slow_ms`` adds an artificial delay to emulate an expensive model.
    """
    if not isinstance(params, ParameterVector):
        params = ParameterVector.from_array(problem.names, params)
    cfg = cfg or LikelihoodConfig.for_problem(problem)
    obs = obs or Observations.from_problem(problem)
    if slow_ms > 0:
        time.sleep(slow_ms / 1000.0)
    try:
        out = simulate(problem.initial_topography, params, problem.lem_config)
    except NumericalOverflow:
        return LogLikelihood.sentinel(), None
    return log_lik_combined(out, obs, cfg), out
