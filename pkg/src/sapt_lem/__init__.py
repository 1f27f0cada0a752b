"""Surrogate-assisted parallel tempering for landscape-evolution model inversion."""

from .diagnostics import cross_section, psrf, rmse_elev, rmse_sed, rmse_sur
from .engine import EnsembleConfig, PosteriorChains, build_ladder, posterior_summary, run
from .lem import (GridTopography, LemConfig, ParameterVector, Problem, SimulationOutput,
                  flow_route, make_synthetic_problem, simulate, step)
from .likelihood import LikelihoodConfig, Observations, evaluate_true
from .proposals import ArwConfig, PriorBounds
from .surrogate import SurrogateNetwork, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ArwConfig", "EnsembleConfig", "GridTopography", "LemConfig", "LikelihoodConfig",
    "Observations", "ParameterVector", "PosteriorChains", "PriorBounds", "Problem",
    "SimulationOutput", "SurrogateNetwork", "TrainConfig", "build_ladder", "cross_section",
    "evaluate_true", "flow_route", "make_synthetic_problem", "posterior_summary", "psrf",
    "rmse_elev", "rmse_sed", "rmse_sur", "run", "simulate", "step",
]
