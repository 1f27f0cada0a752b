"""Convergence and prediction-accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChains, DimensionMismatch, LengthMismatch, ConfigError
from .lem import GridTopography


@dataclass(frozen=True)
class PsrfReport:
    names: tuple
    scores: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    def to_dict(self):
        return {"parameters": dict(zip(self.names, map(float, self.scores))),
                "mean_r_score": self.mean}


def psrf(chains, names=None) -> PsrfReport:
    """Gelman-Rubin potential scale reduction factor.

    Parameters
    ----------
    chains : array_like
        Shape ``(C, L)`` for one parameter or ``(C, L, P)`` for several.
    names : sequence of str, optional
        Parameter labels for the report.

    Notes
    -----
    ``W`` is the mean within-chain variance, ``B/L`` the variance of the
    chain means, ``V = (1 - 1/L) W + B/L`` and ``R = sqrt(V / W)``. No
    degrees-of-freedom correction is applied.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ConfigError("chains must have shape (C, L) or (C, L, P)")
    n_chains, length, n_par = x.shape
    if n_chains < 2 or length < 4:
        raise ConfigError("PSRF needs at least 2 chains of length 4")
    w = np.mean(np.var(x, axis=1, ddof=1), axis=0)
    b_over_l = np.var(np.mean(x, axis=1), axis=0, ddof=1)
    if np.any(w <= 0):
        raise DegenerateChains("a parameter has zero within-chain variance")
    v_hat = (1.0 - 1.0 / length) * w + b_over_l
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n_par))
    return PsrfReport(names, np.sqrt(v_hat / w))


def _rmse(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_elev(pred, truth) -> float:
    p = pred.elevation if isinstance(pred, GridTopography) else pred
    t = truth.elevation if isinstance(truth, GridTopography) else truth
    return _rmse(p, t)


def rmse_sed(pred, truth) -> float:
    return _rmse(pred, truth)


def rmse_sur(true_logliks, pseudo_logliks) -> float:
    a = np.asarray(true_logliks, float).reshape(-1)
    b = np.asarray(pseudo_logliks, float).reshape(-1)
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} true values vs {b.size} surrogate values")
    if a.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cross_section(truth_profile, predicted_profiles):
    """Mean and spread of posterior predictions along one grid row.

    ``predicted_profiles`` is ``(N, n_cols)`` and may contain NaN rows
    (states without a true-model prediction); those are ignored.
    Returns a list of ``(index, truth, mean, std)`` tuples.
    """
    preds = np.atleast_2d(np.asarray(predicted_profiles, float))
    preds = preds[np.all(np.isfinite(preds), axis=1)]
    truth = np.asarray(truth_profile, float)
    if preds.shape[0] == 0:
        mean = np.full_like(truth, np.nan)
        std = np.full_like(truth, np.nan)
    else:
        mean = preds.mean(axis=0)
        std = preds.std(axis=0)
    return [(i, float(t), float(m), float(s)) for i, (t, m, s) in enumerate(zip(truth, mean, std))]
