"""One-hidden-layer neural network that emulates the log-likelihood surface.

The network maps min-max normalized parameters to a [0, 1]-normalized,
temperature-corrected log-likelihood. Training happens only on the manager
side; replicas receive value copies of the weights for prediction.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionMismatch, EmptyDataset, SurrogateNotReady
from .proposals import SENTINEL, PriorBounds

PARAM_KEYS = ("w_hidden", "b_hidden", "w_out", "b_out")


@dataclass
class SurrogateNetwork:
    w_hidden: np.ndarray  # (I, H)
    b_hidden: np.ndarray  # (H,)
    w_out: np.ndarray     # (H,)
    b_out: np.ndarray     # shape ()

    @classmethod
    def initialize(cls, input_dim: int, hidden_dim: int = 32, rng=None) -> "SurrogateNetwork":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng() if rng is None else rng
        lim1 = np.sqrt(6.0 / (input_dim + hidden_dim))
        lim2 = np.sqrt(6.0 / (hidden_dim + 1))
        return cls(rng.uniform(-lim1, lim1, (input_dim, hidden_dim)),
                   np.zeros(hidden_dim),
                   rng.uniform(-lim2, lim2, hidden_dim),
                   np.zeros(()))

    @property
    def input_dim(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[1]

    def params(self):
        return [getattr(self, k) for k in PARAM_KEYS]

    def replace(self, arrays) -> "SurrogateNetwork":
        return SurrogateNetwork(*[np.array(a, dtype=float) for a in arrays])

    def copy(self) -> "SurrogateNetwork":
        return self.replace(self.params())

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden_dim": self.hidden_dim,
                **{k: np.ravel(getattr(self, k)).tolist() for k in PARAM_KEYS}}

    @classmethod
    def from_dict(cls, d) -> "SurrogateNetwork":
        i, h = int(d["input_dim"]), int(d["hidden_dim"])
        return cls(np.reshape(d["w_hidden"], (i, h)).astype(float),
                   np.asarray(d["b_hidden"], float).reshape(h),
                   np.asarray(d["w_out"], float).reshape(h),
                   np.asarray(d["b_out"], float).reshape(()))


def _check_inputs(net, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.input_dim:
        raise DimensionMismatch(f"expected {net.input_dim} inputs, got {x.shape[-1]}")
    return x


def nn_forward(net: SurrogateNetwork, x):
    """Rectified hidden layer, identity output. Scalar for 1-D ``x``."""
    x = _check_inputs(net, x)
    hidden = np.maximum(x @ net.w_hidden + net.b_hidden, 0.0)
    out = hidden @ net.w_out + net.b_out
    return float(out) if x.ndim == 1 else out


def mse(net, inputs, targets) -> float:
    return float(np.mean((nn_forward(net, np.atleast_2d(inputs)) - targets) ** 2))


def nn_gradient(net: SurrogateNetwork, inputs, targets):
    """Backpropagated gradients of the batch mean squared error.

    Returns a list aligned with ``net.params()``. The rectifier's
    subgradient at zero is taken as zero.
    """
    x = _check_inputs(net, np.atleast_2d(inputs))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise EmptyDataset("empty batch")
    if y.size != x.shape[0]:
        raise DimensionMismatch("one target per input row expected")
    pre = x @ net.w_hidden + net.b_hidden
    hidden = np.maximum(pre, 0.0)
    resid = hidden @ net.w_out + net.b_out - y
    d_out = 2.0 * resid / x.shape[0]
    g_w_out = hidden.T @ d_out
    g_b_out = np.asarray(d_out.sum())
    d_pre = np.outer(d_out, net.w_out) * (pre > 0.0)
    return [x.T @ d_pre, d_pre.sum(axis=0), g_w_out, g_b_out]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 1e-3
    eps: float = 1e-8

    def __post_init__(self):
        if self.t < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("invalid Adam moments configuration")
        if self.alpha <= 0 or self.eps <= 0:
            raise ConfigError("Adam needs alpha > 0 and eps > 0")

    @classmethod
    def zeros_like(cls, net: SurrogateNetwork, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in net.params()],
                   [np.zeros_like(p) for p in net.params()], **kw)

    def to_dict(self):
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2,
                "alpha": self.alpha, "eps": self.eps,
                "m": [np.ravel(a).tolist() for a in self.m],
                "v": [np.ravel(a).tolist() for a in self.v]}


def adam_step(net: SurrogateNetwork, grads, state: AdamState):
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(net.params(), grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps))
        ms.append(m)
        vs.append(v)
    new_state = AdamState(ms, vs, t, b1, b2, state.alpha, state.eps)
    return net.replace(new_params), new_state


def sgd_step(net: SurrogateNetwork, grads, rate: float) -> SurrogateNetwork:
    return net.replace([p - rate * g for p, g in zip(net.params(), grads)])


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    mode: str = "transfer_and_train"
    epochs: int = 20
    batch_size: int = 32
    learning_rate: Optional[float] = None
    hidden_dim: int = 32

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.mode not in ("transfer_and_train", "from_scratch"):
            raise ConfigError("mode must be 'transfer_and_train' or 'from_scratch'")
        if self.epochs < 1 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("epochs, batch_size and hidden_dim must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1e-3 if self.optimizer == "adam" else 1e-2

    def to_dict(self):
        return {"optimizer": self.optimizer, "mode": self.mode, "epochs": self.epochs,
                "batch_size": self.batch_size, "learning_rate": self.learning_rate,
                "hidden_dim": self.hidden_dim}


def fit(net, inputs, targets, cfg: TrainConfig, rng, state: Optional[AdamState] = None):
    """Mini-batch training for ``cfg.epochs`` epochs.

    Returns ``(net, adam_state, train_mse)``; ``adam_state`` is ``None``
    for SGD.
    """
    x = np.atleast_2d(np.asarray(inputs, float))
    y = np.asarray(targets, float).reshape(-1)
    if x.shape[0] == 0:
        raise EmptyDataset("no training rows")
    if cfg.optimizer == "adam" and state is None:
        state = AdamState.zeros_like(net, alpha=cfg.rate)
    n = x.shape[0]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            grads = nn_gradient(net, x[idx], y[idx])
            if cfg.optimizer == "adam":
                net, state = adam_step(net, grads, state)
            else:
                net = sgd_step(net, grads, cfg.rate)
    return net, state, mse(net, x, y)


@dataclass
class NormalizationSpec:
    """Maps parameters through the prior box and log-likelihoods through
    the running range of observed (non-sentinel) values."""

    bounds: PriorBounds
    ell_min: float = np.inf
    ell_max: float = -np.inf

    def update(self, logliks):
        vals = np.asarray(logliks, float).reshape(-1)
        vals = vals[np.isfinite(vals) & (vals > SENTINEL)]
        if vals.size:
            self.ell_min = min(self.ell_min, float(vals.min()))
            self.ell_max = max(self.ell_max, float(vals.max()))

    @property
    def ready(self) -> bool:
        return np.isfinite(self.ell_min) and np.isfinite(self.ell_max)

    @property
    def span(self) -> float:
        return self.ell_max - self.ell_min

    def normalize_params(self, theta):
        return self.bounds.normalize(theta)

    def normalize_lik(self, ell):
        ell = np.asarray(ell, float)
        if self.span <= 0:
            return np.ones_like(ell)
        return (ell - self.ell_min) / self.span

    def denormalize_lik(self, unit):
        return self.ell_min + np.asarray(unit, float) * max(self.span, 0.0)

    def to_dict(self):
        return {"bounds": self.bounds.to_dict(), "ell_min": self.ell_min, "ell_max": self.ell_max}

    @classmethod
    def from_dict(cls, d) -> "NormalizationSpec":
        return cls(PriorBounds.from_dict(d["bounds"]), float(d["ell_min"]), float(d["ell_max"]))


@dataclass
class SurrogateDataset:
    """Fused, append-only training data gathered from all replicas.

    Parameters and log-likelihoods are stored in native units; the [0, 1]
    view is produced through a :class:`NormalizationSpec` so that every
    row uses the current likelihood range.
    """

    n_params: int
    theta: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    interval: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __len__(self):
        return len(self.loglik)

    def add(self, theta_rows, logliks, interval, provenance="true"):
        theta_rows = np.atleast_2d(np.asarray(theta_rows, float))
        if theta_rows.shape[1] != self.n_params:
            raise DimensionMismatch("parameter rows have the wrong width")
        for row, ell in zip(theta_rows, np.asarray(logliks, float).reshape(-1)):
            self.theta.append(row)
            self.loglik.append(float(ell))
            self.interval.append(int(interval))
            self.provenance.append(provenance)

    @property
    def last_interval(self) -> int:
        return max(self.interval) if self.interval else -1

    def select(self, which="all"):
        idx = np.arange(len(self))
        if which == "newest":
            idx = idx[np.asarray(self.interval) == self.last_interval]
        return idx

    def arrays(self, spec: NormalizationSpec, which="all"):
        """Normalized ``(inputs, targets)`` for the chosen rows."""
        idx = self.select(which)
        if idx.size == 0:
            raise EmptyDataset("surrogate dataset is empty")
        theta = np.vstack([self.theta[i] for i in idx])
        ell = np.array([self.loglik[i] for i in idx])
        return (np.clip(spec.normalize_params(theta), 0.0, 1.0),
                np.clip(spec.normalize_lik(ell), 0.0, 1.0))


def collect_interval(replica_batches, dataset: SurrogateDataset, spec: NormalizationSpec, interval: int):
    """Fuse one surrogate interval of replica data into the training set.

    Each batch is ``(theta_rows, tempered_logliks, temperature, provenance)``
    where ``provenance`` is a sequence of tags. Tempered likelihoods are
    multiplied back by the replica temperature. Returns the normalized
    ``(inputs, targets)`` rows that were added.
    """
    added_theta, added_ell = [], []
    for theta_rows, tempered, temperature, provenance in replica_batches:
        tags = list(provenance)
        if any(t != "true" for t in tags):
            raise ValueError("only true-model evaluations may enter the surrogate dataset")
        theta_rows = np.asarray(theta_rows, float).reshape(len(tags), -1) if tags else np.empty((0, dataset.n_params))
        ell = np.asarray(tempered, float).reshape(-1) * float(temperature)
        if ell.size == 0:
            continue
        added_theta.append(theta_rows)
        added_ell.append(ell)
    if not added_ell:
        return np.empty((0, dataset.n_params)), np.empty(0)
    theta = np.vstack(added_theta)
    ell = np.concatenate(added_ell)
    spec.update(ell)
    dataset.add(theta, ell, interval)
    return (np.clip(spec.normalize_params(theta), 0.0, 1.0),
            np.clip(spec.normalize_lik(ell), 0.0, 1.0))


def predict_pseudo(net: Optional[SurrogateNetwork], theta, spec: NormalizationSpec) -> float:
    """Surrogate log-likelihood estimate on the original scale."""
    if net is None or not spec.ready:
        raise SurrogateNotReady("surrogate has not been trained yet")
    unit = nn_forward(net, spec.normalize_params(theta))
    return float(spec.denormalize_lik(min(max(unit, 0.0), 1.0)))


def train(net, dataset: SurrogateDataset, cfg: TrainConfig, spec: NormalizationSpec, rng,
          state: Optional[AdamState] = None):
    """Train on the accumulated dataset.

    ``transfer_and_train`` keeps the current weights (and optimizer state)
    and uses only the newest interval's rows; ``from_scratch``
    reinitializes and uses every row. Returns
    ``(net, adam_state, train_mse, wall_time)``.
    """
    if len(dataset) == 0:
        raise EmptyDataset("surrogate dataset is empty")
    t0 = time.perf_counter()
    if cfg.mode == "from_scratch" or net is None:
        net = SurrogateNetwork.initialize(dataset.n_params, cfg.hidden_dim, rng)
        state = None
    which = "newest" if cfg.mode == "transfer_and_train" else "all"
    x, y = dataset.arrays(spec, which)
    net, state, err = fit(net, x, y, cfg, rng, state)
    return net, state, err, time.perf_counter() - t0


@dataclass
class Surrogate:
    """Manager-side global surrogate: data, weights and training log."""

    bounds: PriorBounds
    cfg: TrainConfig = field(default_factory=TrainConfig)
    net: Optional[SurrogateNetwork] = None
    state: Optional[AdamState] = None
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.spec = NormalizationSpec(self.bounds)
        self.dataset = SurrogateDataset(len(self.bounds))

    @property
    def ready(self) -> bool:
        return self.net is not None

    def collect(self, replica_batches, interval):
        return collect_interval(replica_batches, self.dataset, self.spec, interval)

    def train(self, rng, interval):
        self.net, self.state, err, wall = train(self.net, self.dataset, self.cfg, self.spec, rng, self.state)
        self.log.append({"interval": interval, "dataset_size": len(self.dataset),
                         "mode": self.cfg.mode, "mse": err, "wall_time": wall})
        return err, wall

    def snapshot(self):
        """Immutable value copy shipped to replicas."""
        return self.net.copy(), copy.deepcopy(self.spec)

    def predict(self, theta) -> float:
        return predict_pseudo(self.net, theta, self.spec)

    def checkpoint(self):
        return {"network": self.net.to_dict() if self.net is not None else None,
                "normalization": self.spec.to_dict(),
                "optimizer": self.state.to_dict() if self.state is not None else None,
                "train_config": self.cfg.to_dict()}


BATCH_RATIOS = (0.1, 0.2, 0.3, 0.4)


def study_schedule(x, y, cfg: TrainConfig, ratio: float, rng, holdout=None):
    """Train through a sequence of data intervals and score on held-out rows.

    The training rows are cut, in their original order, into consecutive
    chunks of ``ceil(ratio * n)`` rows, each chunk standing for one
    surrogate interval. ``transfer_and_train`` continues from the previous
    weights on the newest chunk only; ``from_scratch`` reinitializes and
    trains on every chunk seen so far.

    Returns a dict with the holdout MSE after the last interval, the
    cumulative training wall time and the number of intervals.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).reshape(-1)
    if x.shape[0] == 0:
        raise EmptyDataset("no training rows")
    if not 0 < ratio <= 1:
        raise ConfigError("batch ratio must lie in (0, 1]")
    chunk = int(np.ceil(ratio * x.shape[0]))
    net, state, wall = None, None, 0.0
    n_int = 0
    for lo in range(0, x.shape[0], chunk):
        t0 = time.perf_counter()
        if net is None or cfg.mode == "from_scratch":
            net = SurrogateNetwork.initialize(x.shape[1], cfg.hidden_dim, rng)
            state = None
        start = lo if cfg.mode == "transfer_and_train" else 0
        net, state, _ = fit(net, x[start:lo + chunk], y[start:lo + chunk], cfg, rng, state)
        wall += time.perf_counter() - t0
        n_int += 1
    hx, hy = holdout if holdout is not None else (x, y)
    return {"optimizer": cfg.optimizer, "mode": cfg.mode, "batch_ratio": ratio,
            "intervals": n_int, "mse": mse(net, hx, hy), "wall_time": wall}


def surrogate_study(x, y, base: Optional[TrainConfig] = None, ratios=BATCH_RATIOS,
                    holdout_fraction=0.1, seed=0):
    """Optimizer x training-mode x batch-ratio comparison.

    A random ``holdout_fraction`` of rows is held out for scoring; the
    remaining rows keep their collection order. Every configuration starts
    from the same seed.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.asarray(y, float).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise EmptyDataset("no rows to study")
    base = base or TrainConfig()
    n_hold = max(1, int(round(holdout_fraction * n)))
    mask = np.zeros(n, bool)
    mask[np.random.default_rng(seed).choice(n, n_hold, replace=False)] = True
    holdout = (x[mask], y[mask])
    rows = []
    for opt in ("sgd", "adam"):
        for mode in ("transfer_and_train", "from_scratch"):
            cfg = TrainConfig(optimizer=opt, mode=mode, epochs=base.epochs,
                              batch_size=base.batch_size, hidden_dim=base.hidden_dim)
            for ratio in ratios:
                rng = np.random.default_rng(seed + 1)
                rows.append(study_schedule(x[~mask], y[~mask], cfg, ratio, rng, holdout))
    return rows
