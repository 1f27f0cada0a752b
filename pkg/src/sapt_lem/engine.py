"""Surrogate-assisted parallel tempering.

A manager owns the temperature ladder and the global surrogate; replicas
own their chain, proposal kernel and random streams. Between
synchronization points replicas run independently. At each swap point
the manager attempts neighbour exchanges; at each surrogate interval it
gathers the replicas' true-model evaluations, retrains the surrogate and
ships a copy of the weights back. Halfway through (by default) every
temperature drops to 1.

Replicas are driven either in-process, round-robin by index
(``execution="sequential"``), or one process each with pipe messaging
(``execution="parallel"``). Both modes draw the same per-replica random
streams and hit the same synchronization points, so they produce the
same chains.
"""
from __future__ import annotations

import math
import multiprocessing as mp
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .diagnostics import rmse_elev, rmse_sed
from .errors import ConfigError, EmptyPosterior, FactorizationFailure, InsufficientHistory
from .lem import Problem
from .likelihood import LikelihoodConfig, Observations, evaluate_true
from .proposals import (ArwConfig, ChainHistory, PriorBounds, cholesky_factor, log_prior,
                        propose_arw, propose_rw, update_covariance)
from .surrogate import Surrogate, TrainConfig, predict_pseudo

TRUE, PSEUDO = "true", "pseudo"


# ----------------------------------------------------------- ladder & rules


@dataclass(frozen=True)
class TemperatureLadder:
    temperatures: tuple
    t_max: float

    def __len__(self):
        return len(self.temperatures)

    def __getitem__(self, i):
        return self.temperatures[i]


def build_ladder(n_replicas: int, t_max: float) -> TemperatureLadder:
    """Geometric ladder ``T_i = t_max ** ((i - 1) / (M - 1))``."""
    if n_replicas < 2 or not t_max >= 1.0:
        raise ConfigError("need at least 2 replicas and t_max >= 1")
    temps = tuple(float(t_max ** (i / (n_replicas - 1))) for i in range(n_replicas))
    return TemperatureLadder(temps, float(t_max))


def stage_transition(ladder: TemperatureLadder, progress: float, stage2_start: float) -> TemperatureLadder:
    if progress < stage2_start:
        return ladder
    return TemperatureLadder(tuple(1.0 for _ in ladder.temperatures), ladder.t_max)


def acceptance_probability(l_new, l_old, temperature) -> float:
    delta = (l_new - l_old) / temperature
    return 1.0 if delta >= 0 else math.exp(delta)


def metropolis_accept(l_new, l_old, temperature, rng) -> bool:
    return rng.random() < acceptance_probability(l_new, l_old, temperature)


def swap_probability(l_i, l_j, t_i, t_j) -> float:
    """Exchange probability for neighbouring states (untempered likelihoods)."""
    delta = (1.0 / t_i - 1.0 / t_j) * (l_j - l_i)
    return 1.0 if delta >= 0 else math.exp(delta)


class SwapDecision(NamedTuple):
    accepted: bool
    probability: float


def swap_accept(l_i, l_j, t_i, t_j, rng) -> SwapDecision:
    p = swap_probability(l_i, l_j, t_i, t_j)
    return SwapDecision(bool(rng.random() < p), p)


def choose_evaluation(rng, s_prob: float, surrogate_ready: bool) -> str:
    """``"true"`` or ``"pseudo"``; always true until a surrogate exists."""
    u = rng.random()
    if not surrogate_ready:
        return TRUE
    return PSEUDO if u < s_prob else TRUE


def blend_pseudo(l_surrogate, recent) -> float:
    """Average the surrogate estimate with the mean of the last three likelihoods.

    ``recent`` is ordered oldest to newest; short buffers are padded by
    repeating their oldest entry.
    """
    vals = list(recent)[-3:]
    if not vals:
        raise ValueError("likelihood history is empty")
    vals = [vals[0]] * (3 - len(vals)) + vals
    return 0.5 * l_surrogate + 0.5 * (sum(vals) / 3.0)


# -------------------------------------------------------------- configuration


@dataclass(frozen=True)
class EnsembleConfig:
    replicas: int = 8
    samples: int = 5000
    swap_interval: int = 3
    surrogate_interval: float = 0.05
    s_prob: float = 0.6
    t_max: float = 2.0
    burn_in: float = 0.5
    stage2_start: float = 0.5
    proposal: str = "arw"
    phi: float = 0.05
    arw: ArwConfig = field(default_factory=ArwConfig)
    shadow_every: int = 20

    def __post_init__(self):
        if isinstance(self.arw, dict):
            object.__setattr__(self, "arw", ArwConfig(**self.arw))
        if self.replicas < 2:
            raise ConfigError("need at least 2 replicas")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not 0.0 <= self.s_prob < 1.0:
            raise ConfigError("s_prob must lie in [0, 1)")
        if not 0.0 < self.surrogate_interval < 1.0:
            raise ConfigError("surrogate_interval must lie in (0, 1)")
        if self.swap_interval < 1:
            raise ConfigError("swap_interval must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn_in must lie in [0, 1)")
        if not 0.0 <= self.stage2_start <= 1.0:
            raise ConfigError("stage2_start must lie in [0, 1]")
        if self.t_max < 1.0:
            raise ConfigError("t_max must be >= 1")
        if self.proposal not in ("rw", "arw"):
            raise ConfigError("proposal must be 'rw' or 'arw'")
        if not 0.0 <= self.phi < 1.0:
            raise ConfigError("phi must lie in [0, 1)")
        if self.shadow_every < 0:
            raise ConfigError("shadow_every must be >= 0")

    @property
    def interval_samples(self) -> int:
        return max(1, int(round(self.surrogate_interval * self.samples)))

    @property
    def burn_in_index(self) -> int:
        return int(round(self.burn_in * self.samples))

    @property
    def stage2_index(self) -> int:
        return int(round(self.stage2_start * self.samples))

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------- targets


class Evaluation(NamedTuple):
    loglik: float
    failed: bool = False
    rmse_elev: float = float("nan")
    rmse_sed: float = float("nan")
    profile: Optional[np.ndarray] = None
    sediment: Optional[np.ndarray] = None


class ForwardTarget:
    """The expensive target: forward model plus Student-t likelihood."""

    def __init__(self, problem: Problem, slow_ms: float = 0.0):
        self.problem = problem
        self.slow_ms = float(slow_ms)
        self.bounds = problem.prior_bounds
        self.names = problem.names
        self.obs = Observations.from_problem(problem)
        self.lik_cfg = LikelihoodConfig.for_problem(problem)
        nr, nc = problem.initial_topography.shape
        self.profile_row = nr // 2
        self.profile_len = nc
        self.sediment_shape = tuple(self.obs.sediment_truth.shape)

    @property
    def truth_profile(self):
        return self.obs.elevation_truth.elevation[self.profile_row].copy()

    def evaluate(self, theta) -> Evaluation:
        ll, out = evaluate_true(theta, self.problem, self.lik_cfg, self.obs, self.slow_ms)
        if out is None:
            return Evaluation(ll.value, True)
        z = out.final_topography.elevation
        return Evaluation(ll.value, False,
                          rmse_elev(z, self.obs.elevation_truth.elevation),
                          rmse_sed(out.sediment, self.obs.sediment_truth),
                          z[self.profile_row].copy(), out.sediment.copy())


class GaussianTarget:
    """Analytic multivariate-normal log-likelihood on a prior box."""

    profile_len = 0
    sediment_shape = (0, 0)

    def __init__(self, mean, cov, bounds: PriorBounds):
        self.mean = np.asarray(mean, float)
        self.cov = np.asarray(cov, float)
        self.prec = np.linalg.inv(self.cov)
        self.bounds = bounds
        self.names = bounds.names

    def evaluate(self, theta) -> Evaluation:
        d = np.asarray(theta, float) - self.mean
        return Evaluation(float(-0.5 * d @ self.prec @ d))


# -------------------------------------------------------------------- replicas


class Replica:
    """One tempered chain. Owns its state, history and random streams."""

    def __init__(self, index, target, cfg: EnsembleConfig, temperature, seed_seq):
        self.index = index
        self.target = target
        self.cfg = cfg
        self.temperature = float(temperature)
        self.bounds = target.bounds
        prop_ss, acc_ss, choice_ss = seed_seq.spawn(3)
        self.proposal_rng = np.random.default_rng(prop_ss)
        self.accept_rng = np.random.default_rng(acc_ss)
        self.choice_rng = np.random.default_rng(choice_ss)
        self.min_steps = cfg.arw.min_steps(self.bounds)
        self.history = ChainHistory()
        self.factor = None
        self.surrogate = None  # (network copy, normalization copy)
        self.samples_done = 0
        self.n_true = 0
        self.n_pseudo = 0
        self.eval_seconds = 0.0
        self.predict_seconds = 0.0

        self.theta = self.bounds.sample(self.proposal_rng)
        ev = self._evaluate(self.theta)
        self.loglik = ev.loglik
        self.current = ev
        self.recent = deque([self.loglik], maxlen=3)

        n, p = cfg.samples, len(self.bounds)
        self.rec_theta = np.empty((n, p))
        self.rec_loglik = np.empty(n)
        self.rec_prov = np.empty(n, dtype=object)
        self.rec_accepted = np.zeros(n, dtype=bool)
        self.rec_temp = np.empty(n)
        self.rec_rmse_elev = np.full(n, np.nan)
        self.rec_rmse_sed = np.full(n, np.nan)
        self.rec_profile = np.full((n, target.profile_len), np.nan)
        self.rec_sediment = np.full((n,) + tuple(target.sediment_shape), np.nan)
        self.pending = []
        self.shadow = []

    def _evaluate(self, theta) -> Evaluation:
        t0 = time.perf_counter()
        ev = self.target.evaluate(theta)
        self.eval_seconds += time.perf_counter() - t0
        return ev

    def _propose(self):
        cfg = self.cfg
        if cfg.proposal == "arw" and self.samples_done >= cfg.arw.warmup:
            if (self.samples_done - cfg.arw.warmup) % cfg.arw.adapt_interval == 0:
                try:
                    self.factor = cholesky_factor(update_covariance(self.history, self.min_steps))
                except (FactorizationFailure, InsufficientHistory):
                    self.factor = None
            if self.factor is not None:
                return propose_arw(self.theta, None, self.bounds, self.proposal_rng, self.factor)
        return propose_rw(self.theta, self.bounds, cfg.phi, self.proposal_rng)

    def sample(self):
        s = self.samples_done
        temp = self.temperature
        proposal = self._propose()
        kind = choose_evaluation(self.choice_rng, self.cfg.s_prob, self.surrogate is not None)
        if kind == PSEUDO:
            t0 = time.perf_counter()
            l_sur = predict_pseudo(self.surrogate[0], proposal, self.surrogate[1])
            self.predict_seconds += time.perf_counter() - t0
            l_prop = blend_pseudo(l_sur, self.recent)
            ev = None
            self.n_pseudo += 1
            if self.cfg.shadow_every and self.n_pseudo % self.cfg.shadow_every == 0:
                # logged only; never feeds the chain or the training data
                self.shadow.append((s, self._evaluate(proposal).loglik, l_sur))
        else:
            ev = self._evaluate(proposal)
            l_prop = ev.loglik
            self.n_true += 1
            self.pending.append((proposal, l_prop / temp, temp))
        lp = log_prior(proposal, self.bounds)
        accepted = metropolis_accept(l_prop + lp, self.loglik, temp, self.accept_rng)
        if accepted:
            self.theta = proposal
            self.loglik = l_prop
            self.current = ev if ev is not None else Evaluation(l_prop)
        self.recent.append(self.loglik)
        self.history.append(self.theta)

        self.rec_theta[s] = self.theta
        self.rec_loglik[s] = self.loglik
        self.rec_prov[s] = kind
        self.rec_accepted[s] = accepted
        self.rec_temp[s] = temp
        cur = self.current
        self.rec_rmse_elev[s] = cur.rmse_elev
        self.rec_rmse_sed[s] = cur.rmse_sed
        if cur.profile is not None:
            self.rec_profile[s] = cur.profile
        if cur.sediment is not None:
            self.rec_sediment[s] = cur.sediment
        self.samples_done += 1

    def advance(self, n):
        for _ in range(n):
            self.sample()
        return self.samples_done

    # --- messages exchanged with the manager

    def take_batch(self):
        """True-evaluated rows since the last call, tempered as held locally."""
        rows = self.pending
        self.pending = []
        theta = np.array([r[0] for r in rows]).reshape(len(rows), len(self.bounds))
        tempered = np.array([r[1] for r in rows])
        temps = np.array([r[2] for r in rows])
        return theta, tempered, temps

    def swap_state(self):
        return (self.theta.copy(), self.loglik, list(self.recent), self.current)

    def set_swap_state(self, state):
        theta, loglik, recent, current = state
        self.theta = np.array(theta, float)
        self.loglik = float(loglik)
        self.recent = deque(recent, maxlen=3)
        self.current = current

    def set_temperature(self, temperature):
        self.temperature = float(temperature)

    def set_surrogate(self, snapshot):
        self.surrogate = snapshot

    def result(self):
        return {
            "theta": self.rec_theta, "loglik": self.rec_loglik,
            "provenance": self.rec_prov.astype(str), "accepted": self.rec_accepted,
            "temperature": self.rec_temp, "rmse_elev": self.rec_rmse_elev,
            "rmse_sed": self.rec_rmse_sed, "profile": self.rec_profile,
            "sediment": self.rec_sediment, "shadow": list(self.shadow),
            "n_true": self.n_true, "n_pseudo": self.n_pseudo,
            "eval_seconds": self.eval_seconds, "predict_seconds": self.predict_seconds,
        }


class _LocalHandle:
    def __init__(self, replica: Replica):
        self.replica = replica
        self._done = None

    def start_advance(self, n):
        self._done = self.replica.advance(n)

    def finish_advance(self):
        return self._done

    def call(self, name, *args):
        return getattr(self.replica, name)(*args)

    def close(self):
        pass


def _replica_worker(conn, args):
    replica = Replica(*args)
    while True:
        name, payload = conn.recv()
        if name == "stop":
            conn.close()
            return
        conn.send(getattr(replica, name)(*payload))


class _RemoteHandle:
    def __init__(self, ctx, args):
        self.conn, child = ctx.Pipe()
        self.proc = ctx.Process(target=_replica_worker, args=(child, args), daemon=True)
        self.proc.start()
        child.close()

    def start_advance(self, n):
        self.conn.send(("advance", (n,)))

    def finish_advance(self):
        return self.conn.recv()

    def call(self, name, *args):
        self.conn.send((name, args))
        return self.conn.recv()

    def close(self):
        try:
            self.conn.send(("stop", ()))
        except (BrokenPipeError, OSError):
            pass
        self.proc.join(timeout=10)


# ---------------------------------------------------------------------- output


@dataclass
class PosteriorChains:
    names: tuple
    config: EnsembleConfig
    train_config: TrainConfig
    seed: int
    replicas: list          # per-replica dicts from Replica.result()
    swaps: list             # (sync, i, j, accepted, probability)
    timing: dict
    surrogate_log: list
    surrogate_checkpoint: dict
    dataset_theta: np.ndarray
    dataset_loglik: np.ndarray
    truth_profile: Optional[np.ndarray] = None
    ladder: tuple = ()

    @property
    def burn_in_index(self) -> int:
        return self.config.burn_in_index

    @property
    def n_proposals(self) -> int:
        return sum(len(r["loglik"]) for r in self.replicas)

    def pooled(self, key="theta", burn_in=None):
        b = self.burn_in_index if burn_in is None else int(burn_in)
        return np.concatenate([r[key][b:] for r in self.replicas], axis=0)

    def shadow_pairs(self):
        pairs = [p for r in self.replicas for p in r["shadow"]]
        if not pairs:
            return np.empty(0), np.empty(0)
        arr = np.array([(p[1], p[2]) for p in pairs])
        return arr[:, 0], arr[:, 1]


def posterior_summary(chains: PosteriorChains, burn_in=None):
    """Mean, std and 5%/95% quantiles per parameter over pooled post-burn-in states."""
    theta = chains.pooled("theta", burn_in)
    if theta.shape[0] == 0:
        raise EmptyPosterior("no samples after burn-in")
    out = {}
    for j, name in enumerate(chains.names):
        col = np.sort(theta[:, j])
        out[name] = {"mean": float(col.mean()), "std": float(col.std()),
                     "q05": float(np.quantile(col, 0.05)), "q95": float(np.quantile(col, 0.95))}
    return out


# ---------------------------------------------------------------------- manager


def _seed_sequences(seed, n_replicas):
    children = np.random.SeedSequence(seed).spawn(n_replicas + 2)
    return children[:n_replicas], children[n_replicas], children[n_replicas + 1]


def _swap_pairs(n, sync_index):
    first = sync_index % 2
    return [(i, i + 1) for i in range(first, n - 1, 2)]


def run(problem, ensemble_cfg: Optional[EnsembleConfig] = None, train_cfg: Optional[TrainConfig] = None,
        seed: int = 0, execution: str = "sequential", slow_ms: float = 0.0) -> PosteriorChains:
    """Run the replica ensemble to completion.

    ``problem`` is a :class:`~sapt_lem.lem.Problem` or any target object
    exposing ``bounds``, ``names``, ``profile_len``, ``sediment_shape`` and
    ``evaluate(theta) -> Evaluation``.
    """
    cfg = ensemble_cfg or EnsembleConfig()
    train_cfg = train_cfg or TrainConfig()
    if execution not in ("sequential", "parallel"):
        raise ConfigError("execution must be 'sequential' or 'parallel'")
    target = ForwardTarget(problem, slow_ms) if isinstance(problem, Problem) else problem
    t_start = time.perf_counter()

    ladder = build_ladder(cfg.replicas, cfg.t_max)
    replica_ss, swap_ss, train_ss = _seed_sequences(seed, cfg.replicas)
    swap_rng = np.random.default_rng(swap_ss)
    train_rng = np.random.default_rng(train_ss)
    surrogate = Surrogate(target.bounds, train_cfg)

    args = [(i, target, cfg, ladder[i], replica_ss[i]) for i in range(cfg.replicas)]
    if execution == "parallel":
        ctx = mp.get_context("spawn")
        handles = [_RemoteHandle(ctx, a) for a in args]
    else:
        handles = [_LocalHandle(Replica(*a)) for a in args]

    timing = {"sampling": 0.0, "training": 0.0, "swaps": 0.0}
    swaps = []
    n_total = cfg.samples
    step_sur = cfg.interval_samples
    next_swap, next_sur = cfg.swap_interval, step_sur
    stage2_at = cfg.stage2_index if cfg.stage2_index < n_total else None
    stage2_done = False
    pos, sync_index, interval = 0, 0, 0
    alive = cfg.replicas
    try:
        while alive > 0:
            stops = [next_swap, next_sur, n_total]
            if stage2_at is not None and not stage2_done:
                stops.append(stage2_at)
            stop = min(s for s in stops if s > pos) if any(s > pos for s in stops) else n_total
            t0 = time.perf_counter()
            for h in handles:
                h.start_advance(stop - pos)
            for h in handles:
                h.finish_advance()
            timing["sampling"] += time.perf_counter() - t0
            pos = stop

            if pos == next_sur or pos == n_total:
                batches = []
                for h in handles:
                    theta, tempered, temps = h.call("take_batch")
                    for t in np.unique(temps):
                        sel = temps == t
                        batches.append((theta[sel], tempered[sel], float(t), [TRUE] * int(sel.sum())))
                surrogate.collect(batches, interval)
                if pos < n_total and cfg.s_prob > 0 and len(surrogate.dataset) > 0:
                    t0 = time.perf_counter()
                    surrogate.train(train_rng, interval)
                    snap = surrogate.snapshot()
                    for h in handles:
                        h.call("set_surrogate", snap)
                    timing["training"] += time.perf_counter() - t0
                interval += 1
                if pos == next_sur:
                    next_sur += step_sur

            if stage2_at is not None and not stage2_done and pos >= stage2_at:
                ladder = stage_transition(ladder, pos / n_total, cfg.stage2_start)
                for h, temp in zip(handles, ladder.temperatures):
                    h.call("set_temperature", temp)
                stage2_done = True

            if pos == next_swap:
                if pos < n_total:
                    t0 = time.perf_counter()
                    for i, j in _swap_pairs(cfg.replicas, sync_index):
                        si, sj = handles[i].call("swap_state"), handles[j].call("swap_state")
                        dec = swap_accept(si[1], sj[1], ladder[i], ladder[j], swap_rng)
                        if dec.accepted:
                            handles[i].call("set_swap_state", sj)
                            handles[j].call("set_swap_state", si)
                        swaps.append((sync_index, i, j, dec.accepted, dec.probability))
                    sync_index += 1
                    timing["swaps"] += time.perf_counter() - t0
                next_swap += cfg.swap_interval

            if pos >= n_total:
                results = [h.call("result") for h in handles]
                alive -= len(handles)
    finally:
        for h in handles:
            h.close()

    timing["total"] = time.perf_counter() - t_start
    timing["true_evaluation"] = sum(r["eval_seconds"] for r in results)
    timing["surrogate_prediction"] = sum(r["predict_seconds"] for r in results)
    ds = surrogate.dataset
    return PosteriorChains(
        names=tuple(target.names), config=cfg, train_config=train_cfg, seed=seed,
        replicas=results, swaps=swaps, timing=timing, surrogate_log=list(surrogate.log),
        surrogate_checkpoint=surrogate.checkpoint(),
        dataset_theta=np.array(ds.theta).reshape(len(ds), len(target.bounds)),
        dataset_loglik=np.array(ds.loglik),
        truth_profile=getattr(target, "truth_profile", None),
        ladder=build_ladder(cfg.replicas, cfg.t_max).temperatures,
    )
