"""Command-line interface: generate problems, run ensembles, report.

Exit codes: 0 on success, 2 for configuration errors, 3 for I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import cross_section, psrf
from .engine import EnsembleConfig, run
from .errors import ConfigError, EmptyDataset, InsufficientRuns, IoError
from .lem import make_synthetic_problem, simulate
from .surrogate import BATCH_RATIOS, TrainConfig, surrogate_study

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
MIN_STUDY_ROWS = 100


@dataclass
class RunManifest:
    """Everything needed to reproduce one run.

    ``problem`` is either a path to a problem bundle or a generator description
    ``{"kind": ..., "grid": ..., "seed": ...}``.
    """

    problem: object = field(default_factory=lambda: {"kind": "mountain", "grid": 32, "seed": 0})
    ensemble: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "run"
    mode: str = "sapt"
    execution: str = "sequential"
    slow_ms: float = 0.0

    def __post_init__(self):
        if self.mode not in ("pt", "sapt"):
            raise ConfigError("mode must be 'pt' or 'sapt'")
        if self.execution not in ("sequential", "parallel"):
            raise ConfigError("execution must be 'sequential' or 'parallel'")
        if self.slow_ms < 0:
            raise ConfigError("slow_ms must be >= 0")
        if self.mode == "pt":
            self.ensemble = {**self.ensemble, "s_prob": 0.0}
        # validate eagerly so bad manifests fail before any work
        self.ensemble_config()
        self.train_config()

    def ensemble_config(self) -> EnsembleConfig:
        try:
            return EnsembleConfig(**self.ensemble)
        except TypeError as exc:
            raise ConfigError(f"bad ensemble settings: {exc}") from None

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.train)
        except TypeError as exc:
            raise ConfigError(f"bad training settings: {exc}") from None

    def load_problem(self):
        if isinstance(self.problem, (str, Path)):
            return io.load_problem(self.problem)
        spec = dict(self.problem)
        return make_synthetic_problem(spec.get("kind", "mountain"), spec.get("grid", 32),
                                      spec.get("seed", 0))

    def to_dict(self):
        return {"problem": str(self.problem) if isinstance(self.problem, Path) else self.problem,
                "ensemble": self.ensemble_config().to_dict(), "train": self.train_config().to_dict(),
                "seed": self.seed, "out": self.out, "mode": self.mode,
                "execution": self.execution, "slow_ms": self.slow_ms}

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"problem", "ensemble", "train", "seed", "out", "mode", "execution", "slow_ms"}
        if unknown:
            raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(d)


# ---------------------------------------------------------------- commands


def cmd_generate(kind, grid_size, seed, out_path, stream=None):
    stream = stream or sys.stdout
    problem = make_synthetic_problem(kind, grid_size, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.save_problem(out_path, problem)
    t0 = time.perf_counter()
    simulate(problem.initial_topography, problem.true_parameters, problem.lem_config)
    per_sim = time.perf_counter() - t0
    default = EnsembleConfig()
    print(f"wrote {out_path}", file=stream)
    for name, value in problem.true_parameters.to_dict().items():
        lo, hi = problem.prior_bounds.to_dict()[name]
        print(f"  {name:12s} true={value:<10.6g} prior=[{lo:g}, {hi:g}]", file=stream)
    est = per_sim * default.replicas * default.samples
    print(f"forward model: {per_sim * 1e3:.1f} ms per run; "
          f"default PT ensemble ({default.replicas}x{default.samples}) ~{est / 60:.1f} min", file=stream)
    return problem


def cmd_run(manifest: RunManifest, stream=None):
    stream = stream or sys.stdout
    out = io.ensure_writable(manifest.out)
    problem = manifest.load_problem()
    chains = run(problem, manifest.ensemble_config(), manifest.train_config(), seed=manifest.seed,
                 execution=manifest.execution, slow_ms=manifest.slow_ms)
    io.write_run(chains, out, manifest.to_dict())
    s = io.run_summary(chains)
    print(f"run finished in {s['wall_time']:.1f} s -> {out}", file=stream)
    for name, stats in s["posterior"].items():
        print(f"  {name:12s} mean={stats['mean']:<10.6g} 90% CI=[{stats['q05']:.6g}, {stats['q95']:.6g}]",
              file=stream)
    return chains


def _pooled_post_burn(run_data):
    b = run_data["burn_in_index"]
    return np.concatenate([t[b:] for t in run_data["theta"]], axis=0)


def cmd_diagnose(run_dirs, out_dir, stream=None):
    """PSRF across runs, RMSE report and cross-section of predictions.

    Each run contributes one chain: its post-burn-in samples pooled over
    replicas in replica order.
    """
    stream = stream or sys.stdout
    if len(run_dirs) < 2:
        raise InsufficientRuns("PSRF needs at least two run directories")
    runs = [io.read_run(d) for d in run_dirs]
    names = runs[0]["names"]
    if any(r["names"] != names for r in runs):
        raise ConfigError("runs sample different parameter sets")
    chains = [_pooled_post_burn(r) for r in runs]
    length = min(len(c) for c in chains)
    report = psrf(np.stack([c[:length] for c in chains]), names)

    out = io.ensure_writable(out_dir)
    with open(out / "psrf.json", "w") as fh:
        json.dump({**report.to_dict(), "runs": [str(d) for d in run_dirs], "chain_length": length},
                  fh, indent=1)

    rmse = {}
    for d, r in zip(run_dirs, runs):
        b = r["burn_in_index"]
        e = np.concatenate([x[b:] for x in r["rmse_elev"]])
        s = np.concatenate([x[b:] for x in r["rmse_sed"]])
        e, s = e[np.isfinite(e)], s[np.isfinite(s)]
        rmse[str(d)] = {"rmse_elev_mean": float(e.mean()) if e.size else None,
                        "rmse_elev_std": float(e.std()) if e.size else None,
                        "rmse_sed_mean": float(s.mean()) if s.size else None,
                        "rmse_sed_std": float(s.std()) if s.size else None,
                        "rmse_sur": r["summary"].get("rmse_sur"),
                        "wall_time": r["summary"].get("wall_time")}
    with open(out / "rmse_report.json", "w") as fh:
        json.dump(rmse, fh, indent=1)

    with_profiles = [r for r in runs if "profile" in r and r["truth_profile"].size]
    if with_profiles:
        truth = with_profiles[0]["truth_profile"]
        preds = np.concatenate([r["profile"][:, r["burn_in_index"]:].reshape(-1, truth.size)
                                for r in with_profiles])
        rows = cross_section(truth, preds)
        with open(out / "cross_section.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["col", "truth", "pred_mean", "pred_std"])
            w.writerows([i, io._fmt(t), io._fmt(m), io._fmt(s)] for i, t, m, s in rows)

    print("PSRF " + " ".join(f"{n}={v:.4f}" for n, v in zip(names, report.scores)) +
          f" mean={report.mean:.4f}", file=stream)
    return report


def load_study_dataset(path):
    """Read ``x_*`` inputs and ``target`` from a surrogate dataset CSV."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"{path} does not exist")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise IoError(f"{path} has no data rows")
    xcols = [c for c in rows[0] if c.startswith("x_")]
    if not xcols or "target" not in rows[0]:
        raise IoError(f"{path} lacks x_* / target columns")
    x = np.array([[float(r[c]) for c in xcols] for r in rows])
    y = np.array([float(r["target"]) for r in rows])
    return x, y


def cmd_surrogate_eval(dataset_csv, train_cfg=None, out_path=None, seed=0, max_rows=None,
                       ratios=BATCH_RATIOS, stream=None):
    stream = stream or sys.stdout
    x, y = load_study_dataset(dataset_csv)
    if max_rows is not None:
        x, y = x[:max_rows], y[:max_rows]
    if len(y) < MIN_STUDY_ROWS:
        raise ConfigError(f"need at least {MIN_STUDY_ROWS} rows, got {len(y)}")
    rows = surrogate_study(x, y, train_cfg, ratios=ratios, seed=seed)
    header = ["optimizer", "mode", "batch_ratio", "intervals", "mse", "wall_time"]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([r[k] for k in header] for r in rows)
    print(f"{'optimizer':9s} {'mode':18s} {'ratio':>5s} {'mse':>10s} {'time[s]':>8s}", file=stream)
    for r in rows:
        print(f"{r['optimizer']:9s} {r['mode']:18s} {r['batch_ratio']:5.1f} {r['mse']:10.5f} "
              f"{r['wall_time']:8.3f}", file=stream)
    return rows


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="sapt-lem", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a synthetic problem bundle")
    g.add_argument("--kind", choices=["mountain", "margin"], default="mountain")
    g.add_argument("--grid", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="problem.json")

    r = sub.add_parser("run", help="sample the posterior")
    r.add_argument("--config", help="run manifest JSON")
    r.add_argument("--problem", help="problem bundle JSON (overrides the manifest)")
    r.add_argument("--kind", choices=["mountain", "margin"],
                   help="generate the problem on the fly instead of loading a bundle")
    r.add_argument("--grid", type=int, default=32)
    r.add_argument("--replicas", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--swap-interval", type=int)
    r.add_argument("--surrogate-interval", "--psi", dest="surrogate_interval", type=float)
    r.add_argument("--s-prob", type=float)
    r.add_argument("--t-max", type=float)
    r.add_argument("--proposal", choices=["rw", "arw"])
    r.add_argument("--optimizer", choices=["adam", "sgd"])
    r.add_argument("--train-mode", choices=["transfer_and_train", "from_scratch"])
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["pt", "sapt"])
    r.add_argument("--execution", choices=["parallel", "sequential"])
    r.add_argument("--slow-ms", type=float)
    r.add_argument("--out")

    d = sub.add_parser("diagnose", help="PSRF, RMSE and cross-section reports")
    d.add_argument("runs", nargs="+")
    d.add_argument("--out", default="diagnostics")

    s = sub.add_parser("surrogate-eval", help="optimizer / training-mode / batch-ratio study")
    s.add_argument("dataset")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--max-rows", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="write the report as CSV")
    return p


_ENSEMBLE_FLAGS = ("replicas", "samples", "swap_interval", "surrogate_interval", "s_prob", "t_max", "proposal")


def manifest_from_args(args) -> RunManifest:
    base = RunManifest.load(args.config).to_dict() if args.config else {}
    ens = dict(base.get("ensemble", {}))
    for key in _ENSEMBLE_FLAGS:
        if getattr(args, key) is not None:
            ens[key] = getattr(args, key)
    train = dict(base.get("train", {}))
    if args.optimizer is not None:
        train["optimizer"] = args.optimizer
    if args.train_mode is not None:
        train["mode"] = args.train_mode
    d = {**base, "ensemble": ens, "train": train}
    if args.problem is not None:
        d["problem"] = args.problem
    elif args.kind is not None:
        d["problem"] = {"kind": args.kind, "grid": args.grid, "seed": 0}
    for key in ("seed", "mode", "execution", "slow_ms", "out"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    return RunManifest.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            cmd_generate(args.kind, args.grid, args.seed, args.out)
        elif args.command == "run":
            cmd_run(manifest_from_args(args))
        elif args.command == "diagnose":
            cmd_diagnose(args.runs, args.out)
        elif args.command == "surrogate-eval":
            cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, hidden_dim=args.hidden)
            cmd_surrogate_eval(args.dataset, cfg, args.out, seed=args.seed, max_rows=args.max_rows)
    except (OSError, EmptyDataset) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
