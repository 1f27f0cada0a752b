"""File formats: text grids, problem bundles and run directories."""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .engine import PosteriorChains, posterior_summary
from .diagnostics import rmse_sur
from .lem import GridTopography, LemConfig, ParameterVector, Problem, SimulationOutput
from .proposals import PriorBounds


def _fmt(x) -> str:
    return format(float(x), ".17g")


# ------------------------------------------------------------------ grids


def write_grid(path, topo: GridTopography):
    """Header ``rows cols cell_size sea_level`` then one line per row."""
    z = topo.elevation
    with open(path, "w") as fh:
        fh.write(f"{z.shape[0]} {z.shape[1]} {_fmt(topo.cell_size)} {_fmt(topo.sea_level)}\n")
        for row in z:
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_grid(path) -> GridTopography:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}: bad grid header")
        rows, cols = int(header[0]), int(header[1])
        z = np.loadtxt(fh, ndmin=2)
    if z.shape != (rows, cols):
        raise ValueError(f"{path}: header says {rows}x{cols}, body is {z.shape}")
    return GridTopography(z, float(header[2]), float(header[3]))


def write_pgm(path, topo, vmin=None, vmax=None):
    """Plain-text (P2) grayscale image of a grid, brightest = highest."""
    z = topo.elevation if isinstance(topo, GridTopography) else np.asarray(topo, float)
    lo = z.min() if vmin is None else vmin
    hi = z.max() if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    pix = np.clip(np.round(255 * (z - lo) / span), 0, 255).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{z.shape[1]} {z.shape[0]}\n255\n")
        for row in pix:
            fh.write(" ".join(map(str, row)) + "\n")


def write_sediment_csv(path, sediment, sites, times):
    sediment = np.asarray(sediment, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col"] + [f"t={_fmt(t)}" for t in times])
        for (r, c), vals in zip(sites, sediment):
            w.writerow([r, c] + [_fmt(v) for v in vals])


# --------------------------------------------------------------- problems


def _grid_dict(topo: GridTopography):
    return {"cell_size": topo.cell_size, "sea_level": topo.sea_level,
            "elevation": topo.elevation.tolist()}


def _grid_from(d) -> GridTopography:
    return GridTopography(np.array(d["elevation"], float), d["cell_size"], d["sea_level"])


def problem_to_dict(problem: Problem):
    cfg = problem.lem_config
    return {
        "name": problem.name,
        "kind": problem.kind,
        "true_parameters": problem.true_parameters.to_dict(),
        "prior_bounds": problem.prior_bounds.to_dict(),
        "lem_config": {"duration": cfg.duration, "time_step": cfg.time_step,
                       "n_checkpoints": cfg.n_checkpoints,
                       "sediment_sites": [list(s) for s in cfg.sediment_sites],
                       "boundary": cfg.boundary},
        "initial_topography": _grid_dict(problem.initial_topography),
        "ground_truth": {"final_topography": _grid_dict(problem.ground_truth.final_topography),
                         "sediment": problem.ground_truth.sediment.tolist()},
    }


def problem_from_dict(d) -> Problem:
    gt = d["ground_truth"]
    return Problem(
        name=d["name"], kind=d["kind"],
        initial_topography=_grid_from(d["initial_topography"]),
        ground_truth=SimulationOutput(_grid_from(gt["final_topography"]),
                                      np.array(gt["sediment"], float)),
        true_parameters=ParameterVector(**d["true_parameters"]),
        prior_bounds=PriorBounds.from_dict(d["prior_bounds"]),
        lem_config=LemConfig(**d["lem_config"]),
    )


def save_problem(path, problem: Problem):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)
        fh.write("\n")


def load_problem(path) -> Problem:
    with open(path) as fh:
        return problem_from_dict(json.load(fh))


# ------------------------------------------------------------------- runs


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _nan_stats(values):
    v = np.asarray(values, float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def run_summary(chains: PosteriorChains):
    true_ll, pseudo_ll = chains.shadow_pairs()
    n_true = sum(r["n_true"] for r in chains.replicas)
    n_pseudo = sum(r["n_pseudo"] for r in chains.replicas)
    return {
        "parameters": list(chains.names),
        "burn_in_index": chains.burn_in_index,
        "posterior": posterior_summary(chains),
        "rmse_elev": _nan_stats(chains.pooled("rmse_elev")),
        "rmse_sed": _nan_stats(chains.pooled("rmse_sed")),
        "rmse_sur": rmse_sur(true_ll, pseudo_ll) if true_ll.size else None,
        "shadow_pairs": int(true_ll.size),
        "true_evaluations": n_true,
        "pseudo_evaluations": n_pseudo,
        "acceptance_rate": [float(np.mean(r["accepted"])) for r in chains.replicas],
        "swap_acceptance": float(np.mean([s[3] for s in chains.swaps])) if chains.swaps else None,
        "wall_time": chains.timing["total"],
    }


def surrogate_dataset_rows(chains: PosteriorChains):
    """Raw and normalized surrogate training rows collected during the run."""
    norm = chains.surrogate_checkpoint["normalization"]
    lo, hi = norm["ell_min"], norm["ell_max"]
    bounds = PriorBounds.from_dict(norm["bounds"])
    x = np.clip(bounds.normalize(chains.dataset_theta), 0, 1) if len(chains.dataset_loglik) else chains.dataset_theta
    span = hi - lo if np.isfinite(hi - lo) and hi > lo else 1.0
    y = np.clip((chains.dataset_loglik - lo) / span, 0, 1)
    return x, y


def write_run(chains: PosteriorChains, outdir, manifest=None):
    out = Path(outdir)
    (out / "chains").mkdir(parents=True, exist_ok=True)
    names = list(chains.names)
    for i, r in enumerate(chains.replicas):
        rows = []
        for s in range(len(r["loglik"])):
            rows.append([s] + [_fmt(v) for v in r["theta"][s]] +
                        [_fmt(r["loglik"][s]), r["provenance"][s], int(r["accepted"][s]),
                         _fmt(r["temperature"][s]), _fmt(r["rmse_elev"][s]), _fmt(r["rmse_sed"][s])])
        _write_rows(out / "chains" / f"replica_{i}.csv",
                    ["sample"] + names + ["loglik", "provenance", "accepted", "temperature",
                                          "rmse_elev", "rmse_sed"], rows)
    _write_rows(out / "swaps.csv", ["sync", "replica_i", "replica_j", "accepted", "probability"],
                [[s[0], s[1], s[2], int(s[3]), _fmt(s[4])] for s in chains.swaps])
    _write_rows(out / "timing.csv", ["phase", "seconds"],
                [[k, _fmt(v)] for k, v in chains.timing.items()])
    _write_rows(out / "surrogate_log.csv", ["interval", "dataset_size", "mode", "mse", "wall_time"],
                [[e["interval"], e["dataset_size"], e["mode"], _fmt(e["mse"]), _fmt(e["wall_time"])]
                 for e in chains.surrogate_log])
    x, y = surrogate_dataset_rows(chains)
    _write_rows(out / "surrogate_data.csv",
                names + ["loglik"] + [f"x_{n}" for n in names] + ["target"],
                [[_fmt(v) for v in chains.dataset_theta[k]] + [_fmt(chains.dataset_loglik[k])] +
                 [_fmt(v) for v in x[k]] + [_fmt(y[k])] for k in range(len(y))])
    with open(out / "surrogate.json", "w") as fh:
        json.dump(chains.surrogate_checkpoint, fh, indent=1)
    with open(out / "summary.json", "w") as fh:
        json.dump(run_summary(chains), fh, indent=1)
    np.savez_compressed(out / "predictions.npz",
                        profile=np.stack([r["profile"] for r in chains.replicas]),
                        sediment=np.stack([r["sediment"] for r in chains.replicas]),
                        truth_profile=(chains.truth_profile if chains.truth_profile is not None
                                       else np.empty(0)),
                        burn_in_index=chains.burn_in_index)
    if manifest is not None:
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)


def read_run(outdir):
    """Load the chain tables of a run directory.

    Returns a dict with ``names``, ``burn_in_index``, ``theta`` (list of
    per-replica arrays), ``rmse_elev``, ``rmse_sed`` and, when present,
    the prediction arrays.
    """
    out = Path(outdir)
    files = sorted((out / "chains").glob("replica_*.csv"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no chain files under {out / 'chains'}")
    with open(out / "summary.json") as fh:
        summary = json.load(fh)
    names = summary["parameters"]
    theta, rmse_e, rmse_s, prov = [], [], [], []
    for f in files:
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        theta.append(np.array([[float(r[n]) for n in names] for r in rows]).reshape(len(rows), len(names)))
        rmse_e.append(np.array([float(r["rmse_elev"]) for r in rows]))
        rmse_s.append(np.array([float(r["rmse_sed"]) for r in rows]))
        prov.append([r["provenance"] for r in rows])
    res = {"names": names, "burn_in_index": summary["burn_in_index"], "theta": theta,
           "rmse_elev": rmse_e, "rmse_sed": rmse_s, "provenance": prov, "summary": summary}
    pred = out / "predictions.npz"
    if pred.exists():
        with np.load(pred) as z:
            res["profile"] = z["profile"]
            res["truth_profile"] = z["truth_profile"]
    return res


def ensure_writable(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"{path} is not writable")
    return path
