"""Compare plain parallel tempering with the surrogate-assisted variant.

Usage: python3 demos/sapt_vs_pt.py [grid] [samples]

Both runs share the problem, seed and proposal. ``slow_ms`` pads each true
model evaluation so that the saving from surrogate calls is visible even
on a small grid.
"""
import sys

from sapt_lem import io
from sapt_lem.engine import EnsembleConfig, posterior_summary, run
from sapt_lem.lem import make_synthetic_problem


def main(grid=16, samples=300):
    problem = make_synthetic_problem("margin", int(grid), seed=0)
    truth = problem.true_parameters.to_dict()
    for label, s_prob in (("pt", 0.0), ("sapt", 0.6)):
        cfg = EnsembleConfig(replicas=4, samples=int(samples), s_prob=s_prob, surrogate_interval=0.1)
        chains = run(problem, cfg, seed=1, slow_ms=10.0)
        summ = io.run_summary(chains)
        print(f"\n[{label}] wall {summ['wall_time']:.1f} s  true evals {summ['true_evaluations']}  "
              f"pseudo evals {summ['pseudo_evaluations']}  rmse_elev {summ['rmse_elev']['mean']:.2f}"
              + (f"  rmse_sur {summ['rmse_sur']:.4g}" if summ["rmse_sur"] is not None else ""))
        for name, s in posterior_summary(chains).items():
            print(f"  {name:12s} true {truth[name]:<10.4g} mean {s['mean']:<10.4g} "
                  f"90% [{s['q05']:.4g}, {s['q95']:.4g}]")


if __name__ == "__main__":
    main(*sys.argv[1:])
