"""Monte Carlo comparison of the estimators on the benchmark design.

Runs the default estimator line-up and prints Med.Bias, MAD, Med.SE and the
5% rejection rate. The defaults finish in a few minutes on one core; raise
--reps and --q-x for the high-dimensional comparison.

    python demos/monte_carlo.py --reps 100 --q-x 3 --workers 2
"""

import argparse
import warnings

from drsmd.simulation import DGPConfig, benchmark_specs, metrics_to_text, run_experiment

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--reps", type=int, default=100)
parser.add_argument("--n", type=int, default=3000)
parser.add_argument("--q-x", type=int, default=3)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--workers", type=int, default=1)
args = parser.parse_args()

cfg = DGPConfig(n=args.n, q_X=args.q_x)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    rows = run_experiment(cfg, benchmark_specs(cfg.q_X), reps=args.reps, seed=args.seed, workers=args.workers)
print(f"n = {cfg.n}, q_X = {cfg.q_X}, reps = {args.reps}")
print(metrics_to_text(rows))
