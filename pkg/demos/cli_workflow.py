"""Command-line workflow: write a CSV and a config, then estimate and diagnose.

Equivalent shell session::

    drsmd estimate --config run.ini --format text
    drsmd identify --config run.ini --format text
    drsmd simulate --config run.ini --reps 2 --format csv

    python demos/cli_workflow.py
"""

import tempfile
from pathlib import Path

import numpy as np

from drsmd.cli import main, write_csv
from drsmd.simulation import DGPConfig, generate_benchmark

root = Path(tempfile.mkdtemp(prefix="drsmd-demo-"))
write_csv(generate_benchmark(DGPConfig(n=1500, q_X=3), np.random.default_rng(1)), root / "sample.csv")
(root / "run.ini").write_text("""\
[run]
input = sample.csv
seed = 11

[model]
outcome = y
treatment = W
instruments = Z1
controls = x1, x2, x3
interaction_covariates = x1

[kernel]
standardize_instruments = false

[estimator.debiased]
tag = D-RSMD
instruments = Z1

[estimator.robinson]
tag = RSMD
instruments = Z1

[estimator.gmm]
tag = GMM
instruments = Z1, Z1*x1

[simulate]
n = 500
q_X = 3
""")
print(f"working directory: {root}\n")
for argv in (["estimate", "--format", "text"], ["identify", "--format", "text"],
             ["simulate", "--reps", "2", "--format", "csv"]):
    print("$ drsmd", " ".join(argv), "--config run.ini")
    code = main(argv + ["--config", str(root / "run.ini")])
    print(f"[exit {code}]\n")
