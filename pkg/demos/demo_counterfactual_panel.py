"""End to end on a synthetic confounded panel: simulate, weight, complete, contrast.

Generates the nonlinear outcome design under confounded assignment,
estimates SCAD propensities, completes the counterfactual tensor with and
without covariate assistance, fits the parametric baseline, and compares
recovery errors and treatment-effect estimates against the materialized
truth.
"""
import warnings

import numpy as np

from tmsm import AteQuery, SimDesign, ate, generate, normalized_error
from tmsm.simulate import ExperimentSettings, design_ranks, run_experiment

warnings.filterwarnings("ignore")

design = SimDesign(outcome="M2", assignment="A1", n_subjects=200,
                   n_times=10, k=5, seed=11, reps=3)
print(f"design: {design.outcome}+{design.assignment}, N={design.n_subjects}, "
      f"T={design.n_times}, k={design.k}; true ranks {design_ranks(design)}")

rows = run_experiment([design], ["co-tucker", "tucker", "hrmsm"],
                      ExperimentSettings(max_iters=600))

truth = next(r["value"] for r in rows if r["metric"] == "ate_true")
print(f"true always-vs-never ATE (from the materialized tensor): {truth:.3f}\n")

for method in ("co-tucker", "tucker", "hrmsm"):
    l2 = np.median([r["value"] for r in rows
                    if r["method"] == method and r["metric"] == "l2_sq"])
    ate_err = np.median([r["value"] for r in rows
                         if r["method"] == method and r["metric"] == "ate_abs_err"])
    print(f"{method:10s} median l2 {l2:8.4f}   median |ATE error| {ate_err:6.3f}")

print("\nThe covariate-assisted completion recovers the nonlinear outcome "
      "surface the parametric baseline cannot represent, while the vanilla "
      "completion pays for estimating every subject loading freely.")
