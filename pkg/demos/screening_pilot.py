"""From a pilot screen to a follow-up design.

A synthetic two-replicate pilot screen stands in for real plate data.
We turn it into z-scores, fit an empirical null, build a semi-synthetic
model with the fitted null and signal amplitude, and then ask how many
follow-up measurements SMART needs to match the error rates distilled
sensing happens to reach.
"""

import csv
import tempfile
from pathlib import Path

import numpy as np

from smartseq.ingest import build_semisynthetic_model, compute_z_scores, fit_empirical_null, load_delimited_table
from smartseq.simulate import run_ds_matched_comparison

rng = np.random.default_rng(7)
p, pi, amp = 20_000, 0.01, 1.5
signal = rng.random(p) < pi
reps = 0.1 + amp * signal[:, None] + 0.8 * rng.standard_normal((p, 2))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "pilot.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location_id", "rep1", "rep2"])
        w.writerows([f"well{i}", *map(repr, row)] for i, row in enumerate(reps.tolist()))
    data = load_delimited_table(path)

z = compute_z_scores(data)
fit = fit_empirical_null(z)
print(f"empirical null: mean {fit.mu0_hat:.3f}, sd {fit.sigma0_hat:.3f}; "
      f"pi_hat {fit.pi_hat:.4f} (true {signal.mean():.4f}); signal amplitude {fit.mu_signal_hat:.2f}")

model, at_floor = build_semisynthetic_model(fit, p=p)
comp = run_ds_matched_comparison(model, ds_stages=10, replications=10, seed=11)
if comp.aborted:
    raise SystemExit(f"comparison aborted: {comp.flag}")
print(f"DS     FPR {comp.ds.fpr:.3f}  MDR {comp.ds.mdr:.3f}  observations {comp.ds.total_obs:.0f}")
print(f"SMART  FPR {comp.smart.fpr:.3f}  MDR {comp.smart.mdr:.3f}  observations {comp.smart.total_obs:.0f}")
print(f"SMART needs {comp.observation_ratio:.0%} of the DS measurement budget")
