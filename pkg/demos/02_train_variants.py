"""
Training HoMer and its ablations
================================

One epoch on planted data for each model variant. The point-wise variant is
deepened until its FLOPs per request match the full model, so a gap in AUC
is not just a matter of compute.

This runs on a 10k-request dataset in under a minute. The acceptance
suite uses 50k requests and three seeds.
"""

import logging

from homer.ablation import ABLATION_MODEL, ABLATION_TRAIN, run_ablation
from homer.synth import GenConfig, generate

logging.basicConfig(level=logging.INFO, format="%(message)s")

ds = generate(GenConfig(n_requests=10000, k_max=20, seed=0))
table = run_ablation((ds.schema, ds.samples), ABLATION_MODEL, ABLATION_TRAIN, seeds=(0,))

print()
print(f"{'variant':15s} {'AUC':>7s} {'logloss':>8s} {'params':>7s} {'MFLOPs/req':>11s}")
for row in table.rows:
    print(f"{row.variant:15s} {row.auc_clk:7.4f} {row.logloss_clk:8.4f} {row.params:7d} "
          f"{row.gflops_per_request * 1e3:11.3f}")
