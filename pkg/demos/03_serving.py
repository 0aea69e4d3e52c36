"""
Set-wise serving and where the savings come from
================================================

A request is scored by encoding the user's behaviour sequence once and then
decoding all candidates together, in shards of at most 300 items. Point-wise
serving re-encodes the sequence for every candidate.
"""

import numpy as np

from homer.model import HoMer, ModelConfig
from homer.serving import bench, predict_request, savings_ratio, serving_flops, shard_items
from homer.synth import GenConfig, generate

schema = generate(GenConfig(n_requests=10)).schema
model = HoMer(ModelConfig(), schema)
params = model.init_params()

print("shards for K=650:", shard_items(650).lengths())

print("\nanalytic cost with a 512-behaviour sequence")
for k in (1, 2, 10, 100, 300):
    print(f"  K={k:3d}  set-wise {serving_flops(model, 512, k) / 1e6:8.2f} MFLOPs   "
          f"savings x{savings_ratio(model, 512, k):6.1f}")

# the saving needs a sequence worth sharing; with none, cross-item attention is pure overhead
print(f"\nsavings at K=100 with N=0: x{savings_ratio(model, 0, 100):.2f}, N=16: x{savings_ratio(model, 16, 100):.2f}")

ds = generate(GenConfig(n_users=10, n_requests=600, n_max=512, k_max=40, seed=1))
samples = [s for s in ds.samples if s.n_behaviors >= 64][:30]
pred = predict_request(model, params, samples[0])
print(f"\nrequest with K={samples[0].n_items}: {pred.invocations} decoder invocation(s), "
      f"first p(click) {np.round(pred.p_clk[:3].astype(float), 4).tolist()}")

report = bench(model, params, samples, edges=(4, 8, 16, 40))
print()
print(report.to_csv())
