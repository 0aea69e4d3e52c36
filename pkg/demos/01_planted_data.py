"""
Planted set-wise click data
===========================

Generates a small synthetic dataset, looks at one request, and checks how
well the generator's own click probabilities rank the observed clicks.
Clicks depend on how strong the *other* exposed items are, which is the
signal a set-wise model can pick up and a point-wise model cannot.
"""

import tempfile
from pathlib import Path

import numpy as np

from homer.data import read_dataset, write_dataset
from homer.metrics import auc
from homer.synth import GenConfig, generate, oracle_click_prob

gen = GenConfig(n_requests=3000, k_max=20, seed=0)
ds = generate(gen)
print(f"{len(ds.samples)} requests, {len(ds.schema.fields)} feature fields")

r = ds.samples[-1]
print(f"\nrequest {r.request_id}: {r.n_behaviors} past behaviours, {r.n_items} candidates")
print("exposed:", r.y_exp.tolist())
print("clicked:", r.y_clk.tolist())
print("oracle p(click):", np.round(oracle_click_prob(r, gen), 3).tolist())

# how well can anyone do? rank exposed items by the true click probability
p = np.concatenate([ds.latent[s.request_id].p_click[s.y_exp == 1] for s in ds.samples])
y = np.concatenate([s.y_clk[s.y_exp == 1] for s in ds.samples])
print(f"\noracle AUC on exposed items: {auc(p, y):.4f}  (click rate {y.mean():.3f})")

# same probabilities with the competition term switched off
flat = generate(gen.with_(gamma=0.0))
p0 = np.concatenate([flat.latent[s.request_id].p_click[s.y_exp == 1] for s in flat.samples])
y0 = np.concatenate([s.y_clk[s.y_exp == 1] for s in flat.samples])
print(f"oracle AUC without competition: {auc(p0, y0):.4f}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "data.bin"
    digest = write_dataset(path, ds.samples, ds.schema)
    schema, back = read_dataset(path)
    print(f"\nwrote {path.stat().st_size / 1e6:.1f} MB, sha256 {digest[:16]}..., round trip ok: {back == ds.samples}")
