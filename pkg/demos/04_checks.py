"""
Numerical checks
================

Whole-model gradients against finite differences, and the symmetry a set
model must respect: reordering the candidates only reorders the scores.
"""

import numpy as np

from homer.data import make_batch
from homer.gradcheck import grad_check
from homer.model import HoMer, ModelConfig
from homer.synth import GenConfig, generate
from homer.train import batch_losses

ds = generate(GenConfig(n_users=2, n_requests=4, k_min=2, k_max=4, n_max=6, seed=0))
model = HoMer(ModelConfig(L=1, M=1, d_embed=4, d_token=8, n_max=6, dtype="float64"), ds.schema)
params = model.init_params()
batch = make_batch(ds.samples)
err = grad_check(lambda P: batch_losses(model, batch, P, 1.0)[2], params, n_coords=200)
print(f"max relative gradient error over 200 coordinates: {err:.2e}")

r = max(ds.samples, key=lambda s: s.n_items)
perm = np.random.default_rng(0).permutation(r.n_items)
before = model.forward(make_batch([r]), params).p_clk
after = model.forward(make_batch([r.select_items(perm)]), params).p_clk
print("permutation:", perm.tolist())
print("scores follow the items:", np.allclose(after, before[perm], rtol=1e-12))
