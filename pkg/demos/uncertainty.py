"""The variance term: larger alpha2 gives tighter leaf distributions."""

import numpy as np

from tpmwatch.data import SyntheticSpec, generate_synthetic
from tpmwatch.metrics import mae
from tpmwatch.net import MultiHeadNet, NetConfig
from tpmwatch.ranks import build_balanced_tree, build_scale
from tpmwatch.tpm import LossWeights, TrainConfig, predict, train

ds = generate_synthetic(SyntheticSpec(n=6000, noise=0.5, hetero=0.9, noise_kind="uniform", seed=3))
tr, te = ds.split(0.25, seed=0)
tree = build_balanced_tree(build_scale(tr.watch_time, 32))

dists = {}
for alpha2 in (0.0, 0.1, 1.0, 10.0):
    net = MultiHeadNet(NetConfig(input_dim=ds.input_dim, hidden_dims=(32, 32), num_heads=tree.num_heads))
    cfg = TrainConfig(epochs=15, weights=LossWeights(1.0, alpha2, 1.0), optimizer={"lr": 3e-3})
    train(tr.features, tr.watch_time, tree, net, cfg)
    dist = dists[alpha2] = predict(tree, net, te.features)
    print(f"alpha2={alpha2:<5} mean std {np.mean(dist.std):7.3f}   MAE {mae(dist.expectation, te.watch_time):.3f}")

# with a light variance penalty the per-sample std follows the size of the errors
dist = dists[0.1]
abs_err = np.abs(dist.expectation - te.watch_time)
print("\ncorr(predicted std, |error|) at alpha2=0.1:", round(np.corrcoef(dist.std, abs_err)[0, 1], 3))
