"""Duration bias: train with and without conditioning on the duration group."""

import numpy as np

from tpmwatch.data import SyntheticSpec, generate_synthetic
from tpmwatch.deconfound import conditional_distribution, predict_deconfounded, train_deconfounded
from tpmwatch.metrics import mae, xauc
from tpmwatch.net import MultiHeadNet, NetConfig
from tpmwatch.ranks import build_balanced_tree, build_scale
from tpmwatch.tpm import TrainConfig, predict, train

# duration shifts both the features and the watch time
ds = generate_synthetic(SyntheticSpec(n=8000, confound_x=0.5, confound_t=0.5, seed=1))
tr, te = ds.split(0.25, seed=0)
print("corr(duration, watch time) =", round(np.corrcoef(ds.duration, ds.watch_time)[0, 1], 3))

tree = build_balanced_tree(build_scale(tr.watch_time, 16))
cfg = TrainConfig(epochs=15, optimizer={"lr": 3e-3})
netcfg = NetConfig(input_dim=ds.input_dim, hidden_dims=(32, 32), num_heads=tree.num_heads)

net = MultiHeadNet(netcfg)
train(tr.features, tr.watch_time, tree, net, cfg)
plain = predict(tree, net, te.features).expectation

model, _ = train_deconfounded(tr.features, tr.watch_time, tr.duration, tree, netcfg, cfg, num_groups=8)
cond, _ = conditional_distribution(model, te.features, confounder=te.duration)
do = predict_deconfounded(model, te.features, "do")

print(f"\n{'predictor':<28}{'MAE':>8}{'XAUC':>8}")
for name, p in [("plain TPM", plain), ("deconfounded, conditional", cond),
                ("deconfounded, do (prior)", do)]:
    print(f"{name:<28}{mae(p, te.watch_time):>8.3f}{xauc(p, te.watch_time):>8.4f}")

# the do-prediction averages the group models under the group prior, so it
# no longer moves with the duration of the item being scored
print("\ngroup prior:", np.round(model.partition.prior, 3))
