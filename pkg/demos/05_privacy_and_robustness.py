"""Privacy- and robustness-aware condensation variants and their degeneracy ladders.

Calibrates the Gaussian mechanism, runs the private variants (noised feature
embeddings, noised clipped gradients), and the robust ones (adversarial outer
loss, the ridge minimax game, curvature penalties). Setting sigma or eps to 0
reproduces the non-private / non-robust objective sequences exactly.
"""
import numpy as np

from dckit import (
    KernelSpec,
    LabeledDataset,
    MethodConfig,
    SyntheticDataset,
    condense,
    dp_noise_calibration,
    gaussian_spec,
)

rng = np.random.default_rng(3)
xt = rng.uniform(0, 1, (24, 3))
yt = np.array([0] * 12 + [1] * 12)
t = LabeledDataset(xt, yt, 2)
s0 = SyntheticDataset(rng.uniform(0, 1, (4, 3)), np.array([0, 0, 1, 1]), per_class_size=2, origin="demo")

print("== Gaussian mechanism calibration ==")
for eps in (0.5, 1.0, 2.0):
    print(f"  eps={eps:3.1f} delta=1e-5 sensitivity=1  ->  sigma = {dp_noise_calibration(eps, 1e-5, 1.0):.4f}")

print("\n== DP-MERF: noise added once to the fixed mean feature embedding of T ==")
rff = KernelSpec("random_feature", scale=1.0, feature_dim=128, seed=7)
for sigma in (0.0, 0.05, 0.2):
    cfg = MethodConfig(method="mmd", outer_steps=40, outer_lr=0.3, kernel=rff, seed=5,
                       variants={"dp_merf": {"sigma": sigma}})
    _, log = condense(cfg, t, s0)
    print(f"  sigma={sigma:4.2f}: final objective {log.objectives()[-1]:.6f}")
plain = condense(MethodConfig(method="mmd", outer_steps=40, outer_lr=0.3, kernel=rff, seed=5), t, s0)
noiseless = condense(MethodConfig(method="mmd", outer_steps=40, outer_lr=0.3, kernel=rff, seed=5,
                                  variants={"dp_merf": {"sigma": 0.0}}), t, s0)
print(f"  sigma=0 ladder byte-identical to plain mmd: "
      f"{np.array_equal(plain[0].features, noiseless[0].features)}")

print("\n== private gradient matching: clip to norm 1, fresh noise each refresh ==")
cfg = MethodConfig(method="gm", outer_steps=12, outer_lr=0.05, ensemble=2, hidden=(8,),
                   activation="tanh", refresh=4, seed=6, variants={"dp_grad": {"sigma": 0.3}})
_, log = condense(cfg, t, s0)
print(f"  bookkeeping: {log.meta['dp_grad']}")

print("\n== robustness ladders ==")
small = SyntheticDataset(xt[[0, 12]], yt[[0, 12]], per_class_size=1, origin="demo")
for eps in (0.0, 0.1):
    cfg = MethodConfig(method="robdc", outer_steps=3, outer_lr=0.1, hidden=(6,), activation="tanh",
                       inner_steps=3, inner_lr=0.1, seed=8,
                       variants={"robust_outer": {"eps": eps, "steps": 4}})
    _, log = condense(cfg, t, small)
    print(f"  robdc eps={eps}: objectives {[round(float(v), 4) for v in log.objectives()]}")
bptt = condense(MethodConfig(method="bptt", outer_steps=3, outer_lr=0.1, hidden=(6,),
                             activation="tanh", inner_steps=3, inner_lr=0.1, seed=8), t, small)
print(f"  bptt (no attack):   objectives {[round(float(v), 4) for v in bptt[1].objectives()]}")

print("\n== RidgeDC minimax and curvature-regularized gradient matching ==")
for eps in (0.0, 0.1):
    cfg = MethodConfig(method="krr", outer_steps=10, outer_lr=0.2, kernel=gaussian_spec(1.0),
                       ridge_lambda=1e-3, seed=2, variants={"ridge_robust": {"eps": eps, "steps": 3}})
    _, log = condense(cfg, t, s0)
    print(f"  ridge_robust eps={eps}: final loss {log.objectives()[-1]:.6f}")
cfg = MethodConfig(method="gm", outer_steps=3, outer_lr=0.02, ensemble=1, hidden=(6,),
                   activation="tanh", curv_iters=5, seed=9, variants={"curvature": {"rho": 0.05}})
_, log = condense(cfg, t, small)
print(f"  gm + curvature penalty: objectives {[round(float(v), 4) for v in log.objectives()]}")
