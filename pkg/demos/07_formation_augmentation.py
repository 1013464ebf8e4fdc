"""Formation operators and siamese augmentation on toy image batches.

Multi-formation expands channels by the formation factor via upsampled
sub-tiles; channel-wise multi-formation quadruples the batch through per-sample
color mixes; siamese augmentation applies one identical draw to real and
synthetic batches so matching objectives stay aligned.
"""
import numpy as np

from dckit import ImageBatch, LabeledDataset, MethodConfig, SyntheticDataset, condense
from dckit.augment import channel_multi_formation, multi_formation, siamese_augment

rng = np.random.default_rng(5)
x = ImageBatch(rng.uniform(0, 1, (2, 3, 8, 8)))

print("== multi-formation: (b, c, h, w) -> (b, c(r^2+1), h, w) ==")
for r in (1, 2, 4):
    out = multi_formation(x, r)
    print(f"  r={r}: {x.shape} -> {out.shape}")
a, b = ImageBatch(rng.uniform(0, 1, (1, 1, 4, 4))), ImageBatch(rng.uniform(0, 1, (1, 1, 4, 4)))
combo = ImageBatch(0.5 * a.data + 0.5 * b.data)
gap = np.max(np.abs(multi_formation(combo, 2).data
                    - 0.5 * (multi_formation(a, 2).data + multi_formation(b, 2).data)))
print(f"  linear operator: superposition gap {gap:.1e}")

print("\n== channel-wise multi-formation: batch grows 4x ==")
out = channel_multi_formation(x, seed=1)
print(f"  {x.shape} -> {out.shape}; first rows are the originals: "
      f"{np.array_equal(out.data[:2], x.data)}")

print("\n== siamese augmentation: one draw, both batches ==")
t_batch = ImageBatch(rng.uniform(0, 1, (4, 1, 8, 8)))
s_batch = ImageBatch(rng.uniform(0, 1, (2, 1, 8, 8)))
for op in ("shift", "flip", "scale"):
    t2, s2 = siamese_augment(t_batch, s_batch, op, seed=9)
    moved = not np.array_equal(t2.data, t_batch.data)
    print(f"  {op:6s} applied (changed inputs: {moved}); ranges stay in "
          f"[{t2.data.min():.2f}, {t2.data.max():.2f}]")

print("\n== gradient matching through the formation operators ==")
rows = rng.uniform(0, 1, (12, 16))  # 12 images of shape 1x4x4, flattened
labels = np.array([0] * 6 + [1] * 6)
t = LabeledDataset(rows, labels, 2)
s0 = SyntheticDataset(rows[[0, 6]], labels[[0, 6]], per_class_size=1, origin="demo")
for variant, params in (("multiform", {"r": 2}), ("channel_multiform", {}), ("siamese", {"op": "flip"})):
    cfg = MethodConfig(method="gm", outer_steps=4, outer_lr=0.01, ensemble=1, hidden=(6,),
                       activation="tanh", image_shape=(1, 4, 4), variants={variant: params}, seed=2)
    _, log = condense(cfg, t, s0)
    print(f"  gm + {variant:18s} objectives {[round(float(v), 4) for v in log.objectives()]}")
