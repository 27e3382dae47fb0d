"""U-Net overfit on one 500-face mesh: curved cap against flat base.

    python demos/04_segmentation.py [epochs] [out.ply]
"""

import sys

from pdmesh.io import export_colored
from pdmesh.models import build_segmentation_unet
from pdmesh.train import TrainConfig, Trainer, evaluate, predict, synthetic_segmentation_set

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
out = sys.argv[2] if len(sys.argv) > 2 else "segmentation.ply"

ds = synthetic_segmentation_set()
net = build_segmentation_unet(2, heads=3, seed=0)
tr = Trainer(net, TrainConfig(lr=1e-3, batch_size=1, seed=0, task="segmentation"))

for _ in range(epochs):
    stats = tr.train_epoch(ds)
    if stats.epoch % 10 == 0 or stats.epoch == epochs:
        m = evaluate(net, ds)
        print(f"epoch {stats.epoch:3d}  loss {stats.loss:.4f}  face {m['face']:5.1f}  "
              f"hard edge {m['hard_edge']:5.1f}  soft edge {m['soft_edge']:5.1f}")
        if m["face"] >= 99.0:
            break

labels = predict(net, ds)[0].argmax(axis=1)
export_colored(ds.samples[0].mesh, labels, out)
print("wrote", out)
