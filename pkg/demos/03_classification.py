"""Spheres against boxes: a small classification run.

    python demos/03_classification.py [epochs]
"""

import sys
import time

from pdmesh.models import build_classification_net, parameter_count
from pdmesh.train import TrainConfig, Trainer, evaluate, synthetic_classification_set

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
ds = synthetic_classification_set(n_per_class=8, seed=0)
print(len(ds), "meshes:", ds.class_names)

# full widths: 64 and 128 channels per head, 3 heads
net = build_classification_net(2, heads=3, seed=0)
print(parameter_count(net), "parameters")

tr = Trainer(net, TrainConfig(lr=2e-4, batch_size=16, seed=0))
t = time.perf_counter()
for _ in range(epochs):
    stats = tr.train_epoch(ds)
    acc = evaluate(net, ds)["accuracy"]
    print(f"epoch {stats.epoch:3d}  loss {stats.loss:.4f}  train accuracy {acc:5.1f}")
    if acc == 100.0:
        break
print(f"{time.perf_counter() - t:.0f}s")
