"""Attention coefficients drive edge contraction; clusters are written as a colored PLY."""

import sys

import numpy as np

from pdmesh import shapes
from pdmesh.conv import PrimalDualConv
from pdmesh.graphs import build_graph_pair
from pdmesh.io import export_colored
from pdmesh.pooling import PoolingConfig, pool, unpool

out = sys.argv[1] if len(sys.argv) > 1 else "clusters.ply"
rng = np.random.default_rng(0)
mesh = shapes.random_sphere_hull(252, seed=0)
pair = build_graph_pair(mesh)
print(mesh.n_faces, "faces")

traces = []
for level in range(3):
    xp, xd = pair.primal.features, pair.dual.features
    # two heads of 8 channels each, concatenated to 16
    conv = PrimalDualConv(f"demo{level}", xp.shape[1], xd.shape[1], 8, 8, rng, heads=2, attention_init="glorot")
    p, d, record = conv(pair, xp, xd)

    # per head, the coefficients arriving at a face sum to one
    dst = record.primal_edges[:, 1]
    sums = np.bincount(dst, weights=record.primal[0], minlength=record.n_primal_nodes)
    print(f"level {level}: max |sum - 1| = {np.abs(sums - 1).max():.1e}")

    pair, trace = pool(pair.with_features(p, d), record, PoolingConfig(0.2), check=True)
    traces.append(trace)
    print(f"  contracted {trace.contracted.sum()} edges ({len(trace.forced)} forced), "
          f"{pair.primal.n_nodes} clusters left")

export_colored(mesh, pair.primal.cluster_of_face, out)
print("wrote", out)

# unpooling walks back through the traces; removed dual nodes get the filler
for trace in reversed(traces):
    pair = unpool(pair, trace, np.zeros(16))
print("after unpooling:", pair.primal.n_nodes, "primal nodes,", pair.dual.n_nodes, "dual nodes")
