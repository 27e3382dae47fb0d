"""Primal and dual graphs of a small mesh, and the medial / line graph check."""

import numpy as np

from pdmesh import shapes
from pdmesh.graphs import build_graph_pair, verify_medial_line_equivalence
from pdmesh.mesh import build_topology, dihedral_angles

mesh = shapes.icosphere(1)  # 80 faces, 120 edges
topo = build_topology(mesh)
print(f"{mesh.n_faces} faces, {topo.n_edges} edges, {len(mesh.vertices)} vertices")

# one primal node per face; every face of a closed mesh has three neighbours
pair = build_graph_pair(mesh, "A")
print("primal:", pair.primal.n_nodes, "nodes,", len(pair.primal.edges), "edges")
print("primal features (area share) sum to", pair.primal.features.sum())

# one dual node per primal edge (config A); each touches 4 others
print("dual A:", pair.dual.n_nodes, "nodes, degree", set(np.bincount(pair.dual.edges[:, 1])))
print("first dual row [angle, 2 height ratios, 4 edge ratios]:")
print(np.round(pair.dual.features[0], 4))

# configs B and C split every edge into two directed nodes with 4 features
for config in "BC":
    d = build_graph_pair(mesh, config).dual
    print(f"dual {config}: {d.n_nodes} nodes, {len(d.edges)} message edges, {d.features.shape[1]} features")

# flat = pi; convex folds lie below
_, theta, _ = dihedral_angles(mesh, topo)
print(f"dihedral angles in [{theta.min():.3f}, {theta.max():.3f}]")

# the dual graph is both the medial graph of the mesh and the line graph of the primal graph
for name, m in [("tetrahedron", shapes.tetrahedron()), ("icosphere(2)", shapes.icosphere(2)),
                ("hull of 100 points", shapes.random_hull(100, seed=0)), ("torus", shapes.torus())]:
    r = verify_medial_line_equivalence(m)
    print(f"{name:20s} {r.status:8s} {r.reason or ''}")
