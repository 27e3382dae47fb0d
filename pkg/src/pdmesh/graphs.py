"""Primal (face) and dual (edge) graphs of a triangle mesh.

The primal graph has one node per face and an edge per interior mesh edge.
The dual graph is the line graph of the primal graph, realised in one of three
configurations:

``A``
    one undirected node ``{A, B}`` per primal edge, 7 input features.
``B``
    two nodes ``A->B`` and ``B->A`` per primal edge, each receiving messages
    from ``M->A`` (M a neighbour of A other than B) and from ``B->N``.
``C``
    as ``B`` but only the ``(M->A) -> (A->B)`` messages are kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .mesh import (
    EdgeGeometry,
    Mesh,
    MeshError,
    MeshTopology,
    build_topology,
    check_edge_manifold,
    edge_geometry,
    face_areas,
    is_genus0_manifold,
)

CONFIGS = ("A", "B", "C")
DUAL_CHANNELS = {"A": 7, "B": 4, "C": 4}


@dataclass
class PrimalGraph:
    n_nodes: int
    edges: np.ndarray  # (E, 2) node pairs with i < j, no duplicates
    cluster_of_face: np.ndarray  # original face id -> node id
    features: Any = None  # (n_nodes, C) array or Tensor
    edge_keys: np.ndarray | None = None  # mesh edge id per primal edge (input resolution only)

    def neighbors(self) -> list[list[int]]:
        nbrs = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            nbrs[i].append(int(j))
            nbrs[j].append(int(i))
        return nbrs

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n_nodes)

    def clusters(self) -> list[np.ndarray]:
        order = np.argsort(self.cluster_of_face, kind="stable")
        bounds = np.searchsorted(self.cluster_of_face[order], np.arange(self.n_nodes + 1))
        return [order[bounds[k]:bounds[k + 1]] for k in range(self.n_nodes)]


@dataclass
class DualGraph:
    config: str
    nodes: np.ndarray  # (N, 2): config A -> primal edge (i, j) with i < j; B/C -> directed (i, j)
    edges: np.ndarray  # (D, 2) directed message edges (src, dst)
    primal_edge: np.ndarray  # (N,) index of the primal edge each node belongs to
    features: Any = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class GraphPair:
    primal: PrimalGraph
    dual: DualGraph
    node_graph: np.ndarray = field(default=None)  # primal node -> graph index in a batch
    n_graphs: int = 1
    name: str = ""

    def __post_init__(self):
        if self.node_graph is None:
            self.node_graph = np.zeros(self.primal.n_nodes, dtype=np.int64)

    @property
    def config(self) -> str:
        return self.dual.config

    def with_features(self, primal=None, dual=None) -> GraphPair:
        return replace(
            self,
            primal=replace(self.primal, features=self.primal.features if primal is None else primal),
            dual=replace(self.dual, features=self.dual.features if dual is None else dual),
        )


# ---------------------------------------------------------------------------
# connectivity


def incidence_lists(n_nodes: int, edges: np.ndarray) -> list[list[int]]:
    """Per node, the ids of the primal edges touching it (ascending)."""
    inc = [[] for _ in range(n_nodes)]
    for e, (i, j) in enumerate(edges):
        inc[i].append(e)
        inc[j].append(e)
    return inc


def dual_nodes_from_primal(edges: np.ndarray, config: str):
    """Dual node keys and their primal edge index; B/C put ``i->j`` before ``j->i``."""
    if config == "A":
        return edges.copy(), np.arange(len(edges), dtype=np.int64)
    nodes = np.empty((2 * len(edges), 2), dtype=np.int64)
    nodes[0::2] = edges
    nodes[1::2] = edges[:, ::-1]
    return nodes, np.repeat(np.arange(len(edges), dtype=np.int64), 2)


def dual_edges_from_primal(n_nodes: int, edges: np.ndarray, config: str) -> np.ndarray:
    """Message edges ``(src, dst)`` of the dual graph, grouped by destination."""
    if config not in CONFIGS:
        raise ValueError(f"unknown dual configuration {config!r}")
    inc = incidence_lists(n_nodes, edges)
    out = []
    if config == "A":
        for e, (i, j) in enumerate(edges):
            for k in inc[i]:
                if k != e:
                    out.append((k, e))
            for k in inc[j]:
                if k != e:
                    out.append((k, e))
    else:
        def node(a, b, e):
            # dual node id of the directed primal edge a -> b, where e = primal edge id
            return 2 * e + (0 if a < b else 1)

        for e, (i, j) in enumerate(edges):
            for a, b in ((i, j), (j, i)):
                dst = node(a, b, e)
                # (M -> A) -> (A -> B)
                for k in inc[a]:
                    if k != e:
                        m = edges[k, 0] if edges[k, 1] == a else edges[k, 1]
                        out.append((node(m, a, k), dst))
                if config == "B":
                    # (B -> N) -> (A -> B)
                    for k in inc[b]:
                        if k != e:
                            n = edges[k, 0] if edges[k, 1] == b else edges[k, 1]
                            out.append((node(b, n, k), dst))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(out, dtype=np.int64)


def build_primal(mesh: Mesh, topology: MeshTopology) -> PrimalGraph:
    interior = topology.interior_edges
    edges = np.array([topology.edge_faces[e] for e in interior], dtype=np.int64).reshape(-1, 2)
    edges.sort(axis=1)
    return PrimalGraph(
        n_nodes=mesh.n_faces,
        edges=edges,
        cluster_of_face=np.arange(mesh.n_faces, dtype=np.int64),
        features=compute_primal_features(mesh),
        edge_keys=interior,
    )


def build_dual(mesh: Mesh, topology: MeshTopology, config: str = "A",
               primal: PrimalGraph | None = None, geometry: EdgeGeometry | None = None) -> DualGraph:
    report = check_edge_manifold(topology)
    if not report.manifold:
        raise MeshError(
            "dual graph needs an edge-manifold mesh; non-manifold edges "
            f"{report.offending_vertex_pairs(topology)} would need extra dual nodes "
            "(see the non-manifold extension point in graphs.py)"
        )
    if primal is None:
        primal = build_primal(mesh, topology)
    if geometry is None:
        geometry = edge_geometry(mesh, topology)
    nodes, pe = dual_nodes_from_primal(primal.edges, config)
    return DualGraph(
        config=config,
        nodes=nodes,
        edges=dual_edges_from_primal(primal.n_nodes, primal.edges, config),
        primal_edge=pe,
        features=compute_dual_features(geometry, config),
    )


# Non-manifold extension point: an edge shared by faces A, B, C could map to
# dual nodes {A,B} and {A,C}, or to one node {A,B,C} with pooled features.
# Neither is built here; build_dual rejects such meshes.


def build_graph_pair(mesh: Mesh, config: str = "A") -> GraphPair:
    topology = build_topology(mesh)
    primal = build_primal(mesh, topology)
    dual = build_dual(mesh, topology, config, primal=primal)
    return GraphPair(primal, dual, name=mesh.name)


# ---------------------------------------------------------------------------
# features


def compute_primal_features(mesh: Mesh) -> np.ndarray:
    """Face area over total mesh area, as an ``(F, 1)`` column."""
    areas = face_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise MeshError(f"{mesh.name}: total surface area is zero")
    return (areas / total)[:, None]


def compute_dual_features(geometry: EdgeGeometry, config: str = "A") -> np.ndarray:
    theta = geometry.dihedral
    if config == "A":
        # sort to remove the dependence on which face is called A; stable on ties
        h = np.sort(geometry.height_ratios, axis=1, kind="stable")
        r = np.sort(geometry.edge_ratios.reshape(-1, 4), axis=1, kind="stable")
        return np.column_stack([theta, h, r])
    if config not in CONFIGS:
        raise ValueError(f"unknown dual configuration {config!r}")
    n = len(theta)
    out = np.empty((2 * n, 4))
    for side in (0, 1):
        # node 2e is faces[e,0] -> faces[e,1]: geometry of faces[e,0] seen from faces[e,1]
        rows = out[side::2]
        rows[:, 0] = theta
        rows[:, 1] = geometry.height_ratios[:, side]
        rows[:, 2:] = geometry.edge_ratios[:, side]
    return out


# ---------------------------------------------------------------------------
# medial graph and the medial / line graph check


def medial_graph(mesh: Mesh, topology: MeshTopology | None = None) -> set[tuple[int, int]]:
    """Edges of the medial graph of the vertex graph, keyed by mesh edge id.

    Two mesh edges are joined when they are consecutive along a common face;
    in a triangle every pair of its edges is consecutive.
    """
    if topology is None:
        topology = build_topology(mesh, check_manifold=False)
    out = set()
    for fe in topology.face_edges:
        a, b, c = (int(x) for x in fe)
        for x, y in ((a, b), (b, c), (a, c)):
            out.add((min(x, y), max(x, y)))
    return out


def line_graph_of_primal(primal: PrimalGraph) -> set[tuple[int, int]]:
    """Line graph of the primal graph with nodes keyed by ``primal.edge_keys``."""
    keys = primal.edge_keys if primal.edge_keys is not None else np.arange(len(primal.edges))
    out = set()
    for inc in incidence_lists(primal.n_nodes, primal.edges):
        for p in range(len(inc)):
            for q in range(p + 1, len(inc)):
                x, y = int(keys[inc[p]]), int(keys[inc[q]])
                out.add((min(x, y), max(x, y)))
    return out


@dataclass
class TheoremReport:
    status: str  # "pass" | "fail" | "skipped"
    reason: str = ""
    medial_edges: int = 0
    line_edges: int = 0
    only_in_medial: list = field(default_factory=list)
    only_in_line: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def verify_medial_line_equivalence(mesh: Mesh) -> TheoremReport:
    """Compare the medial graph of the vertex graph with the line graph of the primal graph."""
    topology = build_topology(mesh, check_manifold=False)
    ok, why = is_genus0_manifold(mesh, topology)
    if not ok:
        return TheoremReport("skipped", reason=f"precondition violated: {why}")
    medial = medial_graph(mesh, topology)
    line = line_graph_of_primal(build_primal(mesh, topology))
    only_m = sorted(medial - line)
    only_l = sorted(line - medial)
    status = "pass" if not only_m and not only_l else "fail"
    return TheoremReport(status, medial_edges=len(medial), line_edges=len(line),
                         only_in_medial=only_m, only_in_line=only_l)


# ---------------------------------------------------------------------------
# dump format


def dump_graph_pair(pair: GraphPair) -> dict:
    """JSON-compatible description of a graph pair.

    Keys: ``config``, ``primal`` {``n_nodes``, ``edges``, ``mesh_edges``,
    ``features``}, ``dual`` {``n_nodes``, ``nodes``, ``directed``, ``edges``,
    ``features``}. Dual ``edges`` lists (src, dst) message pairs; for
    configuration A each undirected edge is listed once with src < dst.
    """
    p, d = pair.primal, pair.dual
    pf = np.asarray(getattr(p.features, "data", p.features))
    df = np.asarray(getattr(d.features, "data", d.features))
    if d.config == "A":
        dual_edges = sorted({(min(s, t), max(s, t)) for s, t in d.edges.tolist()})
    else:
        dual_edges = [tuple(x) for x in d.edges.tolist()]
    return {
        "name": pair.name,
        "config": d.config,
        "primal": {
            "n_nodes": int(p.n_nodes),
            "edges": p.edges.tolist(),
            "mesh_edges": None if p.edge_keys is None else p.edge_keys.tolist(),
            "features": pf.tolist(),
        },
        "dual": {
            "n_nodes": int(d.n_nodes),
            "nodes": d.nodes.tolist(),
            "directed": d.config != "A",
            "edges": [list(e) for e in dual_edges],
            "features": df.tolist(),
        },
    }


def write_graph_dump(pair: GraphPair, path):
    with open(path, "w") as fh:
        json.dump(dump_graph_pair(pair), fh, indent=1)
