"""Attention-driven edge contraction on the primal graph, and its inverse.

Contracting a primal edge merges two face clusters. After contraction the
dual graph is rebuilt as the line graph of the new primal graph: dual nodes
of contracted edges are dropped, dual nodes whose edges now join the same
pair of clusters are merged (features summed), and the rest are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .conv import AttentionRecord
from .graphs import DualGraph, GraphPair, PrimalGraph, dual_edges_from_primal, dual_nodes_from_primal


class PoolingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PoolingConfig:
    fraction: float | None = 0.2
    k: int | None = None
    aggregation: str = "sum"
    relative_to: str = "edges"  # "edges" | "nodes"

    def __post_init__(self):
        if self.k is None and not (self.fraction is not None and 0.0 < self.fraction < 1.0):
            raise ValueError(f"pooling fraction must lie in (0, 1), got {self.fraction}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"pooling K must be >= 1, got {self.k}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.relative_to not in ("edges", "nodes"):
            raise ValueError(f"unknown fraction reference {self.relative_to!r}")

    def budget(self, n_nodes: int, n_edges: int) -> int:
        if self.k is not None:
            return min(self.k, n_edges)
        ref = n_edges if self.relative_to == "edges" else n_nodes
        return min(int(np.floor(self.fraction * ref)), n_edges)


@dataclass
class PoolingTrace:
    """What an unpooling layer needs to undo one pooling layer."""

    before: GraphPair  # structure at the input of the pooling layer (features dropped)
    node_map: np.ndarray  # old primal node -> new primal node
    dual_map: np.ndarray  # old dual node -> new dual node, -1 where removed
    contracted: np.ndarray  # bool per old primal edge
    forced: np.ndarray  # ids of edges added to close triangle fans
    n_new_dual: int

    @property
    def removed_dual_nodes(self) -> np.ndarray:
        return np.nonzero(self.dual_map < 0)[0]


def score_edges(record: AttentionRecord, n_edges: int) -> np.ndarray:
    """Per undirected primal edge: alpha(A->B) + alpha(B->A), averaged over heads."""
    rows = record.primal_edges
    real = rows[:, 2] >= 0
    eid = rows[real, 2]
    counts = np.bincount(eid, minlength=n_edges)
    if n_edges and (counts.min() < 2 or len(counts) != n_edges):
        raise PoolingError("attention record does not cover every primal edge in both directions")
    total = np.zeros(n_edges)
    for alpha in record.primal:
        total += np.bincount(eid, weights=alpha[real], minlength=n_edges)
    return total / len(record.primal)


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def top_k_edges(scores: np.ndarray, edges: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties go to the smaller (i, j) key."""
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0], -scores))
    return np.sort(order[:k])


def select_and_close_fans(scores, config: PoolingConfig, pair: GraphPair):
    """Choose the edges to contract, per graph of a batch.

    Returns ``(mask, forced)``: a boolean mask over primal edges and the ids of
    edges that were not among the top K but would otherwise become self-loops
    of the merged cluster (the edge closing a triangle fan).
    """
    primal = pair.primal
    edges = primal.edges
    n_edges = len(edges)
    mask = np.zeros(n_edges, dtype=bool)
    if n_edges == 0:
        return mask, np.zeros(0, dtype=np.int64)
    edge_graph = pair.node_graph[edges[:, 0]]
    node_counts = np.bincount(pair.node_graph, minlength=pair.n_graphs)
    for g in range(pair.n_graphs):
        ids = np.nonzero(edge_graph == g)[0]
        k = config.budget(int(node_counts[g]), len(ids))
        mask[ids[top_k_edges(scores[ids], edges[ids], k)]] = True
    uf = _UnionFind(primal.n_nodes)
    for i, j in edges[mask]:
        uf.union(i, j)
    roots = np.array([uf.find(i) for i in range(primal.n_nodes)])
    closing = (~mask) & (roots[edges[:, 0]] == roots[edges[:, 1]])
    forced = np.nonzero(closing)[0]
    return mask | closing, forced


def contract_primal(primal: PrimalGraph, mask: np.ndarray):
    """Merge the endpoints of every masked edge.

    New node ids follow the smallest old node id in each cluster, and
    surviving edges keep their relative order. Unmasked
    edges whose endpoints end up in one cluster are contracted as well.
    Returns the new primal graph (without features), the old -> new node map
    and the effective contraction mask.
    """
    uf = _UnionFind(primal.n_nodes)
    for i, j in primal.edges[mask]:
        uf.union(i, j)
    node_map = -np.ones(primal.n_nodes, dtype=np.int64)
    root_id = {}
    for i in range(primal.n_nodes):
        r = uf.find(i)
        if r not in root_id:
            root_id[r] = len(root_id)
        node_map[i] = root_id[r]
    ends = node_map[primal.edges]
    keep = ends[:, 0] != ends[:, 1]
    pairs = np.sort(ends[keep], axis=1)
    if len(pairs):
        # parallel edges collapse into one; survivors keep their original order
        _, first = np.unique(pairs, axis=0, return_index=True)
        new_edges = pairs[np.sort(first)]
    else:
        new_edges = np.zeros((0, 2), dtype=np.int64)
    new = PrimalGraph(
        n_nodes=len(root_id),
        edges=new_edges.astype(np.int64),
        cluster_of_face=node_map[primal.cluster_of_face],
    )
    return new, node_map, ~keep


def rebuild_dual(old: GraphPair, new_primal: PrimalGraph, node_map: np.ndarray):
    """Dual graph of the contracted primal graph and the old -> new dual node map."""
    config = old.config
    edge_index = {(int(i), int(j)): k for k, (i, j) in enumerate(new_primal.edges)}
    ends = node_map[old.dual.nodes]  # cluster of each endpoint of every old dual node
    dual_map = -np.ones(old.dual.n_nodes, dtype=np.int64)
    for d, (a, b) in enumerate(ends):
        if a == b:
            continue
        k = edge_index[(min(a, b), max(a, b))]
        dual_map[d] = k if config == "A" else 2 * k + (0 if a < b else 1)
    nodes, pe = dual_nodes_from_primal(new_primal.edges, config)
    dual = DualGraph(config, nodes, dual_edges_from_primal(new_primal.n_nodes, new_primal.edges, config), pe)
    return dual, dual_map


def _aggregate(x, index, n, how):
    return ag.segment_sum(x, index, n) if how == "sum" else ag.segment_mean(x, index, n)


def pool(pair: GraphPair, record: AttentionRecord, config: PoolingConfig, check: bool = False):
    """Contract the top-scoring primal edges of ``pair``.

    ``pair`` carries its features (arrays or Tensors). Returns the pooled pair
    and a :class:`PoolingTrace`.
    """
    scores = score_edges(record, len(pair.primal.edges))
    mask, forced = select_and_close_fans(scores, config, pair)
    return contract(pair, mask, config.aggregation, forced=forced, check=check)


def contract(pair: GraphPair, mask: np.ndarray, aggregation: str = "sum", forced=None, check=False):
    new_primal, node_map, mask = contract_primal(pair.primal, mask)
    dual, dual_map = rebuild_dual(pair, new_primal, node_map)
    xp = _aggregate(pair.primal.features, node_map, new_primal.n_nodes, aggregation)
    kept = np.nonzero(dual_map >= 0)[0]
    xd = _aggregate(ag.gather_rows(pair.dual.features, kept), dual_map[kept], dual.n_nodes, aggregation)
    new_primal.features = xp
    dual.features = xd
    node_graph = np.zeros(new_primal.n_nodes, dtype=np.int64)
    node_graph[node_map] = pair.node_graph
    out = GraphPair(new_primal, dual, node_graph=node_graph, n_graphs=pair.n_graphs, name=pair.name)
    if check:
        check_line_graph(out)
    before = GraphPair(replace(pair.primal, features=None), replace(pair.dual, features=None),
                       node_graph=pair.node_graph, n_graphs=pair.n_graphs, name=pair.name)
    trace = PoolingTrace(before, node_map, dual_map, mask,
                         np.zeros(0, np.int64) if forced is None else forced, dual.n_nodes)
    return out, trace


def unpool(pair: GraphPair, trace: PoolingTrace, filler) -> GraphPair:
    """Restore the connectivity saved in ``trace``.

    Every old primal node takes its cluster's feature; old dual nodes that were
    merged or kept take the feature of their successor, removed ones take
    ``filler`` (a learned vector).
    """
    if pair.primal.n_nodes != int(trace.node_map.max()) + 1 or pair.dual.n_nodes != trace.n_new_dual:
        raise PoolingError("unpooling trace does not match the pooled graph")
    xp = ag.gather_rows(pair.primal.features, trace.node_map)
    filler = ag.reshape(ag.as_tensor(filler), (1, -1))
    stacked = ag.concat([pair.dual.features, filler], axis=0)
    index = np.where(trace.dual_map >= 0, trace.dual_map, trace.n_new_dual)
    xd = ag.gather_rows(stacked, index)
    return trace.before.with_features(primal=xp, dual=xd)


def line_graph_edges(primal: PrimalGraph, config: str) -> set:
    """Independent brute-force dual message edges, keyed by node pairs."""
    nbrs = primal.neighbors()
    out = set()
    if config == "A":
        for i, j in primal.edges:
            for a, b in ((i, j), (j, i)):
                for m in nbrs[a]:
                    if m != b:
                        out.add(((min(a, m), max(a, m)), (min(i, j), max(i, j))))
        return out
    for i, j in primal.edges:
        for a, b in ((i, j), (j, i)):
            for m in nbrs[a]:
                if m != b:
                    out.add(((m, a), (a, b)))
            if config == "B":
                for n in nbrs[b]:
                    if n != a:
                        out.add(((b, n), (a, b)))
    return out


def check_line_graph(pair: GraphPair):
    d = pair.dual
    got = {(tuple(int(x) for x in d.nodes[s]), tuple(int(x) for x in d.nodes[t])) for s, t in d.edges}
    want = line_graph_edges(pair.primal, d.config)
    if got != want:
        raise PoolingError(f"dual graph is not the line graph of the primal graph "
                           f"({len(got - want)} extra, {len(want - got)} missing edges)")


def cluster_table(pair: GraphPair) -> np.ndarray:
    return pair.primal.cluster_of_face.copy()


def write_cluster_table(cluster_of_face: np.ndarray, path):
    with open(path, "w") as fh:
        for c in cluster_of_face:
            fh.write(f"{int(c)}\n")
