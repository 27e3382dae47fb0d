"""Primal-dual graph attention convolution.

A layer first convolves the dual graph (mesh edges) with GAT-style attention,
then convolves the primal graph (faces), where the attention logit of the
primal edge ``M -> A`` is read off the freshly computed feature of the dual
node of that edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .graphs import GraphPair
from .nn import GroupNorm, Linear, Module

LEAKY_SLOPE = 0.2


@dataclass
class AttentionRecord:
    """Attention coefficients of one layer, one array per head.

    ``primal_edges`` rows are ``(src, dst, primal_edge_id)``; ``primal[h][k]``
    is the weight of ``src`` in the aggregation at ``dst``. Self-loop rows use
    ``primal_edge_id = -1``.
    """

    primal_edges: np.ndarray
    primal: list
    dual_edges: np.ndarray
    dual: list
    n_primal_nodes: int
    n_dual_nodes: int


def directed_primal_edges(pair: GraphPair, self_loops: bool = False) -> np.ndarray:
    e = pair.primal.edges
    ids = np.arange(len(e), dtype=np.int64)
    rows = np.concatenate([
        np.column_stack([e[:, 1], e[:, 0], ids]),  # j -> i
        np.column_stack([e[:, 0], e[:, 1], ids]),  # i -> j
    ]).reshape(2, -1, 3).transpose(1, 0, 2).reshape(-1, 3)
    if self_loops:
        n = np.arange(pair.primal.n_nodes, dtype=np.int64)
        rows = np.vstack([rows, np.column_stack([n, n, -np.ones_like(n)])])
    return rows


def dual_node_of_primal_edge(pair: GraphPair, rows: np.ndarray) -> np.ndarray:
    """Dual node carrying the attention logit of each directed primal edge row."""
    src, dst, eid = rows[:, 0], rows[:, 1], rows[:, 2]
    if pair.config == "A":
        return eid
    # node M -> A of edge e sits at 2e when M < A
    return 2 * eid + (src > dst)


def dual_message_edges(pair: GraphPair, self_loops: bool = False) -> np.ndarray:
    e = pair.dual.edges
    if self_loops:
        n = np.arange(pair.dual.n_nodes, dtype=np.int64)
        e = np.vstack([e, np.column_stack([n, n])]) if len(e) else np.column_stack([n, n])
    return e.reshape(-1, 2)


def combine_heads(outputs: list, mode: str = "concat") -> Tensor:
    if not outputs:
        raise ValueError("combine_heads needs at least one head")
    if len(outputs) == 1:
        return outputs[0]
    if mode == "concat":
        return ag.concat(outputs, axis=1)
    if mode == "average":
        total = outputs[0]
        for o in outputs[1:]:
            total = ag.add(total, o)
        return ag.scale(total, 1.0 / len(outputs))
    raise ValueError(f"unknown head combination {mode!r}")


def average_heads(x: Tensor, heads: int) -> Tensor:
    """Average a concatenated multi-head feature ``(N, H*C)`` down to ``(N, C)``."""
    if heads == 1:
        return x
    n, hc = x.shape
    if hc % heads:
        raise ValueError(f"width {hc} is not a multiple of {heads} heads")
    return ag.mean(ag.reshape(x, (n, heads, hc // heads)), axis=1)


class PrimalDualConv(Module):
    """One primal-dual attention layer.

    Parameters per head ``h`` are named ``{name}.dual.W.head{h}``,
    ``{name}.dual.a.head{h}``, ``{name}.primal.W.head{h}`` and
    ``{name}.primal.a.head{h}``.
    """

    def __init__(self, name, in_primal, in_dual, out_primal, out_dual, rng,
                 heads=1, mode="concat", self_loops=False, activation=True,
                 attention_init="zeros"):
        if mode not in ("concat", "average"):
            raise ValueError(f"unknown head combination {mode!r}")
        self.name = name
        self.in_primal, self.in_dual = in_primal, in_dual
        self.out_primal, self.out_dual = out_primal, out_dual
        self.heads = heads
        self.mode = mode
        self.self_loops = self_loops
        self.activation = activation
        self.dual_W, self.dual_a, self.primal_W, self.primal_a = [], [], [], []
        for h in range(heads):
            self.dual_W.append(Parameter(ag.glorot(rng, in_dual, out_dual), f"{name}.dual.W.head{h}"))
            self.primal_W.append(Parameter(ag.glorot(rng, in_primal, out_primal), f"{name}.primal.W.head{h}"))
            if attention_init == "zeros":
                ad, ap = np.zeros((2 * out_dual, 1)), np.zeros((out_dual, 1))
            elif attention_init == "glorot":
                ad = ag.glorot(rng, 2 * out_dual, 1)
                ap = ag.glorot(rng, out_dual, 1)
            else:
                raise ValueError(f"unknown attention init {attention_init!r}")
            self.dual_a.append(Parameter(ad, f"{name}.dual.a.head{h}"))
            self.primal_a.append(Parameter(ap, f"{name}.primal.a.head{h}"))

    @property
    def primal_width(self) -> int:
        return self.out_primal * (self.heads if self.mode == "concat" else 1)

    @property
    def dual_width(self) -> int:
        return self.out_dual * (self.heads if self.mode == "concat" else 1)

    def _act(self, x):
        return ag.relu(x) if self.activation else x

    def dual_forward(self, pair: GraphPair, xd):
        xd = ag.as_tensor(xd)
        if xd.shape[1] != self.in_dual:
            raise ValueError(f"{self.name}: dual input width {xd.shape[1]} != {self.in_dual}")
        n = pair.dual.n_nodes
        edges = dual_message_edges(pair, self.self_loops)
        src, dst = edges[:, 0], edges[:, 1]
        outs, coeffs = [], []
        first, second = np.arange(self.out_dual), np.arange(self.out_dual, 2 * self.out_dual)
        for h in range(self.heads):
            hd = ag.matmul(xd, self.dual_W[h])
            a = self.dual_a[h]
            # a^T [neighbour || target]
            s_src = ag.matmul(hd, ag.gather_rows(a, first))
            s_dst = ag.matmul(hd, ag.gather_rows(a, second))
            logits = ag.leaky_relu(ag.add(ag.gather_rows(s_src, src), ag.gather_rows(s_dst, dst)),
                                   LEAKY_SLOPE)
            alpha = ag.segment_softmax(logits, dst, n)
            msg = ag.mul(ag.gather_rows(hd, src), alpha)
            outs.append(self._act(ag.segment_sum(msg, dst, n)))
            coeffs.append(alpha.data[:, 0].copy())
        return outs, coeffs, edges

    def primal_forward(self, pair: GraphPair, xp, dual_heads: list):
        xp = ag.as_tensor(xp)
        if xp.shape[1] != self.in_primal:
            raise ValueError(f"{self.name}: primal input width {xp.shape[1]} != {self.in_primal}")
        n = pair.primal.n_nodes
        rows = directed_primal_edges(pair, self.self_loops)
        src, dst = rows[:, 0], rows[:, 1]
        real = rows[:, 2] >= 0
        dual_ids = dual_node_of_primal_edge(pair, rows[real])
        outs, coeffs = [], []
        for h in range(self.heads):
            score = ag.matmul(dual_heads[h], self.primal_a[h])
            picked = ag.gather_rows(score, dual_ids)
            if not real.all():
                # self-loops have no dual node: their logit is eta(0) = 0
                picked = ag.concat([picked, np.zeros((int((~real).sum()), 1))], axis=0)
            alpha = ag.segment_softmax(ag.leaky_relu(picked, LEAKY_SLOPE), dst, n)
            hp = ag.matmul(xp, self.primal_W[h])
            msg = ag.mul(ag.gather_rows(hp, src), alpha)
            outs.append(self._act(ag.segment_sum(msg, dst, n)))
            coeffs.append(alpha.data[:, 0].copy())
        return outs, coeffs, rows

    def __call__(self, pair: GraphPair, xp, xd):
        d_heads, d_coeffs, d_edges = self.dual_forward(pair, xd)
        p_heads, p_coeffs, p_rows = self.primal_forward(pair, xp, d_heads)
        record = AttentionRecord(p_rows, p_coeffs, d_edges, d_coeffs,
                                 pair.primal.n_nodes, pair.dual.n_nodes)
        return combine_heads(p_heads, self.mode), combine_heads(d_heads, self.mode), record


class ConvBlock(Module):
    """Two primal-dual layers with group norm and a residual connection.

    ``out = relu(GN(conv2(relu(GN(conv1(x))))) + skip(x))``; ``skip`` is the
    identity when widths match and a learned linear map otherwise.

    With ``logits=True`` the block ends in class scores: conv1 keeps the input
    width, conv2 averages its heads, and the second GN and final ReLU are
    dropped (a per-node GN over a handful of logit channels would flatten them).
    """

    def __init__(self, name, in_primal, in_dual, out_primal, out_dual, rng, heads=1,
                 self_loops=False, attention_init="zeros", logits=False, conv_names=None):
        mid_p, mid_d = (in_primal, in_dual) if logits else (out_primal, out_dual)
        if mid_p % heads or mid_d % heads:
            raise ValueError(f"{name}: widths {mid_p}/{mid_d} not divisible by {heads} heads")
        n1, n2 = conv_names or (f"{name}.conv1", f"{name}.conv2")
        kw = dict(heads=heads, self_loops=self_loops, attention_init=attention_init)
        self.conv1 = PrimalDualConv(n1, in_primal, in_dual, mid_p // heads, mid_d // heads, rng, **kw)
        if logits:
            self.conv2 = PrimalDualConv(n2, mid_p, mid_d, out_primal, out_dual, rng,
                                        mode="average", activation=False, **kw)
        else:
            self.conv2 = PrimalDualConv(n2, mid_p, mid_d, out_primal // heads, out_dual // heads,
                                        rng, **kw)
        self.norm1_p = GroupNorm(f"{name}.gn1.primal", mid_p)
        self.norm1_d = GroupNorm(f"{name}.gn1.dual", mid_d)
        self.norm2_p = None if logits else GroupNorm(f"{name}.gn2.primal", out_primal)
        self.norm2_d = None if logits else GroupNorm(f"{name}.gn2.dual", out_dual)
        self.skip_p = Linear(f"{name}.skip.primal", in_primal, out_primal, rng) if in_primal != out_primal else None
        self.skip_d = Linear(f"{name}.skip.dual", in_dual, out_dual, rng) if in_dual != out_dual else None
        self.logits = logits
        self.out_primal, self.out_dual = out_primal, out_dual

    def __call__(self, pair: GraphPair, xp, xd):
        p, d, _ = self.conv1(pair, xp, xd)
        p = ag.relu(self.norm1_p(p))
        d = ag.relu(self.norm1_d(d))
        p, d, record = self.conv2(pair, p, d)
        if not self.logits:
            p, d = self.norm2_p(p), self.norm2_d(d)
        p = ag.add(p, self.skip_p(xp) if self.skip_p else xp)
        d = ag.add(d, self.skip_d(xd) if self.skip_d else xd)
        if not self.logits:
            p, d = ag.relu(p), ag.relu(d)
        return p, d, record
