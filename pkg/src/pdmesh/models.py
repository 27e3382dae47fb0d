"""The classification, U-Net segmentation and superpixel architectures.

All networks take a (possibly batched) :class:`GraphPair` whose primal and dual
features are set, and return a :class:`ModelOutput`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .conv import ConvBlock, PrimalDualConv, average_heads
from .graphs import DUAL_CHANNELS, GraphPair
from .nn import BatchNorm, Linear, Module
from .autograd import Parameter
from .pooling import PoolingConfig, contract, pool, unpool

TASKS = ("classification", "segmentation", "superpixel")

DEFAULT_WIDTHS = {
    "classification": (64, 128),
    "segmentation": (32, 64, 128, 256),
    "superpixel": (32, 64, 64, 128, 128),
}
DEFAULT_FRACTIONS = {
    "classification": (0.2, 0.2),
    "segmentation": (0.3, 0.3, 0.3),
    "superpixel": (0.1, 0.1, 0.1, 0.1, 0.1),
}


@dataclass
class ArchitectureSpec:
    """Everything needed to rebuild a network, apart from its weights.

    ``widths`` are per-head widths: a classification block with width 64 and
    3 heads outputs 192 channels.
    """

    task: str
    n_classes: int
    heads: int = 3
    widths: tuple = ()
    fractions: tuple = ()
    config: str = "A"
    aggregation: str = "sum"
    self_loops: bool = False
    attention_init: str = "zeros"
    hidden: int = 100
    decoder_heads: int = 1
    in_primal: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")
        if self.heads < 1 or self.decoder_heads < 1:
            raise ValueError("head counts must be >= 1")
        self.widths = tuple(int(w) for w in (self.widths or DEFAULT_WIDTHS[self.task]))
        self.fractions = tuple(float(f) for f in (self.fractions or DEFAULT_FRACTIONS[self.task]))
        want = {"classification": (2, 2), "segmentation": (4, 3), "superpixel": (5, 5)}[self.task]
        if (len(self.widths), len(self.fractions)) != want:
            raise ValueError(f"{self.task} needs {want[0]} widths and {want[1]} pooling fractions, "
                             f"got {len(self.widths)} and {len(self.fractions)}")
        if min(self.widths) < 1:
            raise ValueError("widths must be positive")
        for f in self.fractions:
            PoolingConfig(fraction=f, aggregation=self.aggregation)

    @property
    def in_dual(self) -> int:
        return DUAL_CHANNELS[self.config]

    def pooling(self, level: int) -> PoolingConfig:
        return PoolingConfig(fraction=self.fractions[level], aggregation=self.aggregation)

    def to_json(self) -> str:
        d = asdict(self)
        d["widths"], d["fractions"] = list(self.widths), list(self.fractions)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ArchitectureSpec:
        d = json.loads(text)
        d["widths"], d["fractions"] = tuple(d["widths"]), tuple(d["fractions"])
        return cls(**d)


@dataclass
class ModelOutput:
    logits: ag.Tensor  # (n_graphs, C) for classification, (n_faces, C) otherwise
    traces: list = field(default_factory=list)  # one PoolingTrace per pooling layer
    records: list = field(default_factory=list)  # AttentionRecord that drove each pooling
    pooled: GraphPair | None = None  # coarsest pair reached by the encoder


class _PooledEncoder:
    """Shared pooling step: pick edges from attention, or replay saved masks."""

    def _pool(self, pair, record, level, replay):
        cfg = self.spec.pooling(level)
        if replay is None:
            return pool(pair, record, cfg)
        mask = replay[level]
        return contract(pair, mask, cfg.aggregation)


def global_average_pool_dual(xd, dual_graph: np.ndarray, n_graphs: int):
    """Channel-wise mean of the dual features of each graph in a batch."""
    counts = np.bincount(dual_graph, minlength=n_graphs)
    if len(counts) > n_graphs or (counts == 0).any():
        raise ValueError("global average pooling over a graph with no dual nodes "
                         "(the mesh was pooled down to a single face cluster)")
    return ag.segment_mean(xd, dual_graph, n_graphs)


def dual_node_graph(pair: GraphPair) -> np.ndarray:
    return pair.node_graph[pair.dual.nodes[:, 0]]


class ClassificationNet(Module, _PooledEncoder):
    """block -> pool -> block -> pool -> dual global average -> linear -> ReLU -> linear."""

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator):
        self.spec = spec
        h = spec.heads
        w1, w2 = (w * h for w in spec.widths)
        kw = dict(heads=h, self_loops=spec.self_loops, attention_init=spec.attention_init)
        self.blocks = [
            ConvBlock("block0", spec.in_primal, spec.in_dual, w1, w1, rng,
                      conv_names=("layer0", "layer1"), **kw),
            ConvBlock("block1", w1, w1, w2, w2, rng, conv_names=("layer2", "layer3"), **kw),
        ]
        self.fc1 = Linear("fc1", w2, spec.hidden, rng)
        self.fc2 = Linear("fc2", spec.hidden, spec.n_classes, rng)

    def __call__(self, pair: GraphPair, replay=None) -> ModelOutput:
        xp, xd = pair.primal.features, pair.dual.features
        out = ModelOutput(None)
        for level, block in enumerate(self.blocks):
            xp, xd, record = block(pair, xp, xd)
            pair, trace = self._pool(pair.with_features(xp, xd), record, level, replay)
            xp, xd = pair.primal.features, pair.dual.features
            out.traces.append(trace)
            out.records.append(record)
        pooled = global_average_pool_dual(xd, dual_node_graph(pair), pair.n_graphs)
        out.logits = self.fc2(ag.relu(self.fc1(pooled)))
        out.pooled = pair
        return out


class _ConvBN(Module):
    """Single primal-dual layer followed by batch norm (and ReLU) on both graphs."""

    def __init__(self, name, in_p, in_d, out_p, out_d, rng, heads, spec, relu=True, dual_bn=True):
        self.conv = PrimalDualConv(name, in_p, in_d, out_p // heads, out_d // heads, rng,
                                   heads=heads, self_loops=spec.self_loops,
                                   attention_init=spec.attention_init, activation=False)
        self.bn_p = BatchNorm(f"{name}.bn.primal", out_p)
        self.bn_d = BatchNorm(f"{name}.bn.dual", out_d) if dual_bn else None
        self.relu = relu

    def __call__(self, pair, xp, xd):
        p, d, record = self.conv(pair, xp, xd)
        p = self.bn_p(p)
        if self.bn_d is not None:
            d = self.bn_d(d)
        if self.relu:
            p, d = ag.relu(p), ag.relu(d)
        return p, d, record


class SegmentationUNet(Module, _PooledEncoder):
    """Three encoder levels, a bridge layer and three mirrored decoder levels.

    Encoder blocks use ``spec.heads`` heads and group norm; the bridge and the
    decoder use batch norm, and the decoder ``spec.decoder_heads`` heads.
    Encoder outputs are head-averaged before being concatenated after unpooling.
    """

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator):
        self.spec = spec
        he, hd = spec.heads, spec.decoder_heads
        w = spec.widths  # (32, 64, 128, 256) per head
        kw = dict(heads=he, self_loops=spec.self_loops, attention_init=spec.attention_init)
        self.encoder = []
        in_p, in_d = spec.in_primal, spec.in_dual
        for level in range(3):
            out = w[level] * he
            self.encoder.append(ConvBlock(f"enc{level}", in_p, in_d, out, out, rng,
                                          conv_names=(f"layer{2 * level}", f"layer{2 * level + 1}"), **kw))
            in_p = in_d = out
        self.bridge = _ConvBN("layer6", in_p, in_d, w[3] * he, w[3] * he, rng, he, spec)
        self.up_in, self.up_out, self.fillers = [], [], []
        width = w[3]
        n = 7
        for level in (2, 1, 0):
            c = w[level] * hd
            self.up_in.append(_ConvBN(f"layer{n}", width, width, c, c, rng, hd, spec))
            self.fillers.append(Parameter(np.zeros(c), f"unpool{level}.filler"))
            skip = w[level]
            self.up_out.append(_ConvBN(f"layer{n + 1}", c + skip, c + skip, c, c, rng, hd, spec))
            width = c
            n += 2
        # logits: one head, dual output kept at C channels (only used for attention)
        self.final = _ConvBN(f"layer{n}", width, width, spec.n_classes, spec.n_classes, rng, 1,
                             spec, relu=False, dual_bn=False)

    def __call__(self, pair: GraphPair, replay=None) -> ModelOutput:
        he = self.spec.heads
        xp, xd = pair.primal.features, pair.dual.features
        out = ModelOutput(None)
        skips = []
        for level, block in enumerate(self.encoder):
            xp, xd, record = block(pair, xp, xd)
            skips.append((average_heads(xp, he), average_heads(xd, he)))
            pair, trace = self._pool(pair.with_features(xp, xd), record, level, replay)
            xp, xd = pair.primal.features, pair.dual.features
            out.traces.append(trace)
            out.records.append(record)
        out.pooled = pair
        xp, xd, _ = self.bridge(pair, xp, xd)
        xp, xd = average_heads(xp, he), average_heads(xd, he)
        for k, level in enumerate((2, 1, 0)):
            xp, xd, _ = self.up_in[k](pair, xp, xd)
            pair = unpool(pair.with_features(xp, xd), out.traces[level], self.fillers[k])
            sp, sd = skips[level]
            xp = ag.concat([pair.primal.features, sp], axis=1)
            xd = ag.concat([pair.dual.features, sd], axis=1)
            xp, xd, _ = self.up_out[k](pair, xp, xd)
        logits, _, _ = self.final(pair, xp, xd)
        out.logits = ag.gather_rows(logits, pair.primal.cluster_of_face)
        return out


class SuperpixelNet(Module, _PooledEncoder):
    """Five residual blocks each followed by pooling; a final block labels each cluster."""

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator):
        self.spec = spec
        h = spec.heads
        kw = dict(heads=h, self_loops=spec.self_loops, attention_init=spec.attention_init)
        self.blocks = []
        in_p, in_d = spec.in_primal, spec.in_dual
        for level, w in enumerate(spec.widths):
            self.blocks.append(ConvBlock(f"block{level}", in_p, in_d, w * h, w * h, rng,
                                         conv_names=(f"layer{2 * level}", f"layer{2 * level + 1}"), **kw))
            in_p = in_d = w * h
        self.head = ConvBlock("block5", in_p, in_d, spec.n_classes, spec.n_classes, rng, logits=True,
                              conv_names=("layer10", "layer11"), **kw)

    def __call__(self, pair: GraphPair, replay=None) -> ModelOutput:
        xp, xd = pair.primal.features, pair.dual.features
        out = ModelOutput(None)
        for level, block in enumerate(self.blocks):
            xp, xd, record = block(pair, xp, xd)
            pair, trace = self._pool(pair.with_features(xp, xd), record, level, replay)
            xp, xd = pair.primal.features, pair.dual.features
            out.traces.append(trace)
            out.records.append(record)
        out.pooled = pair
        cluster_logits, _, _ = self.head(pair, xp, xd)
        out.logits = ag.gather_rows(cluster_logits, pair.primal.cluster_of_face)
        return out


_BUILDERS = {"classification": ClassificationNet, "segmentation": SegmentationUNet,
             "superpixel": SuperpixelNet}


def build_model(spec: ArchitectureSpec, seed: int = 0):
    return _BUILDERS[spec.task](spec, np.random.default_rng(seed))


def build_classification_net(n_classes: int, heads: int = 3, base_width: int = 64, seed: int = 0,
                             **kw) -> ClassificationNet:
    spec = ArchitectureSpec("classification", n_classes, heads=heads,
                            widths=(base_width, 2 * base_width), **kw)
    return build_model(spec, seed)


def build_segmentation_unet(n_classes: int, heads: int = 3, base_width: int = 32, seed: int = 0,
                            **kw) -> SegmentationUNet:
    b = base_width
    spec = ArchitectureSpec("segmentation", n_classes, heads=heads, widths=(b, 2 * b, 4 * b, 8 * b), **kw)
    return build_model(spec, seed)


def build_superpixel_net(n_classes: int, heads: int = 3, fractions=(0.1,) * 5, widths=None, seed: int = 0,
                         **kw) -> SuperpixelNet:
    spec = ArchitectureSpec("superpixel", n_classes, heads=heads, fractions=tuple(fractions),
                            widths=tuple(widths or DEFAULT_WIDTHS["superpixel"]), **kw)
    return build_model(spec, seed)


def recorded_masks(output: ModelOutput) -> list[np.ndarray]:
    """Contraction masks of a forward pass, for replaying the same pooling."""
    return [t.contracted.copy() for t in output.traces]


def parameter_count(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def _conv_params(in_p, in_d, out_p, out_d, heads):
    # per head: W_dual, a_dual, W_primal, a_primal
    return heads * (in_d * out_d + 2 * out_d + in_p * out_p + out_d)


def _block_params(in_p, in_d, out_p, out_d, heads, logits=False):
    if logits:
        mid_p, mid_d = in_p, in_d
        n = _conv_params(in_p, in_d, mid_p // heads, mid_d // heads, heads)
        n += _conv_params(mid_p, mid_d, out_p, out_d, heads)
        n += 2 * (mid_p + mid_d)
    else:
        n = _conv_params(in_p, in_d, out_p // heads, out_d // heads, heads)
        n += _conv_params(out_p, out_d, out_p // heads, out_d // heads, heads)
        n += 4 * (out_p + out_d)
    if in_p != out_p:
        n += in_p * out_p + out_p
    if in_d != out_d:
        n += in_d * out_d + out_d
    return n


def expected_parameter_count(spec: ArchitectureSpec) -> int:
    """Closed-form parameter count, independent of the module code."""
    h, w, c = spec.heads, spec.widths, spec.n_classes
    if spec.task == "classification":
        w1, w2 = w[0] * h, w[1] * h
        return (_block_params(spec.in_primal, spec.in_dual, w1, w1, h) + _block_params(w1, w1, w2, w2, h)
                + w2 * spec.hidden + spec.hidden + spec.hidden * c + c)
    if spec.task == "superpixel":
        n, in_p, in_d = 0, spec.in_primal, spec.in_dual
        for width in w:
            n += _block_params(in_p, in_d, width * h, width * h, h)
            in_p = in_d = width * h
        return n + _block_params(in_p, in_d, c, c, h, logits=True)
    hd = spec.decoder_heads
    n, in_p, in_d = 0, spec.in_primal, spec.in_dual
    for level in range(3):
        n += _block_params(in_p, in_d, w[level] * h, w[level] * h, h)
        in_p = in_d = w[level] * h
    b = w[3] * h
    n += _conv_params(in_p, in_d, w[3], w[3], h) + 4 * b
    width = w[3]
    for level in (2, 1, 0):
        cw = w[level] * hd
        n += _conv_params(width, width, w[level], w[level], hd) + 4 * cw
        n += cw  # filler
        n += _conv_params(cw + w[level], cw + w[level], w[level], w[level], hd) + 4 * cw
        width = cw
    return n + _conv_params(width, width, c, c, 1) + 2 * c
