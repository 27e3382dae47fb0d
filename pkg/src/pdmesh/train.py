"""Batching, datasets and the training / evaluation loops."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import metrics, shapes
from .graphs import CONFIGS, DualGraph, GraphPair, PrimalGraph, build_graph_pair
from .mesh import Mesh, MeshTopology, build_topology, load_obj, save_obj

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 200
    batch_size: int = 16
    seed: int = 0
    task: str = "classification"
    aggregation: str = "sum"
    config: str = "A"
    augment: bool = False

    def __post_init__(self):
        if not self.lr >= 0:  # 0 is allowed: a frozen run
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.config not in CONFIGS:
            raise ValueError(f"unknown dual configuration {self.config!r}")
        if self.aggregation not in ("sum", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# batching


@dataclass
class BatchIndex:
    """Start offsets (length n+1) of every graph's items in a batched pair."""

    faces: np.ndarray
    primal_nodes: np.ndarray
    primal_edges: np.ndarray
    dual_nodes: np.ndarray

    @property
    def n_graphs(self) -> int:
        return len(self.faces) - 1

    def split_faces(self, rows: np.ndarray) -> list[np.ndarray]:
        return [rows[a:b] for a, b in zip(self.faces[:-1], self.faces[1:])]


def _feature_array(x):
    return x.data if isinstance(x, ag.Tensor) else np.asarray(x)


def batch_graphs(pairs: list[GraphPair]) -> tuple[GraphPair, BatchIndex]:
    """Disjoint union of graph pairs; node and edge ids are shifted per graph."""
    if not pairs:
        raise ValueError("cannot batch an empty list of graphs")
    config = pairs[0].config
    pw = {_feature_array(p.primal.features).shape[1] for p in pairs}
    dw = {_feature_array(p.dual.features).shape[1] for p in pairs}
    if len(pw) > 1 or len(dw) > 1 or any(p.config != config for p in pairs):
        raise ValueError(f"cannot batch graphs with different feature widths "
                         f"(primal {sorted(pw)}, dual {sorted(dw)}) or configurations")

    def offsets(sizes):
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    idx = BatchIndex(
        faces=offsets([len(p.primal.cluster_of_face) for p in pairs]),
        primal_nodes=offsets([p.primal.n_nodes for p in pairs]),
        primal_edges=offsets([len(p.primal.edges) for p in pairs]),
        dual_nodes=offsets([p.dual.n_nodes for p in pairs]),
    )
    pn, pe = idx.primal_nodes, idx.primal_edges
    edge_keys = None
    if all(p.primal.edge_keys is not None for p in pairs):
        edge_keys = np.concatenate([p.primal.edge_keys for p in pairs])
    primal = PrimalGraph(
        n_nodes=int(pn[-1]),
        edges=np.concatenate([p.primal.edges + pn[k] for k, p in enumerate(pairs)]).reshape(-1, 2),
        cluster_of_face=np.concatenate([p.primal.cluster_of_face + pn[k] for k, p in enumerate(pairs)]),
        features=np.vstack([_feature_array(p.primal.features) for p in pairs]),
        edge_keys=edge_keys,
    )
    dual = DualGraph(
        config=config,
        nodes=np.concatenate([p.dual.nodes + pn[k] for k, p in enumerate(pairs)]).reshape(-1, 2),
        edges=np.concatenate([p.dual.edges + idx.dual_nodes[k] for k, p in enumerate(pairs)]).reshape(-1, 2),
        primal_edge=np.concatenate([p.dual.primal_edge + pe[k] for k, p in enumerate(pairs)]),
        features=np.vstack([_feature_array(p.dual.features) for p in pairs]),
    )
    node_graph = np.concatenate([np.full(p.primal.n_nodes, k, dtype=np.int64) for k, p in enumerate(pairs)])
    name = pairs[0].name if len(pairs) == 1 else f"batch[{len(pairs)}]"
    return GraphPair(primal, dual, node_graph=node_graph, n_graphs=len(pairs), name=name), idx


def unbatch(pair: GraphPair, index: BatchIndex) -> list[GraphPair]:
    """Inverse of :func:`batch_graphs` (features included)."""
    out = []
    for k in range(index.n_graphs):
        a, b = index.primal_nodes[k], index.primal_nodes[k + 1]
        ea, eb = index.primal_edges[k], index.primal_edges[k + 1]
        da, db = index.dual_nodes[k], index.dual_nodes[k + 1]
        fa, fb = index.faces[k], index.faces[k + 1]
        pf, df = pair.primal.features, pair.dual.features
        primal = PrimalGraph(
            n_nodes=int(b - a),
            edges=pair.primal.edges[ea:eb] - a,
            cluster_of_face=pair.primal.cluster_of_face[fa:fb] - a,
            features=None if pf is None else _feature_array(pf)[a:b],
            edge_keys=None if pair.primal.edge_keys is None else pair.primal.edge_keys[ea:eb],
        )
        dual = DualGraph(pair.config, pair.dual.nodes[da:db] - a,
                         _dual_edges_between(pair.dual, da, db) - da,
                         pair.dual.primal_edge[da:db] - ea,
                         None if df is None else _feature_array(df)[da:db])
        out.append(GraphPair(primal, dual, name=pair.name))
    return out


def _dual_edges_between(dual: DualGraph, lo: int, hi: int) -> np.ndarray:
    keep = (dual.edges[:, 1] >= lo) & (dual.edges[:, 1] < hi)
    return dual.edges[keep]


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Sample:
    name: str
    mesh: Mesh
    pair: GraphPair
    topology: MeshTopology
    label: int | None = None  # classification target
    face_labels: np.ndarray | None = None
    edge_labels: np.ndarray | None = None
    soft_labels: np.ndarray | None = None


@dataclass
class Dataset:
    task: str
    n_classes: int
    samples: list[Sample] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)


def make_sample(mesh: Mesh, config: str = "A", **labels) -> Sample:
    pair = build_graph_pair(mesh, config)
    return Sample(mesh.name, mesh, pair, build_topology(mesh), **labels)


def load_classification_dataset(root, config: str = "A") -> Dataset:
    """``root/<class>/<sample>.obj``; classes in sorted directory order."""
    root = Path(root)
    classes = sorted(d.name for d in root.iterdir() if d.is_dir() and any(d.glob("*.obj")))
    if not classes:
        raise ValueError(f"{root}: no class directories with .obj files")
    ds = Dataset("classification", len(classes), class_names=classes)
    for k, c in enumerate(classes):
        for path in sorted((root / c).glob("*.obj")):
            mesh = load_obj(path, name=f"{c}/{path.stem}")
            ds.samples.append(make_sample(mesh, config, label=k))
    return ds


def load_segmentation_dataset(root, config: str = "A", n_classes: int | None = None) -> Dataset:
    """``root/<sample>.obj`` with ``<sample>.faces.txt`` (and optional ``.edges.txt``, ``.soft.txt``)."""
    root = Path(root)
    paths = sorted(root.glob("*.obj"))
    if not paths:
        raise ValueError(f"{root}: no .obj files")
    samples = []
    for path in paths:
        mesh = load_obj(path)
        stem = path.with_suffix("")
        faces_file = Path(f"{stem}.faces.txt")
        if not faces_file.exists():
            raise ValueError(f"{path}: missing face labels {faces_file.name}")
        face_labels = metrics.read_labels(faces_file)
        if len(face_labels) != len(mesh.faces):
            raise ValueError(f"{faces_file}: {len(face_labels)} labels for {len(mesh.faces)} faces")
        extra = {}
        if Path(f"{stem}.edges.txt").exists():
            extra["edge_labels"] = metrics.read_labels(f"{stem}.edges.txt")
        if Path(f"{stem}.soft.txt").exists():
            extra["soft_labels"] = metrics.read_soft_labels(f"{stem}.soft.txt")
        samples.append(make_sample(mesh, config, face_labels=face_labels, **extra))
    found = 1 + max(int(s.face_labels.max()) for s in samples)
    return Dataset("segmentation", max(found, n_classes or 0), samples)


def load_dataset(root, task: str | None = None, config: str = "A") -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"{root}: not a directory")
    if task is None:
        task = "segmentation" if any(root.glob("*.obj")) else "classification"
    if task == "classification":
        return load_classification_dataset(root, config)
    ds = load_segmentation_dataset(root, config)
    ds.task = task
    return ds


def write_classification_dataset(meshes_by_class: dict, root):
    root = Path(root)
    for c, meshes in meshes_by_class.items():
        (root / c).mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(meshes):
            save_obj(m, root / c / f"{k:03d}.obj")


def write_segmentation_sample(mesh: Mesh, face_labels, root, stem: str):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_obj(mesh, root / f"{stem}.obj")
    metrics.write_labels(face_labels, root / f"{stem}.faces.txt")


def synthetic_classification_meshes(n_per_class: int = 8, seed: int = 0, sigma: float = 0.01) -> dict:
    """Jittered icospheres (320 faces) and jittered boxes (300 faces)."""
    rng = np.random.default_rng(seed)
    out = {"box": [], "sphere": []}
    for k in range(n_per_class):
        out["sphere"].append(_named(shapes.jitter(shapes.icosphere(2), sigma, rng), f"sphere{k}"))
        out["box"].append(_named(shapes.jitter(shapes.box(5), sigma, rng), f"box{k}"))
    return out


def synthetic_classification_set(n_per_class: int = 8, seed: int = 0, config: str = "A") -> Dataset:
    meshes = synthetic_classification_meshes(n_per_class, seed)
    ds = Dataset("classification", 2, class_names=sorted(meshes))
    for k, c in enumerate(ds.class_names):
        ds.samples += [make_sample(m, config, label=k) for m in meshes[c]]
    return ds


def synthetic_segmentation_mesh():
    """500-face dome: label 1 on the curved cap, 0 on the flat disk."""
    mesh = shapes.dome(25, 6, 5)
    labels = (np.arange(len(mesh.faces)) < 25 * (2 * 6 - 1)).astype(np.int64)
    return mesh, labels


def synthetic_segmentation_set(config: str = "A", task: str = "segmentation") -> Dataset:
    mesh, labels = synthetic_segmentation_mesh()
    return Dataset(task, 2, [make_sample(mesh, config, face_labels=labels)])


def _named(mesh: Mesh, name: str) -> Mesh:
    mesh.name = name
    return mesh


def augment_dataset(dataset: Dataset, copies: int = 1, max_shift: float = 0.2, seed: int = 0,
                    config: str | None = None) -> Dataset:
    """Add ``copies`` vertex-slid versions of every sample (connectivity unchanged)."""
    rng = np.random.default_rng(seed)
    config = config or dataset.samples[0].pair.config
    extra = []
    for s in dataset.samples:
        for k in range(copies):
            m = _named(shapes.slide_vertices(s.mesh, max_shift, rng), f"{s.name}~aug{k}")
            extra.append(make_sample(m, config, label=s.label, face_labels=s.face_labels,
                                     edge_labels=s.edge_labels, soft_labels=s.soft_labels))
    return Dataset(dataset.task, dataset.n_classes, dataset.samples + extra, dataset.class_names)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _targets(samples: list[Sample], task: str) -> np.ndarray:
    if task == "classification":
        if any(s.label is None for s in samples):
            raise TrainingError("classification sample without a class label")
        return np.array([s.label for s in samples], dtype=np.int64)
    if any(s.face_labels is None for s in samples):
        raise TrainingError("segmentation sample without face labels")
    return np.concatenate([s.face_labels for s in samples])


def forward_batch(model, samples: list[Sample]):
    pair, index = batch_graphs([s.pair for s in samples])
    return model(pair), index


class Trainer:
    """Adam on cross-entropy, one seeded shuffle per epoch."""

    def __init__(self, model, config: TrainConfig, optimizer: ag.Adam | None = None,
                 rng: np.random.Generator | None = None):
        self.model = model
        self.config = config
        self.optimizer = optimizer or ag.Adam(model.named_parameters(), lr=config.lr)
        self.rng = rng or np.random.default_rng(config.seed)
        self.epoch = 0
        self.history: list[EpochStats] = []

    def _check_task(self, dataset: Dataset):
        task = self.model.spec.task
        if (task == "classification") != (dataset.task == "classification"):
            raise TrainingError(f"model task {task!r} does not match dataset task {dataset.task!r}")
        if dataset.n_classes > self.model.spec.n_classes:
            raise TrainingError(f"dataset has {dataset.n_classes} classes, model predicts "
                                f"{self.model.spec.n_classes}")

    def train_epoch(self, dataset: Dataset) -> EpochStats:
        if len(dataset) == 0:
            raise TrainingError("empty dataset")
        self._check_task(dataset)
        self.model.train()
        order = self.rng.permutation(len(dataset))
        bs = self.config.batch_size
        total, count, correct, n_items = 0.0, 0, 0, 0
        for start in range(0, len(order), bs):
            batch = [dataset.samples[i] for i in order[start:start + bs]]
            target = _targets(batch, dataset.task)
            out, _ = forward_batch(self.model, batch)
            loss = ag.cross_entropy(out.logits, target)
            value = loss.item()
            if not math.isfinite(value):
                names = ", ".join(s.name for s in batch)
                raise TrainingError(f"non-finite loss {value} at epoch {self.epoch + 1}, "
                                    f"batch starting at {start} ({names})")
            self.optimizer.zero_grad()
            ag.backward(loss)
            self.optimizer.step()
            total += value * len(target)
            count += len(target)
            correct += int(np.count_nonzero(out.logits.data.argmax(axis=1) == target))
            n_items += len(target)
        self.epoch += 1
        stats = EpochStats(self.epoch, total / count, 100.0 * correct / n_items)
        self.history.append(stats)
        log.info("epoch %d loss %.6f acc %.2f", stats.epoch, stats.loss, stats.accuracy)
        return stats

    def fit(self, dataset: Dataset, epochs: int | None = None, callback=None, stop_at: float | None = None):
        for _ in range(self.config.epochs if epochs is None else epochs):
            stats = self.train_epoch(dataset)
            if callback:
                callback(stats)
            if stop_at is not None and stats.accuracy >= stop_at:
                break
        return self.history


def predict(model, dataset: Dataset, batch_size: int = 16) -> list[np.ndarray]:
    """Per-sample logits in eval mode: one row per mesh (classification) or per face."""
    was_training = model.training
    model.eval()
    try:
        out_rows = []
        for start in range(0, len(dataset), batch_size):
            batch = dataset.samples[start:start + batch_size]
            out, index = forward_batch(model, batch)
            logits = out.logits.data
            if dataset.task == "classification":
                out_rows += [logits[k:k + 1] for k in range(len(batch))]
            else:
                out_rows += index.split_faces(logits)
        return out_rows
    finally:
        model.train(was_training)


def evaluate(model, dataset: Dataset, task: str | None = None, batch_size: int = 16) -> dict:
    """Accuracy for classification; face / hard-edge / soft-edge accuracy for segmentation.

    Segmentation scores are averaged over meshes.
    """
    task = task or dataset.task
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if (task == "classification") != (dataset.task == "classification") or \
            (task == "classification") != (model.spec.task == "classification"):
        raise ValueError(f"task {task!r} does not match dataset ({dataset.task}) "
                         f"and model ({model.spec.task})")
    if dataset.n_classes > model.spec.n_classes:
        raise ValueError(f"dataset has {dataset.n_classes} classes, model predicts {model.spec.n_classes}")
    logits = predict(model, dataset, batch_size)
    if task == "classification":
        pred = np.array([row[0].argmax() for row in logits])
        return {"accuracy": metrics.classification_accuracy(pred, _targets(dataset.samples, task))}
    rows = []
    for s, lg in zip(dataset.samples, logits):
        pred = lg.argmax(axis=1)
        rows.append(metrics.segmentation_metrics(pred, s.face_labels, s.topology, s.mesh,
                                                 gt_edges=s.edge_labels, gt_soft=s.soft_labels))
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
