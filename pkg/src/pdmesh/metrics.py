"""Label conversions and segmentation / classification accuracies.

Edge labels live on mesh edges in canonical order (``MeshTopology.edges``).
Edge-based scores only consider interior edges: a boundary edge has a single
face and therefore no soft label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshTopology


@dataclass
class LabelSet:
    n_classes: int
    faces: np.ndarray | None = None  # (F,) hard face labels
    edges: np.ndarray | None = None  # (E,) hard labels on all mesh edges
    soft: np.ndarray | None = None  # (E_interior, 2) soft pairs on interior edges

    def __post_init__(self):
        for name in ("faces", "edges", "soft"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.int64)
            setattr(self, name, v)
            if v.size and (v.min() < 0 or v.max() >= self.n_classes):
                raise ValueError(f"{name} labels must lie in [0, {self.n_classes})")


def _interior_faces(topology: MeshTopology):
    ids = topology.interior_edges
    faces = np.array([topology.edge_faces[e] for e in ids], dtype=np.int64).reshape(-1, 2)
    return ids, faces


def _on_interior(values, topology: MeshTopology, what: str) -> np.ndarray:
    """Accept a per-mesh-edge or per-interior-edge array and return the interior part."""
    values = np.asarray(values)
    ids = topology.interior_edges
    if len(values) == topology.n_edges:
        return values[ids]
    if len(values) == len(ids):
        return values
    raise ValueError(f"{what}: expected {topology.n_edges} (all edges) or {len(ids)} "
                     f"(interior edges) entries, got {len(values)}")


def majority_vote_faces(edge_labels, topology: MeshTopology, mode: str = "prediction"):
    """Face labels from the labels of their three edges.

    Returns ``(labels, excluded)``. A face whose three edges disagree pairwise
    is excluded in ``"prediction"`` mode and takes its smallest edge label in
    ``"ground_truth"`` mode. Excluded faces get label -1.
    """
    if mode not in ("prediction", "ground_truth"):
        raise ValueError(f"unknown mode {mode!r}")
    labels = np.asarray(edge_labels)
    if len(labels) != topology.n_edges:
        raise ValueError(f"missing edge label: got {len(labels)} labels for {topology.n_edges} edges")
    if labels.size and labels.min() < 0:
        raise ValueError(f"missing edge label on edge {int(np.argmin(labels))}")
    e = np.sort(labels[topology.face_edges], axis=1)
    # sorted triple: a mode exists iff the middle value repeats a neighbour
    has_mode = (e[:, 0] == e[:, 1]) | (e[:, 1] == e[:, 2])
    out = e[:, 1].astype(np.int64)
    excluded = ~has_mode
    if mode == "prediction":
        out[excluded] = -1
    else:
        out[excluded] = e[excluded, 0]
        excluded = np.zeros_like(excluded)
    return out, excluded


def face_to_soft_edge(face_labels, topology: MeshTopology):
    """Soft pair ``(l_A, l_B)`` per interior edge, ``A < B``; returns ``(edge_ids, pairs)``."""
    ids, faces = _interior_faces(topology)
    return ids, np.asarray(face_labels, dtype=np.int64)[faces]


def face_label_accuracy(pred, gt, excluded=None) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction has {len(pred)} faces, ground truth {len(gt)}")
    keep = np.ones(len(gt), bool) if excluded is None else ~np.asarray(excluded, bool)
    if not keep.any():
        raise ValueError("no faces left to evaluate")
    return 100.0 * np.count_nonzero(pred[keep] == gt[keep]) / np.count_nonzero(keep)


def edge_accuracy_hard(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("edge label lists are not aligned")
    if len(gt) == 0:
        raise ValueError("empty edge set")
    return 100.0 * np.count_nonzero(pred == gt) / len(gt)


def edge_accuracy_hard_from_faces(pred_faces, gt_edge_labels, topology: MeshTopology) -> float:
    """Each interior edge scores half a point per adjacent face predicting its label.

    Edges labelled -1 carry no hard ground truth and are left out.
    """
    _, faces = _interior_faces(topology)
    gt = _on_interior(gt_edge_labels, topology, "ground-truth edge labels")
    keep = gt >= 0
    faces, gt = faces[keep], gt[keep]
    if len(faces) == 0:
        raise ValueError("empty edge set")
    p = np.asarray(pred_faces)[faces]
    score = 0.5 * (p[:, 0] == gt) + 0.5 * (p[:, 1] == gt)
    return 100.0 * score.sum() / len(gt)


def soft_edge_score(label, pair) -> np.ndarray:
    """Length-free part of the soft metric: 1 when ``label`` is one of the pair."""
    label = np.asarray(label)
    return ((label == pair[:, 0]) | (label == pair[:, 1])).astype(float)


def edge_accuracy_soft_from_faces(pred_faces, gt_soft, edge_lengths, topology: MeshTopology) -> float:
    """Length-weighted soft-label accuracy.

    Per edge ``f(l, pair, len) = (len / mean_len) * [l in pair]``, averaged
    over the two adjacent faces and over edges. Written as a weighted mean
    so that a perfect prediction gives exactly 100.
    """
    _, faces = _interior_faces(topology)
    if len(faces) == 0:
        raise ValueError("empty edge set")
    pair = np.asarray(_on_interior(gt_soft, topology, "soft labels")).reshape(-1, 2)
    w = np.asarray(_on_interior(edge_lengths, topology, "edge lengths"), dtype=float)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("edge lengths must be non-negative with a positive total")
    p = np.asarray(pred_faces)[faces]
    s = 0.5 * soft_edge_score(p[:, 0], pair) + 0.5 * soft_edge_score(p[:, 1], pair)
    # same reduction for numerator and denominator: s == 1 everywhere gives exactly 100
    return 100.0 * float(np.sum(w * s)) / float(np.sum(w))


def edge_lengths(mesh: Mesh, topology: MeshTopology) -> np.ndarray:
    v = mesh.vertices[topology.edges]
    return np.linalg.norm(v[:, 0] - v[:, 1], axis=1)


def classification_accuracy(pred, gt) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if len(gt) == 0:
        raise ValueError("empty dataset")
    return 100.0 * np.count_nonzero(pred == gt) / len(gt)


def segmentation_metrics(pred_faces, gt_faces, topology: MeshTopology, mesh: Mesh,
                         gt_edges=None, gt_soft=None) -> dict:
    """Face accuracy and both edge accuracies; edge ground truth defaults to the face labels."""
    ids, derived = face_to_soft_edge(gt_faces, topology)
    if gt_edges is None:
        # an edge between two faces of one class carries that class; others stay unlabelled
        gt_edges = np.where(derived[:, 0] == derived[:, 1], derived[:, 0], -1)
    soft = derived if gt_soft is None else gt_soft
    return {
        "face": face_label_accuracy(pred_faces, gt_faces),
        "hard_edge": edge_accuracy_hard_from_faces(pred_faces, gt_edges, topology),
        "soft_edge": edge_accuracy_soft_from_faces(pred_faces, soft, edge_lengths(mesh, topology), topology),
    }


def read_labels(path) -> np.ndarray:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if any(len(r) != 1 for r in rows):
        raise ValueError(f"{path}: expected one integer per line")
    return np.array([int(r[0]) for r in rows], dtype=np.int64)


def read_soft_labels(path) -> np.ndarray:
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    if any(len(r) != 2 for r in rows):
        raise ValueError(f"{path}: expected two integers per line")
    return np.array([[int(a), int(b)] for a, b in rows], dtype=np.int64).reshape(-1, 2)


def write_labels(labels, path):
    with open(path, "w") as fh:
        for v in np.asarray(labels).reshape(len(labels), -1):
            fh.write(" ".join(str(int(x)) for x in v) + "\n")
