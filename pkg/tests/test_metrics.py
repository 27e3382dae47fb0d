import numpy as np
import pytest
from oracles import brute_interior, edge_accuracy_17, edge_accuracy_18, edge_accuracy_20, strip

from pdmesh import shapes
from pdmesh.mesh import Mesh, build_topology
from pdmesh.metrics import (
    LabelSet,
    classification_accuracy,
    edge_accuracy_hard,
    edge_accuracy_hard_from_faces,
    edge_accuracy_soft_from_faces,
    edge_lengths,
    face_label_accuracy,
    face_to_soft_edge,
    majority_vote_faces,
    read_labels,
    read_soft_labels,
    segmentation_metrics,
    write_labels,
)


def test_strip_shape():
    m = strip()
    t = build_topology(m)
    assert m.n_faces == 10
    assert len(t.interior_edges) == 9 == len(brute_interior(m))


def test_majority_vote_examples():
    m = shapes.single_triangle()
    t = build_topology(m)
    for edges, want in (((2, 2, 5), 2), ((4, 4, 4), 4), ((5, 2, 2), 2)):
        lab, exc = majority_vote_faces(np.array(edges), t)
        assert lab.tolist() == [want] and not exc.any()
    lab, exc = majority_vote_faces(np.array([1, 2, 3]), t)
    assert exc.tolist() == [True] and lab.tolist() == [-1]
    lab, exc = majority_vote_faces(np.array([3, 1, 2]), t, mode="ground_truth")
    assert lab.tolist() == [1] and not exc.any()
    with pytest.raises(ValueError, match="missing edge label"):
        majority_vote_faces(np.array([1, 2]), t)
    with pytest.raises(ValueError, match="missing edge label"):
        majority_vote_faces(np.array([1, -1, 2]), t)


def test_face_to_soft_edge_examples():
    m = strip()
    t = build_topology(m)
    faces = np.array([3, 3, 3, 1, 1, 0, 0, 0, 2, 2])
    ids, pairs = face_to_soft_edge(faces, t)
    for e, (la, lb) in zip(ids, pairs):
        a, b = t.edge_faces[e]
        assert (la, lb) == (faces[a], faces[b])
    # the edge between faces 0 and 1 is interior to the class-3 region
    e01 = next(i for i, e in enumerate(ids) if t.edge_faces[e] == [0, 1])
    assert tuple(pairs[e01]) == (3, 3)
    assert len(ids) == 9  # boundary edges are skipped


def test_face_accuracy_examples():
    assert face_label_accuracy([1, 2, 3], [1, 2, 3]) == 100.0
    gt = np.arange(10) % 3
    pred = gt.copy()
    pred[:5] = (pred[:5] + 1) % 3
    assert face_label_accuracy(pred, gt) == 50.0
    pred = gt.copy()
    pred[4] = (pred[4] + 1) % 3
    excluded = np.zeros(10, bool)
    excluded[4] = True
    assert face_label_accuracy(pred, gt, excluded) == 100.0
    with pytest.raises(ValueError):
        face_label_accuracy([1], [1], [True])
    with pytest.raises(ValueError):
        face_label_accuracy([1, 2], [1])


def test_hard_edge_examples():
    assert edge_accuracy_hard([1, 2, 3, 4], [1, 2, 3, 4]) == 100.0
    assert edge_accuracy_hard([1, 2, 3, 0], [1, 2, 3, 4]) == 75.0
    with pytest.raises(ValueError, match="empty"):
        edge_accuracy_hard([], [])


def test_hard_from_faces_examples():
    m = strip()
    t = build_topology(m)
    faces = np.zeros(10, int)
    gt = np.zeros(t.n_edges, int)
    assert edge_accuracy_hard_from_faces(faces, gt, t) == 100.0
    # face parity: every interior edge joins an even and an odd face
    half = np.arange(10) % 2
    assert edge_accuracy_hard_from_faces(half, gt, t) == 50.0
    assert edge_accuracy_hard_from_faces(1 - half, gt, t) == 50.0


@pytest.mark.parametrize("seed", range(5))
def test_strip_against_direct_summation(seed):
    rng = np.random.default_rng(seed)
    m = strip(jitter=0.3, seed=seed)
    t = build_topology(m)
    keys = [tuple(map(int, t.edges[e])) for e in t.interior_edges]
    pred_faces = rng.integers(0, 3, 10)
    gt_faces = rng.integers(0, 3, 10)
    gt_edges = rng.integers(0, 3, t.n_edges)
    pred_edges = rng.integers(0, 3, t.n_edges)

    assert abs(edge_accuracy_hard(pred_edges, gt_edges) - edge_accuracy_17(pred_edges, gt_edges)) <= 1e-12

    gt_of_edge = {tuple(map(int, t.edges[e])): gt_edges[e] for e in range(t.n_edges)}
    got = edge_accuracy_hard_from_faces(pred_faces, gt_edges, t)
    assert abs(got - edge_accuracy_18(m, pred_faces, gt_of_edge)) <= 1e-12

    _, soft = face_to_soft_edge(gt_faces, t)
    soft_of_edge = {k: tuple(p) for k, p in zip(keys, soft.tolist())}
    got = edge_accuracy_soft_from_faces(pred_faces, soft, edge_lengths(m, t), t)
    assert abs(got - edge_accuracy_20(m, pred_faces, soft_of_edge)) <= 1e-12


def test_hard_from_faces_symmetric():
    m = strip()
    t = build_topology(m)
    rng = np.random.default_rng(4)
    pred, gt = rng.integers(0, 2, 10), rng.integers(0, 2, t.n_edges)
    flipped = Mesh(m.vertices, m.faces[::-1].copy())
    tf = build_topology(flipped)
    # same mesh with face ids reversed: the two face contributions swap roles
    assert edge_accuracy_hard_from_faces(pred, gt, t) == edge_accuracy_hard_from_faces(pred[::-1], gt, tf)


def test_soft_reduces_to_hard_at_uniform_lengths():
    m = strip()
    t = build_topology(m)
    rng = np.random.default_rng(1)
    pred = rng.integers(0, 3, 10)
    _, soft = face_to_soft_edge(rng.integers(0, 3, 10), t)
    uniform = np.ones(t.n_edges)
    for c in range(3):
        # a soft pair (c, c) is hard label c
        hard_soft = np.full_like(soft, c)
        want = edge_accuracy_hard_from_faces(pred, np.full(t.n_edges, c), t)
        assert edge_accuracy_soft_from_faces(pred, hard_soft, uniform, t) == pytest.approx(want, abs=1e-12)
    # scaling every length leaves the score unchanged
    a = edge_accuracy_soft_from_faces(pred, soft, uniform, t)
    b = edge_accuracy_soft_from_faces(pred, soft, 3.7 * uniform, t)
    assert a == pytest.approx(b, abs=1e-12)


def test_soft_doubling_one_edge_doubles_its_weight():
    m = strip()
    t = build_topology(m)
    n = len(t.interior_edges)
    soft = np.zeros((n, 2), int)
    pred = np.ones(10, int)
    # only edge k is scored correct on both sides
    k = 4
    a, b = t.edge_faces[t.interior_edges[k]]
    pred[[a, b]] = 0
    soft[:] = 2
    soft[k] = 0
    lengths = np.ones(n)
    base = edge_accuracy_soft_from_faces(pred, soft, lengths, t)
    assert base == pytest.approx(100.0 / n, abs=1e-12)
    lengths[k] = 2.0
    doubled = edge_accuracy_soft_from_faces(pred, soft, lengths, t)
    # weight relative to the mean: 2 / ((n + 1) / n)
    assert doubled == pytest.approx(100.0 * 2 / (n + 1), abs=1e-12)


def test_perfect_prediction_is_exactly_100():
    for m in (strip(jitter=0.3), shapes.random_hull(80, seed=2), shapes.icosphere(2)):
        t = build_topology(m)
        gt = np.random.default_rng(0).integers(0, 4, m.n_faces)
        r = segmentation_metrics(gt, gt, t, m)
        assert r == {"face": 100.0, "hard_edge": 100.0, "soft_edge": 100.0}
        e = np.random.default_rng(1).integers(0, 4, t.n_edges)
        assert edge_accuracy_hard(e, e) == 100.0
    assert classification_accuracy([0, 1, 1], [0, 1, 1]) == 100.0


def test_accuracies_in_range():
    m = shapes.random_hull(60, seed=7)
    t = build_topology(m)
    rng = np.random.default_rng(3)
    for _ in range(20):
        r = segmentation_metrics(rng.integers(0, 3, m.n_faces), rng.integers(0, 3, m.n_faces), t, m)
        assert all(0.0 <= v <= 100.0 for v in r.values())


def test_vote_then_soft_round_trip():
    # two regions: every edge takes the label of its region, boundary edges the smaller one
    m = strip()
    t = build_topology(m)
    faces = np.array([0] * 5 + [1] * 5)
    edge = np.array([min(faces[f] for f in t.edge_faces[e]) for e in range(t.n_edges)])
    voted, exc = majority_vote_faces(edge, t, mode="ground_truth")
    assert np.array_equal(voted, faces) and not exc.any()
    _, pairs = face_to_soft_edge(voted, t)
    _, want = face_to_soft_edge(faces, t)
    assert np.array_equal(pairs, want)


def test_label_set_validation():
    LabelSet(3, faces=[0, 1, 2], soft=[[0, 2]])
    with pytest.raises(ValueError):
        LabelSet(3, faces=[0, 3])
    with pytest.raises(ValueError):
        LabelSet(2, soft=[[0, -1]])


def test_label_files(tmp_path):
    write_labels(np.array([3, 0, 2]), tmp_path / "f.txt")
    assert read_labels(tmp_path / "f.txt").tolist() == [3, 0, 2]
    write_labels(np.array([[1, 2], [0, 0]]), tmp_path / "s.txt")
    assert read_soft_labels(tmp_path / "s.txt").tolist() == [[1, 2], [0, 0]]
    (tmp_path / "bad.txt").write_text("1 2\n")
    with pytest.raises(ValueError):
        read_labels(tmp_path / "bad.txt")
