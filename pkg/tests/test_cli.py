import json

import numpy as np
import pytest

from pdmesh import io as pio
from pdmesh import shapes
from pdmesh.cli import main
from pdmesh.mesh import save_obj
from pdmesh.train import write_classification_dataset, write_segmentation_sample


@pytest.fixture
def tetra(tmp_path):
    path = tmp_path / "tetra.obj"
    save_obj(shapes.tetrahedron(), path)
    return path


@pytest.fixture
def fin(tmp_path):
    path = tmp_path / "fin.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0.5 1 0\nv 0.5 -1 0\nv 0.5 0 1\n"
                    "f 1 2 3\nf 2 1 4\nf 1 2 5\n")
    return path


@pytest.fixture
def cls_root(tmp_path):
    root = tmp_path / "cls"
    write_classification_dataset({"a": [shapes.random_hull(20, seed=s) for s in range(2)],
                                  "b": [shapes.random_sphere_hull(14, seed=s) for s in range(2)]}, root)
    return root


@pytest.fixture
def seg_root(tmp_path):
    root = tmp_path / "seg"
    m = shapes.icosphere(1)
    labels = (m.vertices[m.faces].mean(1)[:, 2] > 0).astype(int)
    write_segmentation_sample(m, labels, root, "ball")
    return root


SMALL = ["--heads", "2", "--epochs", "2", "--lr", "1e-3", "--batch", "2", "--seed", "1"]


def small_config(tmp_path, widths="4, 8", extra=""):
    path = tmp_path / "small.cfg"
    path.write_text(f"widths = {widths}\nhidden = 6\nattention_init = glorot\n{extra}")
    return path


def test_build_graph_theorem_line(tetra, capsys):
    assert main(["build-graph", str(tetra), "--config", "A", "--verify-theorem"]) == 0
    assert "theorem: pass, primal 4/6, dual 6/12" in capsys.readouterr().out


def test_build_graph_config_c_dump(tetra, tmp_path, capsys):
    out = tmp_path / "g.json"
    assert main(["build-graph", str(tetra), "--config", "C", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["dual"]["directed"] and d["dual"]["n_nodes"] == 2 * len(d["primal"]["edges"])
    assert "2 nodes per primal edge" in capsys.readouterr().out


def test_build_graph_torus_theorem_skipped(tmp_path, capsys):
    path = tmp_path / "torus.obj"
    save_obj(shapes.torus(), path)
    assert main(["build-graph", str(path), "--verify-theorem"]) == 0
    assert "theorem: skipped" in capsys.readouterr().out


def test_non_manifold_exit_2(fin, capsys):
    assert main(["build-graph", str(fin)]) == 2
    cap = capsys.readouterr()
    # vertices 1-2 in OBJ numbering are 0-1 zero-based
    assert "non-manifold edge 0 (0-1) shared by faces [0, 1, 2]" in cap.out
    assert "not edge-manifold" in cap.err


def test_missing_mesh_exit_1(tmp_path, capsys):
    assert main(["build-graph", str(tmp_path / "none.obj")]) == 1
    assert main(["nonsense"]) == 1


def test_invalid_config_key(cls_root, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("lr = 0.001\nmomentum = 0.9\n")
    code = main(["train", str(cls_root), "--config-file", str(bad), "--out", str(tmp_path / "m.ckpt")])
    assert code == 1
    assert "momentum" in capsys.readouterr().err


def test_train_eval_classification(cls_root, tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    log = tmp_path / "log.jsonl"
    cfg = small_config(tmp_path)
    assert main(["train", str(cls_root), "--config-file", str(cfg), "--out", str(ck),
                 "--log", str(log)] + SMALL) == 0
    out = capsys.readouterr().out
    assert "final train accuracy" in out
    rows = [json.loads(x) for x in log.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    assert main(["eval", str(ck), str(cls_root), "--json", str(tmp_path / "m.json")]) == 0
    out = capsys.readouterr().out
    assert "accuracy" in out
    assert set(json.loads((tmp_path / "m.json").read_text())) == {"accuracy"}


def test_eval_segmentation_columns(seg_root, tmp_path, capsys):
    ck = tmp_path / "s.ckpt"
    cfg = small_config(tmp_path, widths="2, 4, 4, 8")
    assert main(["train", str(seg_root), "--task", "segmentation", "--config-file", str(cfg),
                 "--out", str(ck)] + SMALL) == 0
    capsys.readouterr()
    assert main(["eval", str(ck), str(seg_root)]) == 0
    header = capsys.readouterr().out.splitlines()[0].split()
    assert header == ["face", "hard-edge", "soft-edge"]


def test_eval_class_mismatch_and_empty(cls_root, tmp_path, capsys):
    ck = tmp_path / "m.ckpt"
    cfg = small_config(tmp_path)
    assert main(["train", str(cls_root), "--config-file", str(cfg), "--out", str(ck)] + SMALL) == 0
    three = tmp_path / "three"
    write_classification_dataset({c: [shapes.tetrahedron()] for c in "xyz"}, three)
    assert main(["eval", str(ck), str(three)]) == 1
    assert "classes" in capsys.readouterr().err
    (tmp_path / "empty").mkdir()
    assert main(["eval", str(ck), str(tmp_path / "empty")]) == 1


def test_resume_matches_uninterrupted(cls_root, tmp_path):
    cfg = small_config(tmp_path)
    full, half = tmp_path / "full.ckpt", tmp_path / "half.ckpt"
    args = ["--config-file", str(cfg), "--heads", "2", "--lr", "1e-3", "--batch", "2", "--seed", "1"]
    assert main(["train", str(cls_root), "--out", str(full), "--epochs", "4"] + args) == 0
    assert main(["train", str(cls_root), "--out", str(half), "--epochs", "2"] + args) == 0
    resumed = tmp_path / "resumed.ckpt"
    assert main(["train", str(cls_root), "--resume", str(half), "--out", str(resumed), "--epochs", "4"]) == 0
    assert full.read_bytes() == resumed.read_bytes()


def test_export_clusters(tmp_path, capsys):
    mesh = tmp_path / "ball.obj"
    save_obj(shapes.icosphere(2), mesh)
    out = tmp_path / "c.ply"
    table = tmp_path / "c.txt"
    assert main(["export", str(mesh), "--pools", "2", "--out", str(out), "--table", str(table)]) == 0
    colors = pio.read_ply_face_colors(out)
    clusters = np.loadtxt(table, dtype=int, ndmin=2)[:, -1]
    n_clusters = len(np.unique(clusters))
    assert len({tuple(c) for c in colors.tolist()}) == n_clusters < 320
    assert f"{n_clusters} colors" in capsys.readouterr().out
    again = tmp_path / "d.ply"
    assert main(["export", str(mesh), "--pools", "2", "--out", str(again)]) == 0
    assert out.read_bytes() == again.read_bytes()


def test_export_segmentation(seg_root, tmp_path, capsys):
    ck = tmp_path / "s.ckpt"
    cfg = small_config(tmp_path, widths="2, 4, 4, 8")
    assert main(["train", str(seg_root), "--task", "segmentation", "--config-file", str(cfg),
                 "--out", str(ck)] + SMALL) == 0
    out = tmp_path / "s.ply"
    assert main(["export", str(seg_root / "ball.obj"), "--mode", "segmentation", "--checkpoint", str(ck),
                 "--out", str(out)]) == 0
    colors = pio.read_ply_face_colors(out)
    assert 1 <= len({tuple(c) for c in colors.tolist()}) <= 2
    assert main(["export", str(seg_root / "ball.obj"), "--mode", "segmentation", "--out", str(out)]) == 1


def test_bad_flag_values(tetra):
    assert main(["export", str(tetra), "--out", "x.ply", "--pool-fraction", "1.5"]) == 1
    assert main(["build-graph", str(tetra), "--config", "D"]) == 1


def test_threads_env(tetra, monkeypatch):
    monkeypatch.setenv("PDMESH_THREADS", "1")
    assert main(["build-graph", str(tetra)]) == 0
    monkeypatch.setenv("PDMESH_THREADS", "lots")
    assert main(["build-graph", str(tetra)]) == 1
