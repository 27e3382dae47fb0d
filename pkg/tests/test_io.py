import numpy as np
import pytest

from pdmesh import io as pio
from pdmesh import shapes
from pdmesh.models import ArchitectureSpec, build_model
from pdmesh.train import Dataset, TrainConfig, Trainer, evaluate, make_sample


def trained(task="classification", epochs=2):
    if task == "classification":
        ds = Dataset(task, 2, [make_sample(shapes.random_hull(20, seed=s), label=s % 2) for s in range(4)])
        spec = ArchitectureSpec(task, 2, heads=2, widths=(4, 8), hidden=6, attention_init="glorot")
    else:
        m = shapes.icosphere(1)
        ds = Dataset(task, 2, [make_sample(m, face_labels=(m.vertices[m.faces].mean(1)[:, 2] > 0).astype(int))])
        spec = ArchitectureSpec(task, 2, heads=2, widths=(2, 4, 4, 8), attention_init="glorot")
    tr = Trainer(build_model(spec, seed=1), TrainConfig(lr=1e-3, batch_size=2, task=task, seed=3))
    tr.fit(ds, epochs=epochs)
    return tr, ds


@pytest.mark.parametrize("task", ["classification", "segmentation"])
def test_checkpoint_round_trip_bytes(tmp_path, task):
    tr, ds = trained(task)
    ck = pio.checkpoint_from_trainer(tr)
    pio.save_checkpoint(ck, tmp_path / "a.ckpt")
    back = pio.load_checkpoint(tmp_path / "a.ckpt")
    pio.save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes()[0] == pio.FORMAT_VERSION
    assert back.arch == tr.model.spec and back.step == tr.optimizer.state["t"]
    # metrics survive the round trip exactly
    assert evaluate(pio.model_from_checkpoint(back), ds) == evaluate(tr.model, ds)


def test_resume_continues_trajectory():
    tr, ds = trained(epochs=2)
    ck = pio.parse_checkpoint(pio.checkpoint_bytes(pio.checkpoint_from_trainer(tr)))
    resumed = pio.trainer_from_checkpoint(ck)
    tr.fit(ds, epochs=2)
    resumed.fit(ds, epochs=2)
    assert [(s.loss, s.accuracy) for s in resumed.history] == [(s.loss, s.accuracy) for s in tr.history]
    for k, p in tr.model.named_parameters().items():
        assert np.array_equal(p.data, resumed.model.named_parameters()[k].data)


def test_corrupt_checkpoints(tmp_path):
    tr, _ = trained(epochs=1)
    data = pio.checkpoint_bytes(pio.checkpoint_from_trainer(tr))
    with pytest.raises(pio.CheckpointError):
        pio.parse_checkpoint(bytes([99]) + data[1:])
    with pytest.raises(pio.CheckpointError):
        pio.parse_checkpoint(data[: len(data) // 2])
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(pio.CheckpointError, match="empty"):
        pio.load_checkpoint(tmp_path / "empty")
    with pytest.raises(pio.CheckpointError):
        pio.load_checkpoint(tmp_path / "missing")


def test_palette_deterministic_and_distinct():
    ids = np.arange(5000)
    a, b = pio.palette(ids), pio.palette(ids)
    assert np.array_equal(a, b) and a.dtype == np.uint8
    assert len({tuple(c) for c in a.tolist()}) == 5000


def test_ply_colors(tmp_path):
    m = shapes.icosahedron()
    labels = np.arange(20) % 4
    pio.export_colored(m, labels, tmp_path / "x.ply")
    colors = pio.read_ply_face_colors(tmp_path / "x.ply")
    assert colors.shape == (20, 3)
    assert len({tuple(c) for c in colors.tolist()}) == 4
    assert np.array_equal(colors, pio.palette(labels))
    with pytest.raises(ValueError):
        pio.write_ply(m, np.zeros((3, 3)), tmp_path / "y.ply")


def test_config_text():
    v = pio.parse_config_text("# comment\nlr = 0.001\nbatch = 4\nwidths = 8, 16\nself_loops = yes\n")
    assert v == {"lr": 0.001, "batch_size": 4, "widths": (8, 16), "self_loops": True}
    with pytest.raises(pio.ConfigError) as exc:
        pio.parse_config_text("lr = 1\nlearning_rate = 2\n")
    assert exc.value.key == "learning_rate" and ":2:" in str(exc.value)
    with pytest.raises(pio.ConfigError, match="expected 'key = value'"):
        pio.parse_config_text("lr 1\n")
    with pytest.raises(pio.ConfigError, match="bad value"):
        pio.parse_config_text("epochs = many\n")


def test_split_config():
    tc, spec = pio.split_config({"lr": 1e-3, "heads": 2, "pool_fraction": 0.3, "task": "segmentation"}, 4)
    assert tc.lr == 1e-3 and tc.task == "segmentation"
    assert spec.fractions == (0.3, 0.3, 0.3) and spec.n_classes == 4 and spec.heads == 2
