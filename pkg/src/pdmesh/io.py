"""Checkpoint container, colored PLY export and the key = value config file.

Checkpoint layout (all integers little-endian)::

    u8  format version
    repeated sections:  u32 name length, name (utf-8), u64 payload length, payload

Sections, in order: ``arch`` (JSON), ``params`` and ``buffers`` (array
tables), ``optimizer`` (u64 step, then the first- and second-moment tables),
``train_config`` and ``rng`` and ``history`` (JSON). An array table is a u32
count followed by, per array in name order: u32 name length, name, u32 ndim,
u64 per dim, float64 data.
"""

from __future__ import annotations

import io as _io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .models import ArchitectureSpec, build_model
from .train import EpochStats, TrainConfig, Trainer

FORMAT_VERSION = 1
SECTIONS = ("arch", "params", "buffers", "optimizer", "train_config", "rng", "history")


class CheckpointError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    params: dict  # name -> float64 array
    buffers: dict = field(default_factory=dict)
    step: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)  # [epoch, loss, accuracy] rows


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_table(arrays: dict) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        out.append(_pack_str(name))
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def _pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode("utf-8")


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.buf, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated {self.what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def table(self) -> dict:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            name = self.string()
            (ndim,) = self.unpack("<I")
            shape = self.unpack(f"<{ndim}Q") if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(self.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        return out

    def done(self) -> bool:
        return self.pos == len(self.buf)


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    payloads = {
        "arch": ck.arch.to_json().encode("utf-8"),
        "params": _pack_table(ck.params),
        "buffers": _pack_table(ck.buffers),
        "optimizer": struct.pack("<Q", ck.step) + _pack_table(ck.adam_m) + _pack_table(ck.adam_v),
        "train_config": _pack_json(ck.train_config),
        "rng": _pack_json(ck.rng_state),
        "history": _pack_json(ck.history),
    }
    out = [struct.pack("<B", FORMAT_VERSION)]
    for name in SECTIONS:
        out.append(_pack_str(name))
        out.append(struct.pack("<Q", len(payloads[name])))
        out.append(payloads[name])
    return b"".join(out)


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data, "checkpoint")
    (version,) = r.unpack("<B")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    sections = {}
    while not r.done():
        name = r.string()
        (n,) = r.unpack("<Q")
        sections[name] = r.take(n)
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise CheckpointError(f"checkpoint lacks sections {missing}")
    opt = _Reader(sections["optimizer"], "optimizer section")
    (step,) = opt.unpack("<Q")
    m, v = opt.table(), opt.table()
    return Checkpoint(
        arch=ArchitectureSpec.from_json(sections["arch"].decode("utf-8")),
        params=_Reader(sections["params"], "params section").table(),
        buffers=_Reader(sections["buffers"], "buffers section").table(),
        step=step, adam_m=m, adam_v=v,
        train_config=json.loads(sections["train_config"]),
        rng_state=json.loads(sections["rng"]),
        history=json.loads(sections["history"]),
    )


def save_checkpoint(ck: Checkpoint, path):
    Path(path).write_bytes(checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not data:
        raise CheckpointError(f"{path}: empty file")
    return parse_checkpoint(data)


def checkpoint_from_trainer(trainer: Trainer) -> Checkpoint:
    model, opt = trainer.model, trainer.optimizer
    return Checkpoint(
        arch=model.spec,
        params={k: p.data.copy() for k, p in model.named_parameters().items()},
        buffers={k: v.copy() for k, v in model.buffers().items()},
        step=int(opt.state["t"]),
        adam_m={k: v.copy() for k, v in opt.state["m"].items()},
        adam_v={k: v.copy() for k, v in opt.state["v"].items()},
        train_config=asdict(trainer.config),
        rng_state=trainer.rng.bit_generator.state,
        history=[[s.epoch, s.loss, s.accuracy] for s in trainer.history],
    )


def model_from_checkpoint(ck: Checkpoint):
    model = build_model(ck.arch, seed=0)
    named = model.named_parameters()
    if set(named) != set(ck.params):
        raise CheckpointError(f"parameter names differ from the architecture: "
                              f"{sorted(set(named) ^ set(ck.params))[:5]}")
    for k, p in named.items():
        if p.data.shape != ck.params[k].shape:
            raise CheckpointError(f"{k}: shape {ck.params[k].shape} != {p.data.shape}")
        p.data[...] = ck.params[k]
    buffers = model.buffers()
    for k, arr in ck.buffers.items():
        if k not in buffers:
            raise CheckpointError(f"unknown buffer {k}")
        buffers[k][...] = arr
    return model


def trainer_from_checkpoint(ck: Checkpoint, **overrides) -> Trainer:
    """Rebuild model, optimizer and RNG so training resumes on the same trajectory."""
    model = model_from_checkpoint(ck)
    cfg = TrainConfig(**{**ck.train_config, **overrides})
    trainer = Trainer(model, cfg)
    trainer.optimizer.state = {"t": ck.step, "m": {k: v.copy() for k, v in ck.adam_m.items()},
                               "v": {k: v.copy() for k, v in ck.adam_v.items()}}
    trainer.rng.bit_generator.state = ck.rng_state
    trainer.history = [EpochStats(int(e), float(lo), float(a)) for e, lo, a in ck.history]
    trainer.epoch = len(trainer.history)
    return trainer


# ---------------------------------------------------------------------------
# colored export


def palette(ids) -> np.ndarray:
    """RGB colors from a bijective 24-bit hash, so distinct ids get distinct colors."""
    x = (np.asarray(ids, dtype=np.int64) * 0x9E3779 + 0x5BD1E9) & 0xFFFFFF
    x ^= x >> 12
    x = (x * 0x2545F5) & 0xFFFFFF
    x ^= x >> 11
    return np.stack([(x >> 16) & 255, (x >> 8) & 255, x & 255], axis=1).astype(np.uint8)


def write_ply(mesh: Mesh, face_colors: np.ndarray, path):
    face_colors = np.asarray(face_colors, dtype=np.uint8)
    if face_colors.shape != (len(mesh.faces), 3):
        raise ValueError(f"need one RGB row per face, got shape {face_colors.shape}")
    buf = _io.StringIO()
    buf.write("ply\nformat ascii 1.0\n")
    buf.write(f"element vertex {len(mesh.vertices)}\n")
    buf.write("property double x\nproperty double y\nproperty double z\n")
    buf.write(f"element face {len(mesh.faces)}\n")
    buf.write("property list uchar int vertex_indices\n")
    buf.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
    for x, y, z in mesh.vertices.tolist():
        buf.write(f"{x!r} {y!r} {z!r}\n")
    for f, c in zip(mesh.faces, face_colors):
        buf.write(f"3 {f[0]} {f[1]} {f[2]} {c[0]} {c[1]} {c[2]}\n")
    Path(path).write_text(buf.getvalue())


def read_ply_face_colors(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    end = lines.index("end_header")
    n_v = int(next(ln.split()[-1] for ln in lines if ln.startswith("element vertex")))
    rows = [ln.split() for ln in lines[end + 1 + n_v:] if ln.strip()]
    return np.array([[int(x) for x in r[4:7]] for r in rows], dtype=np.uint8)


def export_colored(mesh: Mesh, labels, path):
    """One color per distinct label (cluster id or class id)."""
    write_ply(mesh, palette(labels), path)


# ---------------------------------------------------------------------------
# config file


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(",", " ").split())


CONFIG_KEYS = {
    # training
    "task": str, "lr": float, "epochs": int, "batch_size": int, "seed": int,
    "aggregation": str, "config": str, "augment": _bool,
    # architecture
    "n_classes": int, "heads": int, "widths": _ints, "fractions": _floats, "pool_fraction": float,
    "hidden": int, "decoder_heads": int, "attention_init": str, "self_loops": _bool,
}
ALIASES = {"batch": "batch_size", "pool_agg": "aggregation", "pool-agg": "aggregation",
           "pool-fraction": "pool_fraction", "classes": "n_classes"}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys raise :class:`ConfigError`."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = ALIASES.get(key, key)
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}", key=key)
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}", key=key) from exc
    return out


def read_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text(), str(path))


def split_config(values: dict, n_classes: int, task: str | None = None):
    """Turn parsed config values into ``(TrainConfig, ArchitectureSpec)``."""
    train_keys = set(TrainConfig.keys())
    tc = TrainConfig(**{k: v for k, v in values.items() if k in train_keys})
    if task:
        tc.task = task
    arch = {k: v for k, v in values.items() if k not in train_keys and k not in ("pool_fraction", "n_classes")}
    if "pool_fraction" in values:
        n_pools = {"classification": 2, "segmentation": 3, "superpixel": 5}.get(tc.task, 2)
        arch["fractions"] = (values["pool_fraction"],) * n_pools
    spec = ArchitectureSpec(tc.task, values.get("n_classes", n_classes), config=tc.config,
                            aggregation=tc.aggregation, **arch)
    return tc, spec
