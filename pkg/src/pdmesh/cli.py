"""``pdmesh`` command line: build-graph, train, eval, export.

Exit codes: 0 success, 1 usage / data / config error, 2 non-manifold mesh.
``PDMESH_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .conv import PrimalDualConv
from .graphs import CONFIGS, build_graph_pair, verify_medial_line_equivalence, write_graph_dump
from .mesh import MeshError, NonManifoldError, build_topology, check_edge_manifold, load_obj
from .models import build_model
from .pooling import PoolingConfig, pool, write_cluster_table
from .train import Dataset, Trainer, augment_dataset, evaluate, load_dataset, make_sample, predict

EXIT_OK, EXIT_ERROR, EXIT_NON_MANIFOLD = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}")


def _fraction(s: str) -> float:
    v = float(s)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"pool fraction must lie in (0, 1), got {s}")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _load_mesh(path):
    try:
        return load_obj(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except MeshError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# build-graph


def cmd_build_graph(args) -> int:
    mesh = _load_mesh(args.mesh)
    topo = build_topology(mesh, check_manifold=False)
    report = check_edge_manifold(topo)
    print(report.text(topo))
    if not report.manifold:
        raise CliError(f"{args.mesh}: mesh is not edge-manifold "
                       f"({len(report.offending_edges)} offending edges)", EXIT_NON_MANIFOLD)
    try:
        pair = build_graph_pair(mesh, args.config)
    except NonManifoldError as exc:
        raise CliError(str(exc), EXIT_NON_MANIFOLD) from exc
    except MeshError as exc:
        raise CliError(str(exc)) from exc
    p, d = pair.primal, pair.dual
    per_edge = "1 node" if d.config == "A" else "2 nodes"
    print(f"config {d.config}: primal {p.n_nodes} nodes / {len(p.edges)} edges, "
          f"dual {d.n_nodes} nodes ({per_edge} per primal edge) / {len(d.edges)} message edges")
    status = EXIT_OK
    if args.verify_theorem:
        th = verify_medial_line_equivalence(mesh)
        if th.status == "skipped":
            print(f"theorem: skipped ({th.reason})")
        else:
            print(f"theorem: {th.status}, primal {p.n_nodes}/{len(p.edges)}, "
                  f"dual {len(p.edges)}/{th.line_edges}")
            if not th.passed:
                print(f"  only in medial graph: {th.only_in_medial[:10]}")
                print(f"  only in line graph: {th.only_in_line[:10]}")
                status = EXIT_ERROR
    if args.out:
        write_graph_dump(pair, args.out)
        print(f"wrote {args.out}")
    return status


# ---------------------------------------------------------------------------
# train / eval


def _config_values(args) -> dict:
    values = {}
    if args.config_file:
        try:
            values = pio.read_config_file(args.config_file)
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}") from exc
    flags = {"config": args.config, "heads": args.heads, "pool_fraction": args.pool_fraction,
             "aggregation": args.pool_agg, "seed": args.seed, "epochs": args.epochs,
             "lr": args.lr, "batch_size": args.batch, "task": args.task}
    values.update({k: v for k, v in flags.items() if v is not None})
    return values


def _load_dataset(root, task, config) -> Dataset:
    try:
        ds = load_dataset(root, task=task, config=config)
    except MeshError as exc:
        raise CliError(str(exc), EXIT_NON_MANIFOLD if isinstance(exc, NonManifoldError) else EXIT_ERROR)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    if len(ds) == 0:
        raise CliError(f"{root}: empty dataset")
    return ds


def cmd_train(args) -> int:
    try:
        values = _config_values(args)
    except pio.ConfigError as exc:
        raise CliError(str(exc)) from exc
    if args.resume:
        ck = pio.load_checkpoint(args.resume)
        overrides = {k: values[k] for k in ("epochs", "lr", "batch_size") if k in values}
        trainer = pio.trainer_from_checkpoint(ck, **overrides)
        spec, tc = trainer.model.spec, trainer.config
    else:
        task = values.get("task", "classification")
        ds_probe = _load_dataset(args.dataset, task, values.get("config", "A"))
        try:
            tc, spec = pio.split_config(values, ds_probe.n_classes)
        except (pio.ConfigError, ValueError, TypeError) as exc:
            raise CliError(f"invalid configuration: {exc}") from exc
        trainer = Trainer(build_model(spec, tc.seed), tc)
    ds = _load_dataset(args.dataset, spec.task, spec.config)
    if tc.augment:
        ds = augment_dataset(ds, seed=tc.seed)
    val = _load_dataset(args.val, spec.task, spec.config) if args.val else None
    log_fh = open(args.log, "a") if args.log else None
    best = -1.0
    try:
        while trainer.epoch < tc.epochs:
            st = trainer.train_epoch(ds)
            row = {"epoch": st.epoch, "loss": st.loss, "train_batch_accuracy": st.accuracy}
            if val is not None:
                score = next(iter(evaluate(trainer.model, val).values()))
                row["val"] = score
                if score > best:
                    best = score
                    pio.save_checkpoint(pio.checkpoint_from_trainer(trainer), f"{args.out}.best")
            print(" ".join(f"{k} {v:.6f}" if isinstance(v, float) else f"{k} {v}" for k, v in row.items()))
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    pio.save_checkpoint(pio.checkpoint_from_trainer(trainer), args.out)
    final = evaluate(trainer.model, ds)
    key = "accuracy" if spec.task == "classification" else "face"
    print(f"final train accuracy {final[key]:.2f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = pio.load_checkpoint(args.checkpoint)
    model = pio.model_from_checkpoint(ck)
    ds = _load_dataset(args.dataset, model.spec.task, model.spec.config)
    if ds.n_classes > model.spec.n_classes or (
            ds.task == "classification" and ds.n_classes != model.spec.n_classes):
        raise CliError(f"dataset has {ds.n_classes} classes but the checkpoint predicts "
                       f"{model.spec.n_classes}")
    result = evaluate(model, ds)
    names = {"accuracy": "accuracy", "face": "face", "hard_edge": "hard-edge", "soft_edge": "soft-edge"}
    print("  ".join(f"{names[k]:>10}" for k in result))
    print("  ".join(f"{v:10.4f}" for v in result.values()))
    text = json.dumps(result, sort_keys=True)
    print(text)
    if args.json:
        Path(args.json).write_text(text + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export


def random_clusters(pair, n_pools: int, fraction: float, heads: int, seed: int, aggregation="sum"):
    """Face clusters from pooling driven by randomly initialised attention layers."""
    rng = np.random.default_rng(seed)
    cfg = PoolingConfig(fraction=fraction, aggregation=aggregation)
    xp, xd = pair.primal.features, pair.dual.features
    for level in range(n_pools):
        if len(pair.primal.edges) == 0:
            break
        conv = PrimalDualConv(f"export{level}", xp.shape[1], xd.shape[1], 8, 8, rng, heads=heads,
                              attention_init="glorot")
        p, d, record = conv(pair, xp, xd)
        pair, _ = pool(pair.with_features(p, d), record, cfg)
        xp, xd = pair.primal.features, pair.dual.features
    return pair.primal.cluster_of_face


def cmd_export(args) -> int:
    mesh = _load_mesh(args.mesh)
    if args.checkpoint:
        ck = pio.load_checkpoint(args.checkpoint)
        model = pio.model_from_checkpoint(ck)
        config = model.spec.config
    else:
        model, config = None, args.config or "A"
    try:
        sample = make_sample(mesh, config)
    except NonManifoldError as exc:
        raise CliError(str(exc), EXIT_NON_MANIFOLD) from exc
    except MeshError as exc:
        raise CliError(str(exc)) from exc
    if args.mode == "segmentation":
        if model is None or model.spec.task == "classification":
            raise CliError("segmentation export needs a segmentation or superpixel checkpoint")
        ds = Dataset(model.spec.task, model.spec.n_classes, [sample])
        labels = predict(model, ds)[0].argmax(axis=1)
    elif model is not None:
        model.eval()
        out = model(sample.pair)
        n = len(out.traces) if args.pools is None else min(args.pools, len(out.traces))
        stage = out.pooled if n == len(out.traces) else out.traces[n].before
        labels = stage.primal.cluster_of_face
    else:
        labels = random_clusters(sample.pair, 2 if args.pools is None else args.pools,
                                 args.pool_fraction or 0.2, args.heads or 1, args.seed or 0,
                                 args.pool_agg or "sum")
    pio.export_colored(mesh, labels, args.out)
    print(f"{args.mode}: {len(np.unique(labels))} colors over {len(labels)} faces")
    if args.table:
        write_cluster_table(labels, args.table)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _common(p, training=False):
    p.add_argument("--config", choices=CONFIGS, help="dual graph configuration")
    p.add_argument("--heads", type=_positive_int)
    p.add_argument("--pool-fraction", type=_fraction)
    p.add_argument("--pool-agg", choices=("sum", "mean"))
    p.add_argument("--seed", type=int)
    if training:
        p.add_argument("--epochs", type=_positive_int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=_positive_int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdmesh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-graph", help="build the primal / dual graphs of a mesh")
    p.add_argument("mesh")
    p.add_argument("--config", choices=CONFIGS, default="A")
    p.add_argument("--out", help="write a JSON dump of the graph pair")
    p.add_argument("--verify-theorem", action="store_true",
                   help="check that the medial graph equals the line graph of the primal graph")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a network on a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--config-file", help="key = value training / architecture settings")
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--task", choices=("classification", "segmentation", "superpixel"))
    p.add_argument("--val", help="validation dataset (keeps <out>.best)")
    p.add_argument("--log", help="append one JSON line per epoch")
    _common(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--json", help="also write the metrics as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="write a colored PLY of clusters or predicted classes")
    p.add_argument("mesh")
    p.add_argument("--mode", choices=("clusters", "segmentation"), default="clusters")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--pools", type=int, help="number of pooling layers to apply / show")
    p.add_argument("--table", help="also write the face -> cluster table")
    _common(p)
    p.set_defaults(func=cmd_export)
    return parser


def _limit_threads():
    n = os.environ.get("PDMESH_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError as exc:
        raise CliError(f"PDMESH_THREADS must be an integer, got {n!r}") from exc


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _limit_threads()
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (pio.CheckpointError, pio.ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
