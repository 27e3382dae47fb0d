"""Primal-dual graph attention networks on triangle meshes."""

from .graphs import GraphPair, build_graph_pair, verify_medial_line_equivalence
from .mesh import Mesh, MeshError, NonManifoldError, build_topology, load_obj, save_obj
from .models import (
    ArchitectureSpec,
    build_classification_net,
    build_model,
    build_segmentation_unet,
    build_superpixel_net,
)
from .pooling import PoolingConfig, pool, unpool
from .train import TrainConfig, Trainer, batch_graphs, evaluate

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "GraphPair", "Mesh", "MeshError", "NonManifoldError", "PoolingConfig",
    "TrainConfig", "Trainer", "batch_graphs", "build_classification_net", "build_graph_pair",
    "build_model", "build_segmentation_unet", "build_superpixel_net", "build_topology", "evaluate",
    "load_obj", "pool", "save_obj", "unpool", "verify_medial_line_equivalence",
]
