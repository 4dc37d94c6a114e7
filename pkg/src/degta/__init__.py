"""Decoupled graph transformer with multi-view encodings and local/global attention."""
from .autograd import NumericError, ShapeError, Tape, Tensor, grad_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, GraphDataset, NodeDataset, generate, load_graph_dataset, load_node_dataset,
                   save_graph_dataset, save_node_dataset)
from .encodings import ConvergenceError, EncodingSet, encode
from .graph import Graph, GraphError, build_graph, permute
from .model import DeGTAConfig, DeGTAModel, evaluate, export_report, model_forward, prepare, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConvergenceError", "DatasetError", "DeGTAConfig", "DeGTAModel", "EncodingSet", "Graph",
    "GraphDataset", "GraphError", "NodeDataset", "NumericError", "ShapeError", "Tape", "Tensor", "build_graph",
    "encode", "evaluate", "export_report", "generate", "grad_check", "load_checkpoint", "load_graph_dataset",
    "load_node_dataset", "model_forward", "permute", "prepare", "save_checkpoint", "save_graph_dataset",
    "save_node_dataset", "train",
]
