"""Backprop-free layer-wise training with random-projection heads."""

from .estimator import BPClassifier, SLLClassifier
from .network import Network, build_cnn, build_mlp, load_checkpoint, save_checkpoint
from .trainers import SLLConfig, bp_train_step, evaluate, per_layer_probe, sll_train_step

__all__ = [
    "BPClassifier",
    "Network",
    "SLLClassifier",
    "SLLConfig",
    "bp_train_step",
    "build_cnn",
    "build_mlp",
    "evaluate",
    "load_checkpoint",
    "per_layer_probe",
    "save_checkpoint",
    "sll_train_step",
]

__version__ = "0.1.0"
