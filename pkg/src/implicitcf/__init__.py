"""Neural collaborative filtering from implicit feedback.

Dual-tower and matching-MLP models over raw interaction-matrix inputs, an
optional fusion of the two, from-scratch backpropagation with Adam/SGD, and
leave-one-out HR@K / NDCG@K evaluation.
"""

__version__ = "0.1.0"

from .data import (
    InteractionMatrix,
    RatingLog,
    SplitDataset,
    TestCase,
    build_split,
    load_ratings,
    read_canonical,
    sample_test_negatives,
    sample_train_negatives,
    write_canonical,
)
from .evaluation import EvalReport, evaluate, item_pop_score_fn, model_score_fn
from .models import (
    ArchSpec,
    ModelParams,
    forward,
    forward_single,
    fuse_pretrained,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, TrainHistory, bce_loss, train, train_epoch

__all__ = [
    "ArchSpec",
    "EvalReport",
    "InteractionMatrix",
    "ModelParams",
    "RatingLog",
    "SplitDataset",
    "TestCase",
    "TrainConfig",
    "TrainHistory",
    "bce_loss",
    "build_split",
    "evaluate",
    "forward",
    "forward_single",
    "fuse_pretrained",
    "init_params",
    "item_pop_score_fn",
    "load_checkpoint",
    "load_ratings",
    "model_score_fn",
    "read_canonical",
    "sample_test_negatives",
    "sample_train_negatives",
    "save_checkpoint",
    "train",
    "train_epoch",
    "write_canonical",
]
