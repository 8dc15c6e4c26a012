"""Episodic prototype generation for few-shot classification in embedding space."""

from .densemath import Tape, backward, layer_norm, matmul, softmax_rows
from .embeddings import (
    Dataset,
    Embedding,
    GlobalPrototypeTable,
    SyntheticSpec,
    compute_global_prototypes,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
    split_classes,
)
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    ParseError,
    ProtogenError,
    ShapeError,
    TrainingError,
    UsageError,
)
from .evaluation import EvalReport, PrototypeStrategy, ci95, classify, compare, evaluate
from .generator import (
    AttentionConfig,
    GeneratorParams,
    generate_prototype,
    generate_prototypes,
    init_params,
    load_params,
    save_params,
)
from .kernels import BACKEND
from .sampler import Episode, EpisodeSpec, sample_episode
from .training import TrainConfig, TrainLog, distance_loss, sgd_step, train

__version__ = "0.1.0"
