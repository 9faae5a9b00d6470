"""Attentive modality hopping for three-stream sequence classification.

Three GRU encoders (audio, text, video) feed an iterative bilinear attention
process that re-summarizes one modality at a time conditioned on the other
two; the fused summaries go through a softmax head.  Includes a concat-fusion
baseline, a self-contained float64 autodiff core with a finite-difference
oracle, a synthetic cross-modal task generator, and a cross-validated
training harness.
"""

from .autodiff import Tensor, backward, grad_check, no_grad
from .data import (
    CorpusMeta,
    FoldSplit,
    MultimodalSample,
    SyntheticSpec,
    generate_synthetic,
    load_corpus,
    make_folds,
    write_corpus,
)
from .estimators import AttentiveHopClassifier, ConcatFusionClassifier
from .gru import EmbeddingTable, EncodedModality, GruParams, ModalitySequence, encode, gru_cell
from .hopping import (
    AttentionParams,
    HopScheduleEntry,
    attend,
    fuse_context,
    hop_schedule,
    run_hops,
)
from .network import (
    DEFAULT_LABELS,
    ModelConfig,
    ModelParams,
    batch_loss,
    classify,
    cross_entropy,
    forward_amh,
    forward_mdre,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
)
from .training import (
    AdamState,
    EvalReport,
    TrainConfig,
    clip_gradients,
    evaluate,
    hop_sweep,
    train,
    train_single,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AttentionParams",
    "AttentiveHopClassifier",
    "ConcatFusionClassifier",
    "CorpusMeta",
    "DEFAULT_LABELS",
    "EmbeddingTable",
    "EncodedModality",
    "EvalReport",
    "FoldSplit",
    "GruParams",
    "HopScheduleEntry",
    "ModalitySequence",
    "ModelConfig",
    "ModelParams",
    "MultimodalSample",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "attend",
    "backward",
    "batch_loss",
    "classify",
    "clip_gradients",
    "cross_entropy",
    "encode",
    "evaluate",
    "forward_amh",
    "forward_mdre",
    "fuse_context",
    "generate_synthetic",
    "grad_check",
    "gru_cell",
    "hop_schedule",
    "hop_sweep",
    "load_checkpoint",
    "load_corpus",
    "make_folds",
    "no_grad",
    "predict_probs",
    "run_hops",
    "save_checkpoint",
    "train",
    "train_single",
    "write_corpus",
]
