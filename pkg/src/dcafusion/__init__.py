"""Audio-visual fusion via cross-attention with dynamic gated feature selection.

A small, self-contained stack: a taped reverse-mode matrix engine, the
fusion model itself, concordance metrics, a synthetic data generator with
controllable corruption, a deterministic training/ablation loop, and a
binary feature-file format with a CLI on top.
"""

from .autodiff import Matrix, Tape, grad_check
from .fusion import (
    AttentionTrace,
    FeatureSequence,
    FusionParams,
    GateScores,
    fuse_forward,
    predict,
)
from .metrics import EmotionTrack, ccc, evaluate, pearson
from .synthdata import GeneratorConfig, LabeledSequence, corrupt, generate, smooth
from .trainer import HyperParams, RunResult, ablate, train

__version__ = "0.1.0"

__all__ = [
    "Matrix",
    "Tape",
    "grad_check",
    "FeatureSequence",
    "FusionParams",
    "AttentionTrace",
    "GateScores",
    "fuse_forward",
    "predict",
    "EmotionTrack",
    "ccc",
    "pearson",
    "evaluate",
    "GeneratorConfig",
    "LabeledSequence",
    "generate",
    "corrupt",
    "smooth",
    "HyperParams",
    "RunResult",
    "train",
    "ablate",
    "__version__",
]
