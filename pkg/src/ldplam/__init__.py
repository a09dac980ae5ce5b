"""Pseudo label-wise attention for multi-label document coding, on a small numpy autodiff engine."""

from .autodiff import GraphError, MultiplicationCounter, Tensor, backward, finite_diff_check, no_grad
from .cost import CostReport, analytic_cost, measured_cost, memory_curve
from .labels import LabelCatalog, LabelFileError
from .metrics import MetricsReport, evaluate
from .model import PseudoLabelAttentionClassifier
from .pipeline import ConfigError, RunConfig, train
from .skipgram import SkipGramEmbedder
from .synth import synth_generate
from .text import TfidfTruncator, Vocab

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CostReport",
    "GraphError",
    "LabelCatalog",
    "LabelFileError",
    "MetricsReport",
    "MultiplicationCounter",
    "PseudoLabelAttentionClassifier",
    "RunConfig",
    "SkipGramEmbedder",
    "Tensor",
    "TfidfTruncator",
    "Vocab",
    "analytic_cost",
    "backward",
    "evaluate",
    "finite_diff_check",
    "measured_cost",
    "memory_curve",
    "no_grad",
    "synth_generate",
    "train",
]
