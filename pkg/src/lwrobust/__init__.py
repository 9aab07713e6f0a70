"""Label-wise group-robust objectives for multi-label classification under imbalance and drift."""
from .data import Corpus, Document, SplitSet, chronological_split, label_distribution, random_split
from .kernels import BACKEND
from .metrics import Predictions, evaluate
from .models import LinearModel, LwanModel
from .objectives import OBJECTIVES, ObjectiveConfig
from .synthgen import GenConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Corpus", "Document", "GenConfig", "LinearModel", "LwanModel", "OBJECTIVES",
    "ObjectiveConfig", "Predictions", "SplitSet", "chronological_split", "evaluate",
    "generate_corpus", "label_distribution", "random_split",
]
