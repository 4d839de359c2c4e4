"""Metadata-poisoning harness for multimodal retrieval-augmented pipelines.

The package covers the full loop: hybrid image/metadata retrieval over a
knowledge base, constrained selection of attacker captions, poison
injection, two defenses (consistency checking and query paraphrasing),
and exact-match evaluation metrics, all runnable offline against
deterministic mock providers.
"""

from .embedding import Embedding, inner_product, normalize
from .errors import MepaError
from .store import KbEntry, KnowledgeBase, QueryCase

__version__ = "0.1.0"

__all__ = [
    "Embedding",
    "KbEntry",
    "KnowledgeBase",
    "MepaError",
    "QueryCase",
    "inner_product",
    "normalize",
    "__version__",
]
