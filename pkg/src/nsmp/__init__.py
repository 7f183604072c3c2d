"""Training-free neural-symbolic query answering over incomplete knowledge graphs.

The package answers existential first-order logic queries (one free variable,
conjunction/disjunction/atomic negation) by layered message passing on the
query graph: sparse fuzzy-set propagation through boolean relation matrices,
optionally blended with scores from a frozen ComplEx link predictor.
"""

from nsmp.engine import AnswerDistribution, EngineConfig, QueryEngine
from nsmp.formulas import parse, render, to_dnf, build_graph, depth
from nsmp.fuzzy import FuzzyVec, normalize, one_hot
from nsmp.kg import RelationMatrix, TripleStore, load_triples
from nsmp.predictor import ComplexEmbeddingTable, load_embeddings, save_embeddings, train_toy

__all__ = [
    "AnswerDistribution",
    "ComplexEmbeddingTable",
    "EngineConfig",
    "FuzzyVec",
    "QueryEngine",
    "RelationMatrix",
    "TripleStore",
    "build_graph",
    "depth",
    "load_embeddings",
    "load_triples",
    "normalize",
    "one_hot",
    "parse",
    "render",
    "save_embeddings",
    "to_dnf",
    "train_toy",
]

__version__ = "0.1.0"
