"""Fact-path retrieval engine: mind-map graphs over documents, matrix-walk retrieval."""

from .estimator import PseudoGraphRetriever, as_documents
from .fuse import FusionConfig, PathEmbeddingStore, compute_path_embeddings, fuse
from .graph import (
    PAD,
    MindMap,
    MindMapPayload,
    NavLine,
    Node,
    NodeKind,
    PseudoGraph,
    SuperKind,
    SuperNode,
)
from .index import TemplateMatrices, build_template_matrices, candidate_expansion, locate_seed_topics
from .ingest import (
    Document,
    IngestConfig,
    VerificationScores,
    ingest_document,
    lcs_score,
    soft_token_score,
)
from .providers import (
    HashedBagEmbedder,
    MockLLMProvider,
    ProviderConfig,
    RandomUnitEmbedder,
    resolve_providers,
)
from .retrieve import (
    RankedPath,
    RetrievalConfig,
    StructuredContext,
    dfs_oracle,
    retrieve,
)
from .stats import GraphStats, compute_stats
from .store import load_graph, save_graph

__version__ = "0.1.0"

__all__ = [
    "PAD",
    "Document",
    "FusionConfig",
    "GraphStats",
    "HashedBagEmbedder",
    "IngestConfig",
    "MindMap",
    "MindMapPayload",
    "MockLLMProvider",
    "NavLine",
    "Node",
    "NodeKind",
    "PathEmbeddingStore",
    "ProviderConfig",
    "PseudoGraph",
    "PseudoGraphRetriever",
    "RandomUnitEmbedder",
    "RankedPath",
    "RetrievalConfig",
    "StructuredContext",
    "SuperKind",
    "SuperNode",
    "TemplateMatrices",
    "VerificationScores",
    "as_documents",
    "build_template_matrices",
    "candidate_expansion",
    "compute_path_embeddings",
    "compute_stats",
    "dfs_oracle",
    "fuse",
    "ingest_document",
    "lcs_score",
    "load_graph",
    "locate_seed_topics",
    "resolve_providers",
    "retrieve",
    "save_graph",
    "soft_token_score",
    "__version__",
]
