"""Scikit-learn style facade over ingestion, fusion, and retrieval.

``PseudoGraphRetriever`` is a BaseEstimator: construct with plain keyword
parameters, ``fit`` on a document collection, then ``retrieve`` one query or
``transform`` a batch. All heavy lifting stays in the dedicated modules; this
class only wires them together and owns the fitted state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .fuse import FusionConfig, PathEmbeddingStore, compute_path_embeddings, fuse
from .graph import PseudoGraph
from .ingest import Document, IngestConfig, VerificationScores, ingest_document
from .providers import ProviderConfig, resolve_providers
from .retrieve import RetrievalConfig, StructuredContext, dfs_oracle, retrieve
from .store import load_graph, save_graph


@dataclass
class IngestFailure:
    doc_id: str
    error: str
    scores: VerificationScores | None


def as_documents(X: Iterable[Any]) -> list[Document]:
    """Coerce a fit input into documents.

    Accepts Document instances, ``(doc_id, title, body)`` triples, and
    mappings with ``doc_id``/``body`` and optional ``title`` keys.
    """
    docs: list[Document] = []
    for i, item in enumerate(X):
        if isinstance(item, Document):
            docs.append(item)
        elif isinstance(item, Mapping):
            try:
                docs.append(
                    Document(
                        doc_id=str(item["doc_id"]),
                        title=str(item.get("title", "")),
                        body=str(item["body"]),
                    )
                )
            except KeyError as exc:
                raise ValueError(f"document {i} is missing key {exc}") from exc
        elif isinstance(item, Sequence) and not isinstance(item, (str, bytes)) and len(item) == 3:
            doc_id, title, body = item
            docs.append(Document(doc_id=str(doc_id), title=str(title), body=str(body)))
        else:
            raise ValueError(
                f"document {i} must be a Document, a mapping, or a (doc_id, title, body) triple"
            )
    if not docs:
        raise ValueError("no documents to fit on")
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise ValueError(f"duplicate document id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    return docs


class PseudoGraphRetriever(BaseEstimator):
    """Fit a fact-path graph over documents, then retrieve structured context.

    Parameters mirror the stage configs one to one; see IngestConfig,
    FusionConfig, and RetrievalConfig for semantics. ``provider_config=None``
    runs fully offline on the built-in mock providers.
    """

    def __init__(
        self,
        theta_bs: float = 0.85,
        theta_rl: float = 0.75,
        max_retries: int = 2,
        window_token_budget: int = 400,
        tau_topic: float = 0.92,
        tau_fact: float = 0.98,
        theta_s: float = 0.03,
        theta_f: float = 0.05,
        top_k_paths: int = 8,
        seeds_per_kp: int = 3,
        seed_topic_k: int = 5,
        rectangular_bounds: bool = False,
        whole_graph_candidates: bool = False,
        provider_config: ProviderConfig | None = None,
        on_error: str = "raise",
    ):
        self.theta_bs = theta_bs
        self.theta_rl = theta_rl
        self.max_retries = max_retries
        self.window_token_budget = window_token_budget
        self.tau_topic = tau_topic
        self.tau_fact = tau_fact
        self.theta_s = theta_s
        self.theta_f = theta_f
        self.top_k_paths = top_k_paths
        self.seeds_per_kp = seeds_per_kp
        self.seed_topic_k = seed_topic_k
        self.rectangular_bounds = rectangular_bounds
        self.whole_graph_candidates = whole_graph_candidates
        self.provider_config = provider_config
        self.on_error = on_error

    # -- config assembly -----------------------------------------------------

    def _ingest_config(self) -> IngestConfig:
        return IngestConfig(
            theta_bs=self.theta_bs,
            theta_rl=self.theta_rl,
            max_retries=self.max_retries,
            window_token_budget=self.window_token_budget,
        )

    def _fusion_config(self) -> FusionConfig:
        return FusionConfig(tau_topic=self.tau_topic, tau_fact=self.tau_fact)

    def _retrieval_config(self) -> RetrievalConfig:
        return RetrievalConfig(
            theta_s=self.theta_s,
            theta_f=self.theta_f,
            top_k_paths=self.top_k_paths,
            seeds_per_kp=self.seeds_per_kp,
            seed_topic_k=self.seed_topic_k,
            rectangular_bounds=self.rectangular_bounds,
            whole_graph_candidates=self.whole_graph_candidates,
        )

    def _providers(self):
        config = self.provider_config or ProviderConfig()
        return resolve_providers(config)

    # -- estimator API ---------------------------------------------------------

    def fit(self, X: Iterable[Any], y: Any = None) -> "PseudoGraphRetriever":
        """Ingest documents into a fresh graph, embed paths, and fuse."""
        if self.on_error not in ("raise", "skip"):
            raise ValueError("on_error must be 'raise' or 'skip'")
        docs = as_documents(X)
        pair = self._providers()
        config = self._ingest_config()
        graph = PseudoGraph()
        failures: list[IngestFailure] = []
        scores: dict[str, VerificationScores] = {}
        doc_chars: dict[str, int] = {}
        for doc in docs:
            try:
                payload, doc_scores = ingest_document(doc, config, pair.llm, pair.embedder, graph.allocator)
            except Exception as exc:
                if self.on_error == "raise":
                    raise
                failures.append(
                    IngestFailure(doc_id=doc.doc_id, error=str(exc), scores=getattr(exc, "scores", None))
                )
                continue
            graph.add_mind_map(payload)
            scores[doc.doc_id] = doc_scores
            doc_chars[doc.doc_id] = len(doc.body)
        if not graph.maps:
            raise ValueError("every document failed ingestion")
        graph.seal()
        store = compute_path_embeddings(graph, pair.embedder)
        fuse(graph, self._fusion_config(), store)

        self.graph_ = graph
        self.store_ = store
        self.scores_ = scores
        self.failures_ = failures
        self.doc_chars_ = doc_chars
        self.n_documents_ = len(scores)
        return self

    def retrieve(self, query: str, oracle: bool = False) -> StructuredContext:
        """Structured context for one query; ``oracle=True`` uses the stepwise walker."""
        check_is_fitted(self, ["graph_", "store_"])
        pair = self._providers()
        runner = dfs_oracle if oracle else retrieve
        return runner(
            query,
            self.graph_,
            self.store_,
            pair.llm,
            pair.embedder,
            config=self._retrieval_config(),
        )

    def transform(self, X: Iterable[str]) -> list[StructuredContext]:
        check_is_fitted(self, ["graph_", "store_"])
        queries = list(X)
        for i, q in enumerate(queries):
            if not isinstance(q, str) or not q.strip():
                raise ValueError(f"query {i} is not a non-empty string")
        return [self.retrieve(q) for q in queries]

    def fit_transform(self, X: Iterable[Any], y: Any = None, queries: Iterable[str] = ()) -> list[StructuredContext]:
        self.fit(X, y)
        return self.transform(queries)

    # -- persistence -----------------------------------------------------------

    def save(self, directory: str) -> str:
        """Archive the fitted graph and embeddings; returns the content digest."""
        check_is_fitted(self, ["graph_", "store_"])
        return save_graph(self.graph_, self.store_, directory)

    def load(self, directory: str) -> "PseudoGraphRetriever":
        """Restore fitted state from an archive, keeping current parameters.

        Per-document verification scores and corpus sizes are not archived,
        so ``scores_`` and ``doc_chars_`` come back empty.
        """
        graph, store = load_graph(directory)
        self.graph_ = graph
        self.store_ = store
        self.scores_ = {}
        self.failures_ = []
        self.doc_chars_ = {}
        self.n_documents_ = len({mm.source_doc_id for mm in graph.maps.values()})
        return self
