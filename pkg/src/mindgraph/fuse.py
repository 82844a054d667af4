"""Path embeddings and cross-document fusion into super-nodes.

A node's embedding is the embedding of its whole path prefix (topic text
through its own text, space-joined) in one provider call, so a fact carries
its context. Fusion walks topics then facts in insertion order and clusters
unvisited nodes above a per-kind cosine threshold under a founder node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import NodeKind, PseudoGraph, SuperKind, SuperNode, UnknownNodeError
from .providers import EmbeddingProvider, similarities


@dataclass
class FusionConfig:
    tau_topic: float = 0.92
    tau_fact: float = 0.98


class PathEmbeddingStore:
    """Node id -> path embedding, with fast stacked-matrix access."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self._dim = dim
        self._rows: dict[int, int] = {}
        self._matrix = np.zeros((0, dim), dtype=np.float32)

    @property
    def dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._rows

    def put_many(self, node_ids: Sequence[int], vectors: np.ndarray) -> None:
        if vectors.shape != (len(node_ids), self._dim):
            raise ValueError(f"expected {(len(node_ids), self._dim)}, got {vectors.shape}")
        start = self._matrix.shape[0]
        self._matrix = np.vstack([self._matrix, vectors.astype(np.float32)])
        for offset, node_id in enumerate(node_ids):
            if node_id in self._rows:
                raise ValueError(f"node {node_id} already has an embedding")
            self._rows[node_id] = start + offset

    def get(self, node_id: int) -> np.ndarray:
        try:
            return self._matrix[self._rows[node_id]]
        except KeyError:
            raise UnknownNodeError(f"no embedding for node {node_id}") from None

    def matrix_for(self, node_ids: Sequence[int]) -> np.ndarray:
        return self._matrix[[self._rows[nid] for nid in node_ids], :]

    def validate_complete(self, graph: PseudoGraph) -> None:
        missing = [nid for nid in graph.nodes if nid not in self._rows]
        if missing:
            raise UnknownNodeError(f"{len(missing)} nodes lack embeddings, e.g. {missing[:3]}")


def path_text(graph: PseudoGraph, node_id: int) -> str:
    return " ".join(node.text for node in graph.path_nodes(node_id))


def path_embedding(graph: PseudoGraph, node_id: int, embedder: EmbeddingProvider) -> np.ndarray:
    """Embed the space-joined path prefix of one node in a single call."""
    return embedder.embed([path_text(graph, node_id)])[0]


def compute_path_embeddings(
    graph: PseudoGraph,
    embedder: EmbeddingProvider,
    batch_size: int = 128,
) -> PathEmbeddingStore:
    """Embed every node's path prefix, batched; batching never changes values."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    store = PathEmbeddingStore(embedder.dim)
    node_ids = list(graph.nodes)
    for start in range(0, len(node_ids), batch_size):
        chunk = node_ids[start : start + batch_size]
        texts = [path_text(graph, nid) for nid in chunk]
        store.put_many(chunk, embedder.embed(texts))
    return store


def find_similar_nodes(
    founder_id: int,
    candidate_ids: Iterable[int],
    tau: float,
    store: PathEmbeddingStore,
) -> set[int]:
    """Candidates whose path-embedding cosine with the founder is >= tau."""
    candidates = [c for c in candidate_ids if c != founder_id]
    if not candidates:
        return set()
    sims = similarities(store.matrix_for(candidates), store.get(founder_id))
    return {c for c, s in zip(candidates, sims) if s >= tau}


def fuse(graph: PseudoGraph, config: FusionConfig, store: PathEmbeddingStore) -> list[SuperNode]:
    """Cluster similar topics and facts under super-nodes.

    Nodes are visited in insertion order; each unvisited node founds a cluster
    of the not-yet-visited same-kind nodes above the kind's threshold, and all
    grouped nodes (founder included) are marked visited. Nodes with no match
    found no cluster and stay available as members for later founders. Running
    fuse again creates nothing new because existing members start as visited.

    Returns:
        The super-nodes created by this call.
    """
    store.validate_complete(graph)
    created: list[SuperNode] = []
    plan = (
        (NodeKind.TOPIC, SuperKind.SUPER_TOPIC, config.tau_topic),
        (NodeKind.FACT, SuperKind.SUPER_FACT, config.tau_fact),
    )
    for node_kind, super_kind, tau in plan:
        ordered = [n.id for n in graph.nodes_of_kind(node_kind)]
        visited = {nid for nid in ordered if graph.super_node_of(nid, super_kind) is not None}
        for founder in ordered:
            if founder in visited:
                continue
            available = [nid for nid in ordered if nid not in visited and nid != founder]
            members = find_similar_nodes(founder, available, tau, store)
            if not members:
                continue
            sn = graph.add_super_node(super_kind, founder, members | {founder})
            visited.add(founder)
            visited |= members
            created.append(sn)
    return created
