"""Matrix index: fact paths laid out as aligned id and vector matrices.

Every fact under the candidate topics becomes one row holding its full path
from topic (column 0) to fact (last non-PAD column), PAD-suffixed to the
common width. Rows are emitted depth-first per topic so rows sharing any
ancestor are contiguous, which is what makes co-ancestor bands simple slices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fuse import PathEmbeddingStore
from .graph import PAD, NodeKind, PseudoGraph


class IndexError_(Exception):
    pass


class EmptyGraphError(IndexError_):
    pass


class EmptyCandidatesError(IndexError_):
    pass


@dataclass
class TemplateMatrices:
    ids: np.ndarray  # (rows, cols) int64, PAD-filled past each path's end
    vectors: np.ndarray  # (rows, cols, dim) float32, zero at PAD cells
    row_map: np.ndarray  # (rows,) int64 fact node id per row
    topic_rows: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_cols(self) -> int:
        return int(self.ids.shape[1])

    @property
    def mask(self) -> np.ndarray:
        return self.ids != PAD

    def fact_cols(self) -> np.ndarray:
        """Column index of the fact (last non-PAD) cell per row."""
        return self.mask.sum(axis=1).astype(np.int64) - 1


@dataclass
class CandidateSet:
    seed_topics: tuple[int, ...]
    connected: frozenset[int]

    @property
    def all_topics(self) -> frozenset[int]:
        return self.connected | set(self.seed_topics)

    def ordered(self) -> list[int]:
        return sorted(self.all_topics)


def locate_seed_topics(
    query_vector: np.ndarray,
    graph: PseudoGraph,
    store: PathEmbeddingStore,
    k: int,
) -> list[int]:
    """Top-k topics by cosine against the raw query embedding.

    Ties are broken toward the smaller node id; fewer than k topics means all
    of them are returned.

    Raises:
        EmptyGraphError: the graph has no topic nodes.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    topic_ids = [n.id for n in graph.topics()]
    if not topic_ids:
        raise EmptyGraphError("graph has no topics to search")
    from .providers import similarities

    sims = similarities(store.matrix_for(topic_ids), query_vector)
    order = sorted(range(len(topic_ids)), key=lambda i: (-sims[i], topic_ids[i]))
    return [topic_ids[i] for i in order[:k]]


def candidate_expansion(graph: PseudoGraph, seed_topics: Sequence[int]) -> CandidateSet:
    """One super-node hop outward from the seed topics."""
    reached = graph.walk_candidates(seed_topics)
    return CandidateSet(
        seed_topics=tuple(seed_topics),
        connected=frozenset(reached - set(seed_topics)),
    )


def build_template_matrices(
    graph: PseudoGraph,
    candidate_topics: Iterable[int],
    store: PathEmbeddingStore,
) -> TemplateMatrices:
    """Lay the candidate topics' fact paths out as aligned matrices.

    Topics are processed in ascending id order and each topic's subtree is
    walked depth-first in line-insertion order, so rebuilding from the same
    graph and candidate set is byte-identical.

    Raises:
        EmptyCandidatesError: no candidate topics given.
    """
    topics = sorted(set(candidate_topics))
    if not topics:
        raise EmptyCandidatesError("no candidate topics")
    rows: list[list[int]] = []
    topic_rows: dict[int, tuple[int, int]] = {}
    for topic_id in topics:
        start = len(rows)
        node = graph.node(topic_id)
        if node.kind is not NodeKind.TOPIC:
            raise EmptyCandidatesError(f"candidate {topic_id} is not a topic")

        def walk(node_id: int, prefix: list[int]) -> None:
            if graph.nodes[node_id].kind is NodeKind.FACT:
                rows.append(prefix)
                return
            for child in graph.children(node_id):
                walk(child, prefix + [child])

        walk(topic_id, [topic_id])
        topic_rows[topic_id] = (start, len(rows))

    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    ids = np.full((n_rows, n_cols), PAD, dtype=np.int64)
    row_map = np.empty(n_rows, dtype=np.int64)
    for i, path in enumerate(rows):
        ids[i, : len(path)] = path
        row_map[i] = path[-1]
    # one gather per distinct node, scattered to every cell it occupies
    unique_ids, inverse = np.unique(ids, return_inverse=True)
    lut = np.zeros((unique_ids.shape[0], store.dim), dtype=np.float32)
    real = unique_ids != PAD
    if np.any(real):
        lut[real] = store.matrix_for([int(u) for u in unique_ids[real]])
    vectors = lut[np.asarray(inverse).reshape(n_rows, n_cols)]
    return TemplateMatrices(ids=ids, vectors=vectors, row_map=row_map, topic_rows=topic_rows)
