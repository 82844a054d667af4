"""Corpus and graph measurements: sizes, cluster shape, storage compression."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .graph import NodeKind, PseudoGraph, SuperKind


class StatsError(Exception):
    pass


class MissingCorpus(StatsError):
    pass


@dataclass
class GraphStats:
    n_documents: int
    n_maps: int
    n_nodes: int
    n_topics: int
    n_routes: int
    n_facts: int
    n_lines: int
    n_super_topics: int
    n_super_facts: int
    n_fact_paths: int
    mean_path_length: float
    mean_docs_per_cluster: float
    source_chars: int
    node_chars: int
    compression_ratio: float

    def as_record(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def as_text(self) -> str:
        pairs = asdict(self)
        width = max(len(k) for k in pairs)
        lines = []
        for key, value in pairs.items():
            shown = f"{value:.4f}" if isinstance(value, float) else str(value)
            lines.append(f"{key.ljust(width)} = {shown}")
        return "\n".join(lines)


def compute_stats(graph: PseudoGraph, corpus_chars: dict[str, int]) -> GraphStats:
    """Measure the graph against the raw corpus it was built from.

    ``corpus_chars`` maps document id to the character count of its raw body.
    Compression is raw source characters over stored node text characters; an
    empty graph reports a ratio of 0.0.

    Raises:
        MissingCorpus: a mind map's source document has no recorded size.
    """
    for mind_map in graph.maps.values():
        if mind_map.source_doc_id not in corpus_chars:
            raise MissingCorpus(f"no character count for document {mind_map.source_doc_id!r}")

    n_topics = sum(1 for _ in graph.nodes_of_kind(NodeKind.TOPIC))
    n_routes = sum(1 for _ in graph.nodes_of_kind(NodeKind.ROUTE))
    facts = [n.id for n in graph.nodes_of_kind(NodeKind.FACT)]

    path_lengths = [len(graph.fact_path(fid)) for fid in facts]
    mean_path_length = sum(path_lengths) / len(path_lengths) if path_lengths else 0.0

    cluster_doc_counts: list[int] = []
    for sn in graph.super_nodes.values():
        docs = {graph.map_of(mid).source_doc_id for mid in sn.member_ids}
        cluster_doc_counts.append(len(docs))
    mean_docs = (
        sum(cluster_doc_counts) / len(cluster_doc_counts) if cluster_doc_counts else 0.0
    )

    covered_docs = {mm.source_doc_id for mm in graph.maps.values()}
    source_chars = sum(corpus_chars[d] for d in covered_docs)
    node_chars = sum(len(node.text) for node in graph.nodes.values())
    ratio = source_chars / node_chars if node_chars else 0.0

    n_super_topics = sum(1 for sn in graph.super_nodes.values() if sn.kind is SuperKind.SUPER_TOPIC)
    n_super_facts = len(graph.super_nodes) - n_super_topics

    return GraphStats(
        n_documents=len(covered_docs),
        n_maps=len(graph.maps),
        n_nodes=len(graph.nodes),
        n_topics=n_topics,
        n_routes=n_routes,
        n_facts=len(facts),
        n_lines=len(graph.lines),
        n_super_topics=n_super_topics,
        n_super_facts=n_super_facts,
        n_fact_paths=len(facts),
        mean_path_length=mean_path_length,
        mean_docs_per_cluster=mean_docs,
        source_chars=source_chars,
        node_chars=node_chars,
        compression_ratio=ratio,
    )
