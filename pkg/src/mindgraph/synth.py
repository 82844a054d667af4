"""Seeded synthetic corpora: large random graphs for benchmarks and tests.

Everything is driven by one integer seed, so two processes given the same
spec produce identical graphs, embeddings (for deterministic embedders), and
query lists.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .fuse import PathEmbeddingStore, compute_path_embeddings
from .graph import (
    MindMap,
    MindMapPayload,
    NavLine,
    Node,
    NodeKind,
    PseudoGraph,
    SuperKind,
)
from .providers import EmbeddingProvider

_WORDS = (
    "amber", "basin", "cedar", "delta", "ember", "fjord", "gleam", "harbor",
    "inlet", "juniper", "kestrel", "lagoon", "marble", "nectar", "onyx",
    "prairie", "quartz", "ridge", "summit", "tundra", "umber", "vale",
    "willow", "xenon", "yarrow", "zephyr",
)


@dataclass
class SynthSpec:
    n_paths: int = 1000
    paths_per_topic: int = 100
    max_route_depth: int = 3
    fanout_low: int = 2
    fanout_high: int = 4
    super_topic_pairs: int = 0
    super_fact_pairs: int = 0
    seed: int = 0


def _text(rng: random.Random, gid: int) -> str:
    return f"{rng.choice(_WORDS)} {rng.choice(_WORDS)} n{gid}"


def _build_topic(
    graph: PseudoGraph,
    spec: SynthSpec,
    rng: random.Random,
    doc_index: int,
    n_leaves: int,
) -> None:
    alloc = graph.allocator
    map_id = f"doc-{doc_index:05d}"
    nodes: list[Node] = []
    lines: list[NavLine] = []

    topic_id = alloc.take()
    nodes.append(Node(id=topic_id, kind=NodeKind.TOPIC, text=_text(rng, topic_id), map_id=map_id))

    def add_fact(parent_id: int) -> None:
        fid = alloc.take()
        nodes.append(Node(id=fid, kind=NodeKind.FACT, text=_text(rng, fid), map_id=map_id))
        lines.append(NavLine(id=alloc.take(), parent_id=parent_id, child_id=fid))

    def grow(parent_id: int, leaves: int, depth_left: int) -> None:
        if depth_left == 0 or leaves <= 1:
            for _ in range(leaves):
                add_fact(parent_id)
            return
        groups = min(leaves, rng.randint(spec.fanout_low, spec.fanout_high))
        # distribute leaves over groups, each getting at least one
        cuts = sorted(rng.sample(range(1, leaves), groups - 1)) if groups > 1 else []
        sizes = [b - a for a, b in zip([0] + cuts, cuts + [leaves])]
        for size in sizes:
            if size == 1 and rng.random() < 0.5:
                add_fact(parent_id)
                continue
            rid = alloc.take()
            nodes.append(Node(id=rid, kind=NodeKind.ROUTE, text=_text(rng, rid), map_id=map_id))
            lines.append(NavLine(id=alloc.take(), parent_id=parent_id, child_id=rid))
            grow(rid, size, depth_left - 1)

    grow(topic_id, n_leaves, spec.max_route_depth)
    payload = MindMapPayload(
        mind_map=MindMap(
            map_id=map_id,
            topic_id=topic_id,
            source_doc_id=map_id,
            node_ids={n.id for n in nodes},
            line_ids={ln.id for ln in lines},
        ),
        nodes=tuple(nodes),
        lines=tuple(lines),
    )
    graph.add_mind_map(payload)


def synthesize(spec: SynthSpec, embedder: EmbeddingProvider) -> tuple[PseudoGraph, PathEmbeddingStore]:
    """Build a random graph with roughly ``spec.n_paths`` fact paths."""
    rng = random.Random(spec.seed)
    graph = PseudoGraph()
    remaining = spec.n_paths
    doc_index = 0
    while remaining > 0:
        budget = min(remaining, spec.paths_per_topic)
        n_leaves = budget if budget < 4 else rng.randint(max(1, budget - budget // 4), budget)
        _build_topic(graph, spec, rng, doc_index, n_leaves)
        remaining -= n_leaves
        doc_index += 1
    graph.seal()

    topics = [n.id for n in graph.topics()]
    facts = [n.id for n in graph.nodes_of_kind(NodeKind.FACT)]
    used_topics: set[int] = set()
    for _ in range(spec.super_topic_pairs):
        free = [t for t in topics if t not in used_topics]
        if len(free) < 2:
            break
        a, b = rng.sample(free, 2)
        graph.add_super_node(SuperKind.SUPER_TOPIC, a, {a, b})
        used_topics.update((a, b))
    used_facts: set[int] = set()
    for _ in range(spec.super_fact_pairs):
        free = [f for f in facts if f not in used_facts]
        if len(free) < 2:
            break
        a, b = rng.sample(free, 2)
        graph.add_super_node(SuperKind.SUPER_FACT, a, {a, b})
        used_facts.update((a, b))

    store = compute_path_embeddings(graph, embedder)
    return graph, store


def synth_queries(n: int, seed: int = 0, clauses_low: int = 1, clauses_high: int = 2) -> list[str]:
    """Deterministic multi-clause questions over the synthetic vocabulary."""
    rng = random.Random(seed ^ 0x5EED)
    queries: list[str] = []
    for i in range(n):
        k = rng.randint(clauses_low, clauses_high)
        parts = [
            f"what about {rng.choice(_WORDS)} {rng.choice(_WORDS)} q{i}c{j}?"
            for j in range(k)
        ]
        queries.append(" ".join(parts))
    return queries
