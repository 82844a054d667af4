"""Document ingestion: fact extraction, faithfulness verification, map building.

A document is rewritten by the LLM into fact-checking items, the rewrite is
verified against the source with two scores (a greedy token-embedding match
and an LCS-based F-measure), and verified items are arranged into a mind map
outline that parses into graph nodes. Failed verification triggers
re-extraction up to ``max_retries`` additional attempts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    IdAllocator,
    MindMap,
    MindMapPayload,
    NavLine,
    Node,
    NodeKind,
    PseudoGraph,
)
from .prompts import load_prompt
from .providers import EmbeddingProvider, GenerationRequest, LLMProvider, similarities
from .text import paragraph_windows, tokenize


class IngestError(Exception):
    pass


class EmptyAfterTokenization(IngestError):
    pass


class UnparseableResponse(IngestError):
    pass


class UnparseableOutline(IngestError):
    pass


class VerificationExhausted(IngestError):
    def __init__(self, message: str, scores: "VerificationScores"):
        super().__init__(message)
        self.scores = scores


@dataclass
class Document:
    doc_id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.doc_id.strip():
            raise ValueError("document needs a doc_id")
        if not self.body.strip():
            raise ValueError(f"document {self.doc_id!r} has an empty body")


@dataclass
class FciDraft:
    doc_id: str
    main_topic: str
    items: list[str]
    attempt: int = 0


@dataclass
class VerificationScores:
    soft_token: float
    lcs: float
    passed: bool


@dataclass
class IngestConfig:
    theta_bs: float = 0.85
    theta_rl: float = 0.75
    max_retries: int = 2
    window_token_budget: int = 400


@dataclass
class DraftResult:
    draft: FciDraft
    outline_text: str
    scores: VerificationScores
    attempts: int


# -- scores ------------------------------------------------------------------


def _lcs_length(a: list[str], b: list[str]) -> int:
    codes: dict[str, int] = {}
    av = np.fromiter((codes.setdefault(t, len(codes)) for t in a), dtype=np.int64, count=len(a))
    bv = np.fromiter((codes.setdefault(t, len(codes)) for t in b), dtype=np.int64, count=len(b))
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for i in range(len(a)):
        matches = np.where(bv == av[i], prev[:-1] + 1, 0)
        cur = np.maximum(prev[1:], matches)
        # adjacent LCS cells differ by at most 1, so folding in the left
        # neighbour via a running max reproduces the classic recurrence
        np.maximum.accumulate(cur, out=cur)
        prev[1:] = cur
    return int(prev[-1])


def lcs_score(reference: str, candidate: str) -> float:
    """Longest-common-subsequence F-measure over tokens, beta = 1.

    Raises:
        EmptyAfterTokenization: either side has no tokens.
    """
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref or not cand:
        raise EmptyAfterTokenization("both texts need at least one token")
    lcs = _lcs_length(ref, cand)
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def soft_token_score(reference: str, candidate: str, embedder: EmbeddingProvider) -> float:
    """Greedy max-cosine token matching F1 between two texts.

    Every token instance is matched to its highest-cosine counterpart on the
    other side; per-token best similarities are clamped at zero so the score
    stays in [0, 1] even for embeddings with negative cosines.
    """
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref or not cand:
        raise EmptyAfterTokenization("both texts need at least one token")
    unique = sorted(set(ref) | set(cand))
    vectors = embedder.embed(unique)
    index = {token: row for row, token in enumerate(unique)}
    cand_matrix = vectors[[index[t] for t in cand], :]
    sims = np.empty((len(ref), len(cand)), dtype=np.float64)
    for i, token in enumerate(ref):
        sims[i] = similarities(cand_matrix, vectors[index[token]])
    recall = float(np.mean(np.maximum(sims.max(axis=1), 0.0)))
    precision = float(np.mean(np.maximum(sims.max(axis=0), 0.0)))
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# -- extraction --------------------------------------------------------------

_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")


def _parse_fci_response(text: str) -> tuple[str, list[str]]:
    main_topic = ""
    items: list[str] = []
    in_facts = False
    for line in text.splitlines():
        if line.startswith("MAIN TOPIC:"):
            main_topic = line.removeprefix("MAIN TOPIC:").strip()
        elif line.startswith("FACTS:"):
            in_facts = True
        elif in_facts:
            m = _ITEM_RE.match(line)
            if m:
                items.append(m.group(2).strip())
    items = [item for item in items if not item.endswith("?")]
    if not main_topic or not items:
        raise UnparseableResponse("response lacks a MAIN TOPIC line or numbered facts")
    return main_topic, items


def _generate_with_repair(llm: LLMProvider, system: str, user: str, parse, max_retries: int):
    """One generate call plus at most one format-repair re-prompt."""
    reply = llm.generate(GenerationRequest(prompt=user, system_prompt=system, max_retries=max_retries))
    try:
        return parse(reply)
    except (UnparseableResponse, UnparseableOutline):
        reminder = user + "\n\nFORMAT REMINDER: your previous reply could not be parsed. Answer again following the requested format exactly."
        reply = llm.generate(GenerationRequest(prompt=reminder, system_prompt=system, max_retries=max_retries))
        return parse(reply)


def extract_fcis(
    doc: Document,
    config: IngestConfig,
    llm: LLMProvider,
    attempt: int = 0,
) -> FciDraft:
    """Extract fact-checking items for one document (all windows, one draft).

    Long bodies are pre-segmented at paragraph boundaries under the window
    token budget; each window is extracted separately and the items merged,
    deduplicated by normalized text, into a single draft.
    """
    template = load_prompt("fci")
    windows = paragraph_windows(doc.body, config.window_token_budget)
    if not windows:
        raise UnparseableResponse(f"document {doc.doc_id!r} has no extractable text")
    main_topic = ""
    merged: list[str] = []
    seen: set[str] = set()
    for window in windows:
        user = template.render_user(title=doc.title, body=window)
        if attempt > 0:
            user = (
                f"RETRY {attempt}: the previous restatement failed its faithfulness checks. "
                "Stay closer to the source wording.\n\n" + user
            )
        topic, items = _generate_with_repair(
            llm, template.system, user, _parse_fci_response, config.max_retries
        )
        if not main_topic:
            main_topic = topic
        for item in items:
            key = " ".join(tokenize(item))
            if key and key not in seen:
                seen.add(key)
                merged.append(item)
    if not merged:
        raise UnparseableResponse(f"no usable items extracted from {doc.doc_id!r}")
    return FciDraft(doc_id=doc.doc_id, main_topic=main_topic, items=merged, attempt=attempt)


def verify_fcis(
    draft: FciDraft,
    doc: Document,
    config: IngestConfig,
    embedder: EmbeddingProvider,
) -> VerificationScores:
    """Score a draft against its source document.

    Passing requires both scores to clear their thresholds (inclusive):
    soft token score >= theta_bs and LCS score >= theta_rl.
    """
    fci_text = "\n".join(draft.items)
    soft = soft_token_score(doc.body, fci_text, embedder)
    lcs = lcs_score(doc.body, fci_text)
    return VerificationScores(
        soft_token=soft,
        lcs=lcs,
        passed=soft >= config.theta_bs and lcs >= config.theta_rl,
    )


# -- outline parsing ---------------------------------------------------------

_OUTLINE_LINE_RE = re.compile(r"^(?P<indent> *)- (?P<content>\S(?:.*\S)?)\s*$")


@dataclass
class _OutlineNode:
    text: str
    label: str
    depth: int
    children: list["_OutlineNode"] = field(default_factory=list)


def _parse_outline_tree(text: str) -> _OutlineNode:
    root: _OutlineNode | None = None
    stack: list[_OutlineNode] = []
    for raw in text.splitlines():
        if not raw.strip():
            continue
        m = _OUTLINE_LINE_RE.match(raw)
        if not m:
            raise UnparseableOutline(f"unparseable outline line: {raw!r}")
        indent = len(m.group("indent"))
        if indent % 2 != 0:
            raise UnparseableOutline(f"odd indentation on line: {raw!r}")
        depth = indent // 2
        content = m.group("content").strip()
        label, sep, rest = content.partition(" :: ")
        label, node_text = (label.strip(), rest.strip()) if sep else ("", content)
        if not node_text:
            raise UnparseableOutline(f"empty node text on line: {raw!r}")
        if depth == 0:
            if root is not None:
                raise UnparseableOutline("outline has more than one root line")
            root = _OutlineNode(node_text, label, 0)
            stack = [root]
            continue
        if root is None:
            raise UnparseableOutline("outline does not start at zero indentation")
        if depth > len(stack):
            raise UnparseableOutline(f"indentation jumps more than one level: {raw!r}")
        node = _OutlineNode(node_text, label, depth)
        stack[depth - 1].children.append(node)
        del stack[depth:]
        stack.append(node)
    if root is None:
        raise UnparseableOutline("outline is empty")
    if not root.children:
        raise UnparseableOutline("outline has no facts under the topic")
    return root


def parse_outline(
    text: str,
    allocator: IdAllocator,
    map_id: str,
    source_doc_id: str,
) -> MindMapPayload:
    """Parse an outline into a staged mind map.

    The root line becomes the topic, interior lines become routes, leaf lines
    become facts; a route leaf is therefore unrepresentable. Node and line ids
    are taken from the allocator in outline order.
    """
    root = _parse_outline_tree(text)
    nodes: list[Node] = []
    lines: list[NavLine] = []

    def realize(onode: _OutlineNode, parent_id: int | None) -> None:
        if onode.depth == 0:
            kind = NodeKind.TOPIC
        elif onode.children:
            kind = NodeKind.ROUTE
        else:
            kind = NodeKind.FACT
        node = Node(id=allocator.take(), kind=kind, text=onode.text, map_id=map_id)
        nodes.append(node)
        if parent_id is not None:
            lines.append(
                NavLine(id=allocator.take(), parent_id=parent_id, child_id=node.id, label=onode.label)
            )
        for child in onode.children:
            realize(child, node.id)

    realize(root, None)
    mind_map = MindMap(
        map_id=map_id,
        topic_id=nodes[0].id,
        source_doc_id=source_doc_id,
        node_ids={n.id for n in nodes},
        line_ids={l.id for l in lines},
    )
    return MindMapPayload(mind_map=mind_map, nodes=nodes, lines=lines)


def render_outline(graph: PseudoGraph, map_id: str) -> str:
    """Serialize one mind map back to the outline exchange format."""
    mm = graph.maps[map_id]
    out: list[str] = []

    def walk(node_id: int, depth: int) -> None:
        node = graph.nodes[node_id]
        line = graph.parent_line(node_id)
        label = line.label if line is not None else ""
        content = f"{label} :: {node.text}" if label else node.text
        out.append(f"{'  ' * depth}- {content}")
        for child in graph.children(node_id):
            walk(child, depth + 1)

    walk(mm.topic_id, 0)
    return "\n".join(out)


def _normalize_text(text: str) -> str:
    return " ".join(tokenize(text))


def _validate_outline_against_draft(payload: MindMapPayload, draft: FciDraft) -> None:
    topic = next(n for n in payload.nodes if n.kind is NodeKind.TOPIC)
    if topic.text.strip() != draft.main_topic.strip():
        raise UnparseableOutline(
            f"outline topic {topic.text!r} does not match the main topic {draft.main_topic!r}"
        )
    fact_norms = [_normalize_text(n.text) for n in payload.nodes if n.kind is NodeKind.FACT]
    for item in draft.items:
        norm = _normalize_text(item)
        hits = sum(1 for fact in fact_norms if norm == fact or norm in fact)
        if hits != 1:
            raise UnparseableOutline(
                f"item {item!r} appears in {hits} fact nodes, expected exactly one"
            )


def request_outline(draft: FciDraft, config: IngestConfig, llm: LLMProvider) -> str:
    """Ask the LLM for the mind-map outline and validate it parses and covers
    every item; one repair re-prompt, then UnparseableOutline."""
    template = load_prompt("mind_map")
    items = "\n".join(f"{i}. {item}" for i, item in enumerate(draft.items, start=1))
    user = template.render_user(main_topic=draft.main_topic, items=items)

    def parse(reply: str) -> str:
        payload = parse_outline(reply, IdAllocator(), map_id="probe", source_doc_id="probe")
        _validate_outline_against_draft(payload, draft)
        return reply

    return _generate_with_repair(llm, template.system, user, parse, config.max_retries)


def build_mind_map(
    draft: FciDraft,
    config: IngestConfig,
    llm: LLMProvider,
    allocator: IdAllocator,
    map_id: str | None = None,
) -> MindMapPayload:
    """Turn a verified draft into a staged mind map with real node ids."""
    outline = request_outline(draft, config, llm)
    return parse_outline(
        outline,
        allocator,
        map_id=map_id or draft.doc_id,
        source_doc_id=draft.doc_id,
    )


# -- per-document pipeline ---------------------------------------------------


def draft_document(
    doc: Document,
    config: IngestConfig,
    llm: LLMProvider,
    embedder: EmbeddingProvider,
) -> DraftResult:
    """Provider-bound part of ingestion: extract, verify, regenerate, outline.

    Runs at most ``max_retries + 1`` extraction attempts. Safe to run for many
    documents concurrently; it allocates no node ids.
    """
    last_scores: VerificationScores | None = None
    for attempt in range(config.max_retries + 1):
        draft = extract_fcis(doc, config, llm, attempt=attempt)
        scores = verify_fcis(draft, doc, config, embedder)
        last_scores = scores
        if scores.passed:
            outline = request_outline(draft, config, llm)
            return DraftResult(draft=draft, outline_text=outline, scores=scores, attempts=attempt + 1)
    assert last_scores is not None
    raise VerificationExhausted(
        f"document {doc.doc_id!r} failed verification after {config.max_retries + 1} attempts "
        f"(soft_token={last_scores.soft_token:.4f}, lcs={last_scores.lcs:.4f})",
        last_scores,
    )


def realize_mind_map(
    result: DraftResult,
    allocator: IdAllocator,
    map_id: str | None = None,
) -> MindMapPayload:
    """Deterministic part of ingestion: parse the outline with real ids."""
    return parse_outline(
        result.outline_text,
        allocator,
        map_id=map_id or result.draft.doc_id,
        source_doc_id=result.draft.doc_id,
    )


def ingest_document(
    doc: Document,
    config: IngestConfig,
    llm: LLMProvider,
    embedder: EmbeddingProvider,
    allocator: IdAllocator,
    map_id: str | None = None,
) -> tuple[MindMapPayload, VerificationScores]:
    """Full single-document pipeline; the caller adds the payload to a graph."""
    result = draft_document(doc, config, llm, embedder)
    payload = realize_mind_map(result, allocator, map_id=map_id)
    return payload, result.scores
