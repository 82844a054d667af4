"""Query-time retrieval: matrix walking over fact paths, plus a stepwise oracle.

The query is decomposed into key points; each key point scores every candidate
path cell, seeds the strongest fact cells, and stains a contribution region
around each seed (climb left along the seed's row, then sweep the co-ancestor
row band rightward, stopping each row at its first rejected cell). Stained
regions aggregate across seeds and the best rows come back as a structured
hierarchical context.

``dfs_oracle`` answers the same query by literally walking the graph node by
node instead of slicing matrices. It must select the identical path set; its
instrumented visit and evaluation counters model what sequential stepping
costs without the matrix layout.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .fuse import PathEmbeddingStore
from .graph import PAD, NodeKind, PseudoGraph, StructureError
from .index import (
    CandidateSet,
    TemplateMatrices,
    build_template_matrices,
    candidate_expansion,
    locate_seed_topics,
)
from .prompts import load_prompt
from .providers import (
    EmbeddingProvider,
    GenerationRequest,
    LLMProvider,
    ProviderError,
    similarities,
)


class RetrieveError(Exception):
    pass


class NoFactCellsError(RetrieveError):
    pass


@dataclass
class RetrievalConfig:
    theta_s: float = 0.03
    theta_f: float = 0.05
    top_k_paths: int = 8
    seeds_per_kp: int = 3
    seed_topic_k: int = 5
    rectangular_bounds: bool = False
    whole_graph_candidates: bool = False


@dataclass
class KeyPoint:
    index: int
    text: str
    vector: np.ndarray


@dataclass
class SeedNode:
    row: int
    col: int
    sim: float
    kp_index: int


@dataclass
class Boundaries:
    bnd_l: int
    bnd_t: int
    bnd_b: int
    bnd_r: int | None = None  # set only under the rectangular reading


@dataclass
class RankedPath:
    row: int
    node_ids: tuple[int, ...]
    texts: tuple[str, ...]
    score: float
    kp_indices: tuple[int, ...]


@dataclass
class StructuredContext:
    query: str
    ranked_paths: list[RankedPath]
    outline: str
    low_confidence: bool


@dataclass
class RetrievalTrace:
    """Optional diagnostics filled in by retrieve or dfs_oracle."""

    kps: list[KeyPoint] = field(default_factory=list)
    seed_topics: list[int] = field(default_factory=list)
    candidates: CandidateSet | None = None
    template: TemplateMatrices | None = None
    sims: list[np.ndarray] = field(default_factory=list)
    seeds: list[SeedNode] = field(default_factory=list)
    boundaries: list[Boundaries] = field(default_factory=list)
    cms: list[np.ndarray] = field(default_factory=list)
    pms: list[np.ndarray] = field(default_factory=list)
    per_seed_evals: list[int] = field(default_factory=list)
    per_seed_path_len: list[int] = field(default_factory=list)
    per_seed_band_cells: list[int] = field(default_factory=list)
    contribution_evals: int = 0
    visits: int = 0
    row_scores: list[float] = field(default_factory=list)


# -- key points ---------------------------------------------------------------

_KP_PREFIX_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def generate_key_points(
    query: str,
    llm: LLMProvider,
    embedder: EmbeddingProvider,
    max_retries: int = 2,
) -> list[KeyPoint]:
    """Decompose the query into embedded key points.

    Provider failure degrades to a single key point carrying the query text
    itself, so retrieval still works without the LLM.
    """
    if not query.strip():
        raise ValueError("query is empty")
    template = load_prompt("key_points")
    texts: list[str] = []
    try:
        reply = llm.generate(
            GenerationRequest(
                prompt=template.render_user(question=query),
                system_prompt=template.system,
                max_retries=max_retries,
            )
        )
        for line in reply.splitlines():
            cleaned = _KP_PREFIX_RE.sub("", line).strip()
            if cleaned:
                texts.append(cleaned)
    except ProviderError:
        texts = []
    if not texts:
        texts = [query.strip()]
    vectors = embedder.embed(texts)
    return [KeyPoint(index=i, text=t, vector=vectors[i]) for i, t in enumerate(texts)]


# -- per-key-point matrices ----------------------------------------------------


def similarity_matrix(kp: KeyPoint, tm: TemplateMatrices) -> np.ndarray:
    """Cosine of the key point against every non-PAD cell (0.0 at PAD).

    Each distinct node is scored once and scattered to every cell it occupies;
    the shared einsum primitive keeps the values bit-identical to scoring the
    same node anywhere else.
    """
    flat_ids = tm.ids.ravel()
    unique_ids, first_idx, inverse = np.unique(flat_ids, return_index=True, return_inverse=True)
    flat_vectors = tm.vectors.reshape(-1, tm.vectors.shape[2])[first_idx]
    sims_unique = similarities(flat_vectors, kp.vector)
    sims_unique[unique_ids == PAD] = 0.0
    return sims_unique[inverse].reshape(tm.ids.shape)


def select_seed_nodes(
    kp: KeyPoint,
    sim: np.ndarray,
    tm: TemplateMatrices,
    seeds_per_kp: int,
) -> list[SeedNode]:
    """Pick the strongest fact cells for one key point.

    Only fact cells (the last non-PAD column of each row) are eligible, ties
    break toward the smaller row index, and each row yields at most one seed.

    Raises:
        NoFactCellsError: the template has no rows.
    """
    if seeds_per_kp < 1:
        raise ValueError("seeds_per_kp must be at least 1")
    if tm.n_rows == 0:
        raise NoFactCellsError("template has no fact cells")
    cols = tm.fact_cols()
    fact_sims = sim[np.arange(tm.n_rows), cols]
    # stable sort on the negated sims: ties fall back to ascending row index
    order = np.argsort(-fact_sims, kind="stable")
    return [
        SeedNode(row=int(i), col=int(cols[i]), sim=float(fact_sims[i]), kp_index=kp.index)
        for i in order[:seeds_per_kp]
    ]


def _contribution(seed_sim: float, candidate_sim: float, theta_s: float, theta_f: float) -> float:
    """Support keeps the candidate's similarity, fuzzy halves it, reject zeroes it.

    Comparisons are inclusive and a candidate more similar than the seed (a
    negative difference) always supports. Non-positive outcomes collapse to
    0.0 so recorded contributions stay in (0, 1].
    """
    diff = seed_sim - candidate_sim
    if diff <= theta_s:
        value = candidate_sim
    elif diff <= theta_f:
        value = 0.5 * candidate_sim
    else:
        value = 0.0
    return value if value > 0.0 else 0.0


def control_matrix(
    seed: SeedNode,
    sim: np.ndarray,
    tm: TemplateMatrices,
    config: RetrievalConfig,
    trace: RetrievalTrace | None = None,
) -> tuple[np.ndarray, int]:
    """Stain the contribution region around one seed.

    Leftward pass: walk the seed's own row from its fact cell toward the
    topic, recording contributions until the first rejection; ``bnd_l`` is the
    column of the last accepted ancestor (the seed's own column when even the
    parent is rejected). Rightward pass: every row in the co-ancestor band is
    swept left to right from ``bnd_l``, each stopping at its first rejection;
    cells never visited stay zero.

    Returns:
        (control matrix, bnd_l)
    """
    r, c, s0 = seed.row, seed.col, seed.sim
    cm = np.zeros(sim.shape, dtype=np.float64)
    evals = 0

    seed_value = _contribution(s0, float(sim[r, c]), config.theta_s, config.theta_f)
    evals += 1
    bnd_l = c
    if seed_value > 0.0:
        j = c - 1
        while j >= 0:
            evals += 1
            if _contribution(s0, float(sim[r, j]), config.theta_s, config.theta_f) == 0.0:
                break
            bnd_l = j
            j -= 1

    v_end = tm.ids[r, bnd_l]
    band = np.nonzero(tm.ids[:, bnd_l] == v_end)[0]
    bnd_t, bnd_b = int(band[0]), int(band[-1])
    if band.shape[0] != bnd_b - bnd_t + 1:
        raise StructureError("co-ancestor rows are not contiguous")

    sub_sim = sim[bnd_t : bnd_b + 1, bnd_l :]
    sub_mask = tm.mask[bnd_t : bnd_b + 1, bnd_l :]
    diff = s0 - sub_sim
    value = np.where(diff <= config.theta_s, sub_sim, np.where(diff <= config.theta_f, 0.5 * sub_sim, 0.0))
    value = np.where((value > 0.0) & sub_mask, value, 0.0)
    # a row goes dead at its first zero; later cells are never visited
    alive = np.cumprod(value > 0.0, axis=1)
    cm[bnd_t : bnd_b + 1, bnd_l :] = value * alive
    evals += int(sub_mask.sum())

    if trace is not None:
        trace.per_seed_evals.append(evals)
        trace.per_seed_path_len.append(int(tm.mask[r].sum()))
        trace.per_seed_band_cells.append(int(sub_mask.sum()))
        trace.contribution_evals += evals
    return cm, bnd_l


def band_boundaries(tm: TemplateMatrices, seed: SeedNode, bnd_l: int, rectangular: bool = False) -> Boundaries:
    v_end = tm.ids[seed.row, bnd_l]
    band = np.nonzero(tm.ids[:, bnd_l] == v_end)[0]
    bnd_t, bnd_b = int(band[0]), int(band[-1])
    bnd_r = None
    if rectangular:
        bnd_r = int(tm.fact_cols()[bnd_t : bnd_b + 1].min())
    return Boundaries(bnd_l=bnd_l, bnd_t=bnd_t, bnd_b=bnd_b, bnd_r=bnd_r)


def pathway_matrix(
    seed: SeedNode,
    bnd_l: int,
    tm: TemplateMatrices,
    rectangular: bool = False,
) -> np.ndarray:
    """0/1 region mask: the co-ancestor band rows, from ``bnd_l`` rightward.

    The default reading lets each row run to its own fact cell (ragged right
    edge); the rectangular variant truncates every band row at the shortest
    row's fact column instead.
    """
    bounds = band_boundaries(tm, seed, bnd_l, rectangular=rectangular)
    pm = np.zeros(tm.ids.shape, dtype=np.uint8)
    right = bounds.bnd_r if rectangular else tm.n_cols - 1
    assert right is not None
    region = tm.mask[bounds.bnd_t : bounds.bnd_b + 1, bnd_l : right + 1]
    pm[bounds.bnd_t : bounds.bnd_b + 1, bnd_l : right + 1] = region.astype(np.uint8)
    return pm


def aggregate_matrix(sms: list[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    """Per-cell exactly-rounded sum over seeds; seed order cannot matter."""
    am = np.zeros(shape, dtype=np.float64)
    if not sms:
        return am
    stack = np.stack(sms)
    for i in range(shape[0]):
        for j in range(shape[1]):
            am[i, j] = math.fsum(stack[:, i, j])
    return am


def _row_scores(sms: list[np.ndarray], n_rows: int, n_cols: int) -> list[float]:
    """Per-row exactly-rounded sums over every seed's stained values.

    Values are never negative, so dropping zeros cannot change the exact sum;
    only rows with any stained cell pay for an fsum.
    """
    if not sms:
        return [0.0] * n_rows
    stack = np.stack(sms)  # (seeds, rows, cols)
    per_row = stack.transpose(1, 0, 2).reshape(n_rows, -1)
    scores = [0.0] * n_rows
    for i in np.nonzero(per_row.any(axis=1))[0]:
        values = per_row[i]
        scores[int(i)] = math.fsum(values[values != 0.0])
    return scores


def _render_outline(graph: PseudoGraph, paths: list[RankedPath]) -> str:
    """Hierarchical outline of the selected paths, shared ancestors printed once.

    Topics appear in order of their best-ranked path; inside a topic the paths
    are laid out in document order so common prefixes fold together.
    """
    blocks: dict[int, list[RankedPath]] = {}
    topic_order: list[int] = []
    for path in paths:
        topic_id = path.node_ids[0]
        if topic_id not in blocks:
            blocks[topic_id] = []
            topic_order.append(topic_id)
        blocks[topic_id].append(path)
    lines: list[str] = []
    for topic_id in topic_order:
        block = sorted(blocks[topic_id], key=lambda p: p.row)
        previous: tuple[int, ...] = ()
        for path in block:
            common = 0
            for a, b in zip(previous, path.node_ids):
                if a != b:
                    break
                common += 1
            for depth in range(common, len(path.node_ids)):
                text = path.texts[depth]
                if depth == len(path.node_ids) - 1:
                    text = f"{text}  [score={path.score:.4f}]"
                lines.append(f"{'  ' * depth}- {text}")
            previous = path.node_ids
    return "\n".join(lines)


def aggregate_and_select(
    graph: PseudoGraph,
    tm: TemplateMatrices,
    seeds: list[SeedNode],
    cms: list[np.ndarray],
    pms: list[np.ndarray],
    config: RetrievalConfig,
    query: str = "",
    trace: RetrievalTrace | None = None,
) -> StructuredContext:
    """Aggregate stained regions and pick the top rows.

    A row's score is the exactly-rounded sum of every stained value it
    received from every seed; ties break toward the smaller row index.
    """
    sms = [cm * pm for cm, pm in zip(cms, pms)]
    scores = _row_scores(sms, tm.n_rows, tm.n_cols)
    if trace is not None:
        trace.row_scores = scores
    score_arr = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-score_arr, kind="stable")
    chosen = [int(i) for i in order if score_arr[i] > 0.0][: config.top_k_paths]
    ranked: list[RankedPath] = []
    for row in chosen:
        node_ids = tuple(int(n) for n in tm.ids[row] if n != PAD)
        contributing = sorted(
            {seeds[s].kp_index for s in range(len(seeds)) if float(np.max(sms[s][row])) > 0.0}
        )
        ranked.append(
            RankedPath(
                row=row,
                node_ids=node_ids,
                texts=tuple(graph.nodes[nid].text for nid in node_ids),
                score=scores[row],
                kp_indices=tuple(contributing),
            )
        )
    low_confidence = not ranked or ranked[0].score < config.theta_f
    return StructuredContext(
        query=query,
        ranked_paths=ranked,
        outline=_render_outline(graph, ranked),
        low_confidence=low_confidence,
    )


# -- the full matrix pipeline ---------------------------------------------------


def _plan_candidates(
    query: str,
    graph: PseudoGraph,
    store: PathEmbeddingStore,
    embedder: EmbeddingProvider,
    config: RetrievalConfig,
    trace: RetrievalTrace | None,
) -> CandidateSet:
    query_vector = embedder.embed([query.strip()])[0]
    seed_topics = locate_seed_topics(query_vector, graph, store, config.seed_topic_k)
    if config.whole_graph_candidates:
        all_topics = [n.id for n in graph.topics()]
        candidates = CandidateSet(
            seed_topics=tuple(seed_topics),
            connected=frozenset(set(all_topics) - set(seed_topics)),
        )
    else:
        candidates = candidate_expansion(graph, seed_topics)
    if trace is not None:
        trace.seed_topics = list(seed_topics)
        trace.candidates = candidates
    return candidates


def _collect_seeds(
    kps: list[KeyPoint],
    tm: TemplateMatrices,
    config: RetrievalConfig,
    trace: RetrievalTrace | None,
) -> tuple[list[SeedNode], list[np.ndarray]]:
    sims = [similarity_matrix(kp, tm) for kp in kps]
    seeds: list[SeedNode] = []
    for kp in kps:
        seeds.extend(select_seed_nodes(kp, sims[kp.index], tm, config.seeds_per_kp))
    if trace is not None:
        trace.sims = sims
        trace.seeds = seeds
    return seeds, sims


def retrieve(
    query: str,
    graph: PseudoGraph,
    store: PathEmbeddingStore,
    llm: LLMProvider,
    embedder: EmbeddingProvider,
    config: RetrievalConfig | None = None,
    trace: RetrievalTrace | None = None,
    template: TemplateMatrices | None = None,
) -> StructuredContext:
    """Answer a query with a structured context of top fact paths.

    ``template`` short-circuits the per-query matrix build and is only honored
    together with ``whole_graph_candidates`` (the prebuilt matrix must cover
    everything the query may touch).
    """
    config = config or RetrievalConfig()
    kps = generate_key_points(query, llm, embedder)
    if trace is not None:
        trace.kps = kps
    candidates = _plan_candidates(query, graph, store, embedder, config, trace)
    if template is not None and config.whole_graph_candidates:
        tm = template
    else:
        tm = build_template_matrices(graph, candidates.ordered(), store)
    if trace is not None:
        trace.template = tm
    seeds, sims = _collect_seeds(kps, tm, config, trace)
    cms: list[np.ndarray] = []
    pms: list[np.ndarray] = []
    for seed in seeds:
        cm, bnd_l = control_matrix(seed, sims[seed.kp_index], tm, config, trace=trace)
        pm = pathway_matrix(seed, bnd_l, tm, rectangular=config.rectangular_bounds)
        if trace is not None:
            trace.boundaries.append(band_boundaries(tm, seed, bnd_l, config.rectangular_bounds))
            trace.cms.append(cm)
            trace.pms.append(pm)
        cms.append(cm)
        pms.append(pm)
    return aggregate_and_select(graph, tm, seeds, cms, pms, config, query=query, trace=trace)


# -- stepwise reference walker ---------------------------------------------------


def dfs_oracle(
    query: str,
    graph: PseudoGraph,
    store: PathEmbeddingStore,
    llm: LLMProvider,
    embedder: EmbeddingProvider,
    config: RetrievalConfig | None = None,
    trace: RetrievalTrace | None = None,
) -> StructuredContext:
    """Stepwise reference retrieval: same key points and seeds, literal walking.

    Per seed it climbs the seed fact's ancestors, evaluating contributions
    until the first rejection fixes the turning ancestor, then steps through
    every candidate node sequentially (depth-first per topic). Inside the
    turning ancestor's subtree it accumulates contributions along each path,
    freezing accumulation below rejected nodes while still enumerating their
    leaves. Everything it touches increments the visit counter and every rule
    application increments the evaluation counter, which is what makes it the
    cost yardstick for the matrix walk.

    Models the default ragged region only; do not compare against a retrieve
    configured with rectangular_bounds.
    """
    config = config or RetrievalConfig()
    kps = generate_key_points(query, llm, embedder)
    if trace is not None:
        trace.kps = kps
    candidates = _plan_candidates(query, graph, store, embedder, config, trace)
    topics = sorted(candidates.all_topics)

    # enumerate candidate fact paths in template row order, straight off the graph
    fact_rows: list[int] = []
    fact_paths: dict[int, list[int]] = {}
    for topic_id in topics:

        def walk(node_id: int, prefix: list[int]) -> None:
            if graph.nodes[node_id].kind is NodeKind.FACT:
                fact_rows.append(node_id)
                fact_paths[node_id] = prefix
                return
            for child in graph.children(node_id):
                walk(child, prefix + [child])

        walk(topic_id, [topic_id])
    if not fact_rows:
        raise NoFactCellsError("no candidate fact paths")

    sim_cache: list[dict[int, float]] = [dict() for _ in kps]

    def node_sim(kp: KeyPoint, node_id: int) -> float:
        cache = sim_cache[kp.index]
        if node_id not in cache:
            cache[node_id] = float(similarities(store.get(node_id)[None, :], kp.vector)[0])
        return cache[node_id]

    # seed selection: strongest facts per key point, ties toward earlier rows
    seeds: list[tuple[KeyPoint, int, float]] = []
    for kp in kps:
        fact_sims = [node_sim(kp, fid) for fid in fact_rows]
        order = sorted(range(len(fact_rows)), key=lambda i: (-fact_sims[i], i))
        for i in order[: config.seeds_per_kp]:
            seeds.append((kp, fact_rows[i], fact_sims[i]))

    contributions: dict[int, list[float]] = {fid: [] for fid in fact_rows}
    visits = 0
    evals = 0

    for kp, seed_fact, s0 in seeds:
        # climb: find the last accepted ancestor
        visits += 1
        evals += 1
        v_end = seed_fact
        if _contribution(s0, node_sim(kp, seed_fact), config.theta_s, config.theta_f) > 0.0:
            cur = graph.parent(seed_fact)
            while cur is not None:
                visits += 1
                evals += 1
                if _contribution(s0, node_sim(kp, cur), config.theta_s, config.theta_f) == 0.0:
                    break
                v_end = cur
                cur = graph.parent(cur)

        # sequential scan of the whole candidate forest
        def step(node_id: int, chain: tuple[float, ...], in_region: bool, dead: bool) -> None:
            nonlocal visits, evals
            visits += 1
            in_region = in_region or node_id == v_end
            if not dead:
                evals += 1
                value = _contribution(s0, node_sim(kp, node_id), config.theta_s, config.theta_f)
                if in_region:
                    if value == 0.0:
                        dead = True
                    else:
                        chain = chain + (value,)
            node = graph.nodes[node_id]
            if node.kind is NodeKind.FACT:
                if in_region:
                    contributions[node_id].extend(chain)
                return
            for child in graph.children(node_id):
                step(child, chain, in_region, dead)

        for topic_id in topics:
            step(topic_id, (), False, False)

    scores = [math.fsum(contributions[fid]) for fid in fact_rows]
    order = sorted(range(len(fact_rows)), key=lambda i: (-scores[i], i))
    chosen = [i for i in order if scores[i] > 0.0][: config.top_k_paths]

    kp_hits: dict[int, set[int]] = {fid: set() for fid in fact_rows}
    # rebuild attribution from per-seed reruns would re-walk everything; track
    # it cheaply instead by re-running the chain bookkeeping per seed on the
    # chosen rows only
    for kp, seed_fact, s0 in seeds:
        evals_ignore = _contribution(s0, node_sim(kp, seed_fact), config.theta_s, config.theta_f)
        v_end = seed_fact
        if evals_ignore > 0.0:
            cur = graph.parent(seed_fact)
            while cur is not None:
                if _contribution(s0, node_sim(kp, cur), config.theta_s, config.theta_f) == 0.0:
                    break
                v_end = cur
                cur = graph.parent(cur)
        for row in chosen:
            fid = fact_rows[row]
            path = fact_paths[fid]
            if v_end not in path:
                continue
            got_any = False
            for node_id in path[path.index(v_end) :]:
                value = _contribution(s0, node_sim(kp, node_id), config.theta_s, config.theta_f)
                if value == 0.0:
                    break
                got_any = True
            if got_any:
                kp_hits[fid].add(kp.index)

    ranked: list[RankedPath] = []
    for row in chosen:
        fid = fact_rows[row]
        path = fact_paths[fid]
        ranked.append(
            RankedPath(
                row=row,
                node_ids=tuple(path),
                texts=tuple(graph.nodes[nid].text for nid in path),
                score=scores[row],
                kp_indices=tuple(sorted(kp_hits[fid])),
            )
        )
    low_confidence = not ranked or ranked[0].score < config.theta_f
    if trace is not None:
        trace.visits = visits
        trace.contribution_evals = evals
        trace.row_scores = scores
        trace.seeds = [
            SeedNode(row=fact_rows.index(fid), col=len(fact_paths[fid]) - 1, sim=s, kp_index=kp.index)
            for kp, fid, s in seeds
        ]
    return StructuredContext(
        query=query,
        ranked_paths=ranked,
        outline=_render_outline(graph, ranked),
        low_confidence=low_confidence,
    )
