"""Command line interface: ingest a corpus, query an archive, stats, bench.

Exit codes: 0 success, 1 fatal error, 2 partial ingest (some documents
failed verification or parsing but the archive was still written).
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .config import CliConfig, ConfigError, load_config
from .estimator import IngestFailure
from .fuse import compute_path_embeddings, fuse
from .graph import PseudoGraph
from .ingest import Document, DraftResult, draft_document, realize_mind_map
from .providers import RandomUnitEmbedder, resolve_providers
from .retrieve import (
    RetrievalConfig,
    RetrievalTrace,
    StructuredContext,
    dfs_oracle,
    retrieve,
)
from .stats import compute_stats
from .store import load_graph, save_graph
from .synth import SynthSpec, synth_queries, synthesize


def _read_corpus(directory: Path) -> list[Document]:
    """Load ``*.txt`` files, sorted by name: first line title, rest body."""
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    docs: list[Document] = []
    for path in sorted(directory.glob("*.txt")):
        text = path.read_text(encoding="utf-8")
        first, _, rest = text.partition("\n")
        docs.append(Document(doc_id=path.stem, title=first.strip(), body=rest.strip()))
    if not docs:
        raise FileNotFoundError(f"no .txt documents in {directory}")
    return docs


def _corpus_chars(directory: Path) -> dict[str, int]:
    return {doc.doc_id: len(doc.body) for doc in _read_corpus(directory)}


def _resolved_config(args: argparse.Namespace) -> CliConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "mock", False):
        config.providers.mock = True
    if getattr(args, "jobs", None):
        config.jobs = args.jobs
    retrieval = config.retrieval
    for flag, attr in (
        ("top_k", "top_k_paths"),
        ("theta_s", "theta_s"),
        ("theta_f", "theta_f"),
        ("seeds_per_kp", "seeds_per_kp"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(retrieval, attr, value)
    return config


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    pair = resolve_providers(config.providers)
    docs = _read_corpus(Path(args.corpus))

    results: list[DraftResult | None] = [None] * len(docs)
    failures: list[IngestFailure] = []

    def draft(i: int) -> None:
        try:
            results[i] = draft_document(docs[i], config.ingest, pair.llm, pair.embedder)
        except Exception as exc:
            failures.append(
                IngestFailure(doc_id=docs[i].doc_id, error=str(exc), scores=getattr(exc, "scores", None))
            )

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            list(pool.map(draft, range(len(docs))))
    else:
        for i in range(len(docs)):
            draft(i)

    graph = PseudoGraph()
    ingested = 0
    for result in results:
        if result is not None:
            payload = realize_mind_map(result, graph.allocator)
            graph.add_mind_map(payload)
            ingested += 1

    for failure in sorted(failures, key=lambda f: f.doc_id):
        detail = f" (scores: {failure.scores})" if failure.scores else ""
        print(f"warning: {failure.doc_id}: {failure.error}{detail}", file=sys.stderr)

    if ingested == 0:
        print("error: every document failed ingestion", file=sys.stderr)
        return 1

    graph.seal()
    store = compute_path_embeddings(graph, pair.embedder)
    created = fuse(graph, config.fusion, store)
    digest = save_graph(graph, store, args.out)

    print(f"documents ingested: {ingested}/{len(docs)}")
    print(f"nodes: {len(graph.nodes)}  lines: {len(graph.lines)}  super_nodes: {len(graph.super_nodes)}")
    print(f"fusion created: {len(created)}")
    print(f"archive: {args.out}")
    print(f"digest: {digest}")
    return 0 if not failures else 2


def _context_record(context: StructuredContext) -> dict:
    return {
        "query": context.query,
        "low_confidence": context.low_confidence,
        "paths": [
            {
                "row": p.row,
                "score": p.score,
                "node_ids": list(p.node_ids),
                "texts": list(p.texts),
                "kp_indices": list(p.kp_indices),
            }
            for p in context.ranked_paths
        ],
        "outline": context.outline,
    }


def _print_context(context: StructuredContext, fmt: str) -> None:
    if fmt == "record":
        print(json.dumps(_context_record(context), sort_keys=True))
        return
    print(f"query: {context.query}")
    print(f"low_confidence: {str(context.low_confidence).lower()}")
    for rank, path in enumerate(context.ranked_paths, start=1):
        kps = ",".join(str(k) for k in path.kp_indices)
        print(f"#{rank}  row={path.row}  score={path.score:.6f}  kps=[{kps}]")
    if context.outline:
        print("outline:")
        print(context.outline)


def cmd_query(args: argparse.Namespace) -> int:
    config = _resolved_config(args)
    pair = resolve_providers(config.providers)
    graph, store = load_graph(args.archive)
    context = retrieve(args.question, graph, store, pair.llm, pair.embedder, config=config.retrieval)
    _print_context(context, args.format)
    if args.oracle:
        reference = dfs_oracle(args.question, graph, store, pair.llm, pair.embedder, config=config.retrieval)
        agree = (
            [(p.row, p.node_ids, p.score) for p in context.ranked_paths]
            == [(p.row, p.node_ids, p.score) for p in reference.ranked_paths]
        )
        print(f"oracle_agreement: {str(agree).lower()}")
        if not agree:
            return 1
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    graph, _ = load_graph(args.archive)
    chars = _corpus_chars(Path(args.corpus))
    result = compute_stats(graph, chars)
    print(result.as_record() if args.format == "record" else result.as_text())
    return 0


def run_benchmark(
    n_paths: int,
    n_queries: int,
    seed: int = 0,
    retrieval: RetrievalConfig | None = None,
) -> dict:
    """Synthesize a graph and race the matrix walk against the stepwise walker.

    The returned report separates deterministic fields (seeded content,
    counters, agreement) from wall-clock timing, which varies run to run.
    """
    retrieval = retrieval or RetrievalConfig()
    embedder = RandomUnitEmbedder(dim=64, salt=f"bench-{seed}")
    spec = SynthSpec(
        n_paths=n_paths,
        super_topic_pairs=max(2, n_paths // 5000),
        super_fact_pairs=max(2, n_paths // 5000),
        seed=seed,
    )
    graph, store = synthesize(spec, embedder)
    pair = resolve_providers(load_config(use_env=False).providers)
    queries = synth_queries(n_queries, seed=seed)

    fast_evals = 0
    slow_evals = 0
    slow_visits = 0
    agreements = 0
    fast_times: list[float] = []
    slow_times: list[float] = []
    for query in queries:
        fast_trace = RetrievalTrace()
        t0 = time.perf_counter()
        fast = retrieve(query, graph, store, pair.llm, embedder, config=retrieval, trace=fast_trace)
        fast_times.append(time.perf_counter() - t0)

        slow_trace = RetrievalTrace()
        t0 = time.perf_counter()
        slow = dfs_oracle(query, graph, store, pair.llm, embedder, config=retrieval, trace=slow_trace)
        slow_times.append(time.perf_counter() - t0)

        fast_evals += fast_trace.contribution_evals
        slow_evals += slow_trace.contribution_evals
        slow_visits += slow_trace.visits
        fast_rows = [(p.row, p.node_ids, p.score) for p in fast.ranked_paths]
        slow_rows = [(p.row, p.node_ids, p.score) for p in slow.ranked_paths]
        if fast_rows == slow_rows and fast.outline == slow.outline:
            agreements += 1

    return {
        "deterministic": {
            "seed": seed,
            "n_paths_requested": n_paths,
            "n_fact_paths": sum(1 for _ in graph.facts()),
            "n_nodes": len(graph.nodes),
            "n_topics": sum(1 for _ in graph.topics()),
            "n_super_nodes": len(graph.super_nodes),
            "n_queries": n_queries,
            "matrix_evals": fast_evals,
            "oracle_evals": slow_evals,
            "oracle_visits": slow_visits,
            "eval_ratio": fast_evals / slow_evals if slow_evals else 0.0,
            "agreements": agreements,
        },
        "timing": {
            "matrix_median_s": statistics.median(fast_times),
            "oracle_median_s": statistics.median(slow_times),
            "median_speedup": (
                statistics.median(slow_times) / statistics.median(fast_times)
                if statistics.median(fast_times) > 0
                else float("inf")
            ),
        },
    }


def cmd_bench(args: argparse.Namespace) -> int:
    report = run_benchmark(args.paths, args.queries, seed=args.seed)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.format == "record":
        print(json.dumps(report, sort_keys=True))
    else:
        det = report["deterministic"]
        timing = report["timing"]
        for key in sorted(det):
            print(f"{key} = {det[key]}")
        print("timing (varies run to run):")
        for key in sorted(timing):
            print(f"  {key} = {timing[key]:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mindgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build an archive from a directory of .txt documents")
    p_ingest.add_argument("corpus", help="directory of .txt files (first line is the title)")
    p_ingest.add_argument("-o", "--out", required=True, help="archive directory to write")
    p_ingest.add_argument("-c", "--config", help="JSON config file")
    p_ingest.add_argument("--mock", action="store_true", help="force the offline mock providers")
    p_ingest.add_argument("--jobs", type=int, help="parallel drafting threads")
    p_ingest.set_defaults(func=cmd_ingest)

    p_query = sub.add_parser("query", help="retrieve structured context from an archive")
    p_query.add_argument("archive", help="archive directory")
    p_query.add_argument("question")
    p_query.add_argument("-c", "--config", help="JSON config file")
    p_query.add_argument("--mock", action="store_true", help="force the offline mock providers")
    p_query.add_argument("-k", "--top-k", type=int, dest="top_k", help="paths to return")
    p_query.add_argument("--theta-s", type=float, dest="theta_s", help="support threshold")
    p_query.add_argument("--theta-f", type=float, dest="theta_f", help="fuzzy threshold")
    p_query.add_argument("--seeds-per-kp", type=int, dest="seeds_per_kp", help="seed facts per key point")
    p_query.add_argument("--oracle", action="store_true", help="also run the stepwise walker and compare")
    p_query.add_argument("--format", choices=("text", "record"), default="text")
    p_query.set_defaults(func=cmd_query)

    p_stats = sub.add_parser("stats", help="measure an archive against its corpus")
    p_stats.add_argument("archive", help="archive directory")
    p_stats.add_argument("--corpus", required=True, help="corpus directory the archive was built from")
    p_stats.add_argument("--format", choices=("text", "record"), default="text")
    p_stats.set_defaults(func=cmd_stats)

    p_bench = sub.add_parser("bench", help="race the matrix walk against the stepwise walker")
    p_bench.add_argument("--paths", type=int, default=50000, help="synthetic fact paths")
    p_bench.add_argument("--queries", type=int, default=20)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--report", help="write the full JSON report here")
    p_bench.add_argument("--format", choices=("text", "record"), default="text")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface anything else as a clean failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
