"""Durable on-disk archive for a graph and its path embeddings.

Layout (one directory per archive):

    manifest.txt    key=value lines: format version, counts, dimension, digests
    graph.records   one record per line, tab separated, insertion order
    vectors.f32     raw little-endian float32, row-major, one row per node record

Record lines start with a type tag:

    map\t<map_id>\t<topic_id>\t<source_doc_id>
    node\t<id>\t<kind>\t<map_id>\t<text>
    line\t<id>\t<parent_id>\t<child_id>\t<label>
    snode\t<id>\t<kind>\t<founder_id>\t<member_ids comma separated>

Text fields escape backslash, tab and newline (\\\\, \\t, \\n), so a record is
always exactly one physical line. Writing the same graph twice produces byte
identical files; the manifest carries sha256 digests over both payload files
and load refuses a mismatch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fuse import PathEmbeddingStore
from .graph import (
    MindMap,
    MindMapPayload,
    NavLine,
    Node,
    NodeKind,
    PseudoGraph,
    SuperKind,
    SuperNode,
)

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.txt"
RECORDS_NAME = "graph.records"
VECTORS_NAME = "vectors.f32"


class StoreError(Exception):
    pass


class CorruptArchive(StoreError):
    pass


class VersionMismatch(StoreError):
    pass


class IncompleteEmbeddings(StoreError):
    pass


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "\\":
                out.append("\\")
            elif nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            else:
                raise CorruptArchive(f"bad escape sequence \\{nxt}")
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass
class ArchiveInfo:
    format_version: int
    n_maps: int
    n_nodes: int
    n_lines: int
    n_super_nodes: int
    embedding_dim: int
    records_digest: str
    vectors_digest: str


def _render_records(graph: PseudoGraph) -> tuple[str, list[int]]:
    """Serialize the graph; returns the text and the node id order used."""
    lines: list[str] = []
    node_order: list[int] = []
    for mind_map in graph.maps.values():
        lines.append(
            "map\t{}\t{}\t{}".format(
                _escape(mind_map.map_id), mind_map.topic_id, _escape(mind_map.source_doc_id)
            )
        )
    for node in graph.nodes.values():
        lines.append(
            "node\t{}\t{}\t{}\t{}".format(
                node.id, node.kind.value, _escape(node.map_id), _escape(node.text)
            )
        )
        node_order.append(node.id)
    for line in graph.lines.values():
        lines.append(
            "line\t{}\t{}\t{}\t{}".format(line.id, line.parent_id, line.child_id, _escape(line.label))
        )
    for snode in graph.super_nodes.values():
        lines.append(
            "snode\t{}\t{}\t{}\t{}".format(
                snode.id,
                snode.kind.value,
                snode.founder_id,
                ",".join(str(m) for m in sorted(snode.member_ids)),
            )
        )
    return "\n".join(lines) + ("\n" if lines else ""), node_order


def save_graph(graph: PseudoGraph, store: PathEmbeddingStore, directory: str | Path) -> str:
    """Write the archive; returns the combined content digest.

    Raises:
        IncompleteEmbeddings: some node has no stored path embedding.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    missing = [nid for nid in graph.nodes if nid not in store]
    if missing:
        raise IncompleteEmbeddings(f"{len(missing)} nodes lack path embeddings (first: {missing[0]})")

    records_text, node_order = _render_records(graph)
    records_bytes = records_text.encode("utf-8")
    if node_order:
        rows = store.matrix_for(node_order).astype("<f4", copy=False)
        vectors_bytes = rows.tobytes(order="C")
    else:
        vectors_bytes = b""

    records_digest = hashlib.sha256(records_bytes).hexdigest()
    vectors_digest = hashlib.sha256(vectors_bytes).hexdigest()
    manifest_lines = [
        f"format_version={FORMAT_VERSION}",
        f"n_maps={len(graph.maps)}",
        f"n_nodes={len(graph.nodes)}",
        f"n_lines={len(graph.lines)}",
        f"n_super_nodes={len(graph.super_nodes)}",
        f"embedding_dim={store.dim}",
        f"records_digest={records_digest}",
        f"vectors_digest={vectors_digest}",
    ]
    (directory / RECORDS_NAME).write_bytes(records_bytes)
    (directory / VECTORS_NAME).write_bytes(vectors_bytes)
    (directory / MANIFEST_NAME).write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    return hashlib.sha256(records_bytes + vectors_bytes).hexdigest()


def read_manifest(directory: str | Path) -> ArchiveInfo:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise CorruptArchive(f"missing {MANIFEST_NAME} in {directory}")
    values: dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        raw = raw.strip()
        if not raw:
            continue
        if "=" not in raw:
            raise CorruptArchive(f"bad manifest line: {raw!r}")
        key, _, value = raw.partition("=")
        values[key] = value
    try:
        info = ArchiveInfo(
            format_version=int(values["format_version"]),
            n_maps=int(values["n_maps"]),
            n_nodes=int(values["n_nodes"]),
            n_lines=int(values["n_lines"]),
            n_super_nodes=int(values["n_super_nodes"]),
            embedding_dim=int(values["embedding_dim"]),
            records_digest=values["records_digest"],
            vectors_digest=values["vectors_digest"],
        )
    except KeyError as exc:
        raise CorruptArchive(f"manifest missing key {exc}") from exc
    except ValueError as exc:
        raise CorruptArchive(f"manifest value malformed: {exc}") from exc
    if info.format_version != FORMAT_VERSION:
        raise VersionMismatch(
            f"archive format {info.format_version}, this build reads {FORMAT_VERSION}"
        )
    return info


def _parse_records(text: str) -> tuple[
    list[MindMap], list[Node], list[NavLine], list[SuperNode]
]:
    maps: list[MindMap] = []
    nodes: list[Node] = []
    lines: list[NavLine] = []
    snodes: list[SuperNode] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw:
            continue
        fields = raw.split("\t")
        tag = fields[0]
        try:
            if tag == "map":
                _, map_id, topic_id, source_doc_id = fields
                maps.append(
                    MindMap(
                        map_id=_unescape(map_id),
                        topic_id=int(topic_id),
                        source_doc_id=_unescape(source_doc_id),
                    )
                )
            elif tag == "node":
                _, nid, kind, map_id, node_text = fields
                nodes.append(
                    Node(
                        id=int(nid),
                        kind=NodeKind(kind),
                        text=_unescape(node_text),
                        map_id=_unescape(map_id),
                    )
                )
            elif tag == "line":
                _, lid, parent_id, child_id, label = fields
                lines.append(
                    NavLine(
                        id=int(lid),
                        parent_id=int(parent_id),
                        child_id=int(child_id),
                        label=_unescape(label),
                    )
                )
            elif tag == "snode":
                _, sid, kind, founder_id, member_csv = fields
                members = {int(m) for m in member_csv.split(",") if m}
                snodes.append(
                    SuperNode(
                        id=int(sid),
                        kind=SuperKind(kind),
                        founder_id=int(founder_id),
                        member_ids=members,
                    )
                )
            else:
                raise CorruptArchive(f"unknown record tag {tag!r} at line {lineno}")
        except CorruptArchive:
            raise
        except ValueError as exc:
            raise CorruptArchive(f"malformed record at line {lineno}: {exc}") from exc
    return maps, nodes, lines, snodes


def load_graph(directory: str | Path) -> tuple[PseudoGraph, PathEmbeddingStore]:
    """Load and fully revalidate an archive.

    Raises:
        CorruptArchive: digest mismatch, malformed records, or any graph
            invariant violated by the stored data.
        VersionMismatch: written by an incompatible format version.
    """
    directory = Path(directory)
    info = read_manifest(directory)
    records_bytes = (directory / RECORDS_NAME).read_bytes()
    vectors_bytes = (directory / VECTORS_NAME).read_bytes()
    if hashlib.sha256(records_bytes).hexdigest() != info.records_digest:
        raise CorruptArchive("graph.records does not match its manifest digest")
    if hashlib.sha256(vectors_bytes).hexdigest() != info.vectors_digest:
        raise CorruptArchive("vectors.f32 does not match its manifest digest")

    maps, nodes, lines, snodes = _parse_records(records_bytes.decode("utf-8"))
    if len(maps) != info.n_maps or len(nodes) != info.n_nodes or len(lines) != info.n_lines:
        raise CorruptArchive("record counts disagree with manifest")
    if len(snodes) != info.n_super_nodes:
        raise CorruptArchive("record counts disagree with manifest")

    expected = info.n_nodes * info.embedding_dim * 4
    if len(vectors_bytes) != expected:
        raise CorruptArchive(
            f"vectors.f32 holds {len(vectors_bytes)} bytes, manifest implies {expected}"
        )

    by_map_nodes: dict[str, list[Node]] = {}
    by_map_lines: dict[str, list[NavLine]] = {}
    node_kind: dict[int, str] = {}
    for node in nodes:
        by_map_nodes.setdefault(node.map_id, []).append(node)
        node_kind[node.id] = node.map_id
    for line in lines:
        owner = node_kind.get(line.child_id)
        if owner is None:
            raise CorruptArchive(f"line {line.id} references unknown node {line.child_id}")
        by_map_lines.setdefault(owner, []).append(line)

    graph = PseudoGraph()
    try:
        for mind_map in maps:
            map_nodes = by_map_nodes.get(mind_map.map_id, [])
            map_lines = by_map_lines.get(mind_map.map_id, [])
            payload = MindMapPayload(
                mind_map=MindMap(
                    map_id=mind_map.map_id,
                    topic_id=mind_map.topic_id,
                    source_doc_id=mind_map.source_doc_id,
                    node_ids={n.id for n in map_nodes},
                    line_ids={ln.id for ln in map_lines},
                ),
                nodes=tuple(map_nodes),
                lines=tuple(map_lines),
            )
            graph.add_mind_map(payload)
        max_seen = 0
        for node in nodes:
            max_seen = max(max_seen, node.id)
        for line in lines:
            max_seen = max(max_seen, line.id)
        graph.allocator.reserve_through(max_seen)
        for snode in snodes:
            graph.add_super_node(snode.kind, snode.founder_id, set(snode.member_ids), snode_id=snode.id)
        graph.validate()
    except CorruptArchive:
        raise
    except Exception as exc:
        raise CorruptArchive(f"archived graph violates invariants: {exc}") from exc

    store = PathEmbeddingStore(dim=info.embedding_dim)
    if nodes:
        matrix = np.frombuffer(vectors_bytes, dtype="<f4").reshape(info.n_nodes, info.embedding_dim)
        store.put_many([n.id for n in nodes], matrix.copy())
    return graph, store
