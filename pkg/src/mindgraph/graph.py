"""Core graph model: mind maps, navigational lines, and cross-document super-nodes.

A pseudo-graph is a forest of per-document mind maps (a topic root, optional
route layers, fact leaves) plus super-nodes that cluster similar topics or
facts across documents. Node ids are engine-assigned monotonically increasing
integers; the PAD sentinel used by the matrix index is the maximum int64 and
is never assigned to a real node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

PAD = 2**63 - 1


class NodeKind(str, Enum):
    TOPIC = "topic"
    ROUTE = "route"
    FACT = "fact"


class SuperKind(str, Enum):
    SUPER_TOPIC = "super_topic"
    SUPER_FACT = "super_fact"

    @property
    def member_kind(self) -> NodeKind:
        return NodeKind.TOPIC if self is SuperKind.SUPER_TOPIC else NodeKind.FACT


class GraphError(Exception):
    """Base class for structural graph errors."""


class DuplicateIdError(GraphError):
    pass


class CycleError(GraphError):
    pass


class MultipleTopicsError(GraphError):
    pass


class StructureError(GraphError):
    pass


class UnknownNodeError(GraphError):
    pass


class NotAFactError(GraphError):
    pass


class SealedGraphError(GraphError):
    pass


@dataclass
class Node:
    id: int
    kind: NodeKind
    text: str
    map_id: str


@dataclass
class NavLine:
    """Directed labeled edge from a parent node to a child node.

    Labels are stored for provenance and rendering; they carry no retrieval
    semantics.
    """

    id: int
    parent_id: int
    child_id: int
    label: str = ""


@dataclass
class MindMap:
    map_id: str
    topic_id: int
    source_doc_id: str
    node_ids: set[int] = field(default_factory=set)
    line_ids: set[int] = field(default_factory=set)


@dataclass
class SuperNode:
    id: int
    kind: SuperKind
    founder_id: int
    member_ids: set[int] = field(default_factory=set)


@dataclass
class MindMapPayload:
    """A parsed mind map staged for atomic insertion into a graph."""

    mind_map: MindMap
    nodes: list[Node]
    lines: list[NavLine]


class IdAllocator:
    """Monotonic node/line/super-node id source. Never returns PAD."""

    def __init__(self, start: int = 1):
        if start >= PAD:
            raise ValueError("id space exhausted")
        self._next = start

    def take(self) -> int:
        value = self._next
        if value >= PAD:
            raise ValueError("id space exhausted")
        self._next = value + 1
        return value

    def reserve_through(self, used: int) -> None:
        # after loading an archive, continue above every persisted id
        if used >= self._next:
            self._next = used + 1

    @property
    def next_id(self) -> int:
        return self._next


class PseudoGraph:
    """Mutable while being built, structurally immutable once sealed.

    Mind maps can only be added before :meth:`seal`; super-nodes are added by
    the fusion pass, which runs on a sealed graph and is idempotent.
    """

    def __init__(self, allocator: IdAllocator | None = None):
        self.allocator = allocator or IdAllocator()
        self.nodes: dict[int, Node] = {}
        self.lines: dict[int, NavLine] = {}
        self.maps: dict[str, MindMap] = {}
        self.super_nodes: dict[int, SuperNode] = {}
        self._parent: dict[int, int] = {}
        self._parent_line: dict[int, int] = {}
        self._children: dict[int, list[int]] = {}
        self._membership: dict[tuple[int, SuperKind], int] = {}
        self._sealed = False

    # -- construction ------------------------------------------------------

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> None:
        self._sealed = True

    def add_mind_map(self, payload: MindMapPayload) -> str:
        """Validate and insert a whole mind map atomically.

        The payload is checked in full before any mutation, so a rejected map
        leaves the graph untouched.

        Returns:
            The map id of the inserted mind map.

        Raises:
            SealedGraphError: the graph is sealed.
            DuplicateIdError: the map id or any node/line id is not fresh.
            MultipleTopicsError: the payload does not have exactly one topic.
            CycleError: the line structure is not a tree rooted at the topic.
            StructureError: any other shape violation (leaf routes, childless
                topic, empty texts, foreign map ids, double parents).
        """
        if self._sealed:
            raise SealedGraphError("cannot add mind maps to a sealed graph")
        self._check_payload(payload)
        mm = payload.mind_map
        self.maps[mm.map_id] = mm
        for node in payload.nodes:
            self.nodes[node.id] = node
            self._children.setdefault(node.id, [])
        for line in payload.lines:
            self.lines[line.id] = line
            self._parent[line.child_id] = line.parent_id
            self._parent_line[line.child_id] = line.id
            self._children[line.parent_id].append(line.child_id)
        return mm.map_id

    def _check_payload(self, payload: MindMapPayload) -> None:
        mm = payload.mind_map
        if mm.map_id in self.maps:
            raise DuplicateIdError(f"map id {mm.map_id!r} already present")
        seen: set[int] = set()
        for node in payload.nodes:
            if node.id in self.nodes or node.id in seen:
                raise DuplicateIdError(f"node id {node.id} is not fresh")
            if node.id == PAD:
                raise DuplicateIdError("node id collides with the PAD sentinel")
            seen.add(node.id)
            if node.map_id != mm.map_id:
                raise StructureError(f"node {node.id} belongs to map {node.map_id!r}")
            if not node.text.strip():
                raise StructureError(f"node {node.id} has empty text")
        for line in payload.lines:
            if line.id in self.lines or line.id in seen:
                raise DuplicateIdError(f"line id {line.id} is not fresh")
            seen.add(line.id)
        if mm.node_ids != {n.id for n in payload.nodes}:
            raise StructureError("mind map node_ids disagree with payload nodes")
        if mm.line_ids != {l.id for l in payload.lines}:
            raise StructureError("mind map line_ids disagree with payload lines")

        topics = [n for n in payload.nodes if n.kind is NodeKind.TOPIC]
        if len(topics) != 1:
            raise MultipleTopicsError(f"expected exactly one topic, found {len(topics)}")
        if topics[0].id != mm.topic_id:
            raise StructureError("mind map topic_id does not name the topic node")

        by_id = {n.id: n for n in payload.nodes}
        parent: dict[int, int] = {}
        children: dict[int, list[int]] = {n.id: [] for n in payload.nodes}
        for line in payload.lines:
            if line.parent_id not in by_id or line.child_id not in by_id:
                raise StructureError(f"line {line.id} references a node outside the map")
            if line.child_id in parent:
                raise CycleError(f"node {line.child_id} has two parents")
            parent[line.child_id] = line.parent_id
            children[line.parent_id].append(line.child_id)
        if mm.topic_id in parent:
            raise StructureError("topic node has a parent")
        if len(payload.lines) != len(payload.nodes) - 1:
            raise StructureError("line count must be node count minus one")

        # reachability from the topic proves the lines form a single tree
        reached: set[int] = set()
        stack = [mm.topic_id]
        while stack:
            cur = stack.pop()
            if cur in reached:
                raise CycleError("cycle detected in mind map")
            reached.add(cur)
            stack.extend(children[cur])
        if reached != set(by_id):
            raise StructureError("mind map has nodes unreachable from the topic")

        for node in payload.nodes:
            kids = children[node.id]
            if node.kind is NodeKind.TOPIC and not kids:
                raise StructureError("topic node has no children")
            if node.kind is NodeKind.FACT and kids:
                raise StructureError(f"fact {node.id} has children")
            if node.kind is NodeKind.ROUTE and not kids:
                raise StructureError(f"route {node.id} is a leaf; leaves must be facts")

    def add_super_node(
        self,
        kind: SuperKind,
        founder_id: int,
        member_ids: Iterable[int],
        snode_id: int | None = None,
    ) -> SuperNode:
        members = set(member_ids)
        if founder_id not in members:
            raise StructureError("founder must be a member of its super-node")
        if len(members) < 2:
            raise StructureError("super-node needs at least two members")
        for mid in members:
            node = self.nodes.get(mid)
            if node is None:
                raise UnknownNodeError(f"unknown node {mid}")
            if node.kind is not kind.member_kind:
                raise StructureError(f"node {mid} is a {node.kind.value}, not a {kind.member_kind.value}")
            if (mid, kind) in self._membership:
                raise StructureError(f"node {mid} already belongs to a {kind.value}")
        if snode_id is None:
            snode_id = self.allocator.take()
        else:
            # explicit ids only replay an archived graph; they must still be fresh
            if snode_id == PAD:
                raise DuplicateIdError("the padding sentinel is not assignable")
            if snode_id in self.nodes or snode_id in self.lines or snode_id in self.super_nodes:
                raise DuplicateIdError(f"id {snode_id} already in use")
            self.allocator.reserve_through(snode_id)
        sn = SuperNode(id=snode_id, kind=kind, founder_id=founder_id, member_ids=members)
        self.super_nodes[sn.id] = sn
        for mid in members:
            self._membership[(mid, kind)] = sn.id
        return sn

    # -- accessors ---------------------------------------------------------

    def node(self, node_id: int) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node_id}") from None

    def parent(self, node_id: int) -> int | None:
        self.node(node_id)
        return self._parent.get(node_id)

    def parent_line(self, node_id: int) -> NavLine | None:
        lid = self._parent_line.get(node_id)
        return None if lid is None else self.lines[lid]

    def children(self, node_id: int) -> tuple[int, ...]:
        self.node(node_id)
        return tuple(self._children.get(node_id, ()))

    def nodes_of_kind(self, kind: NodeKind) -> Iterator[Node]:
        for node in self.nodes.values():
            if node.kind is kind:
                yield node

    def topics(self) -> Iterator[Node]:
        return self.nodes_of_kind(NodeKind.TOPIC)

    def facts(self) -> Iterator[Node]:
        return self.nodes_of_kind(NodeKind.FACT)

    def super_node_of(self, node_id: int, kind: SuperKind) -> SuperNode | None:
        sid = self._membership.get((node_id, kind))
        return None if sid is None else self.super_nodes[sid]

    def map_of(self, node_id: int) -> MindMap:
        return self.maps[self.node(node_id).map_id]

    # -- path and candidate operations --------------------------------------

    def path_nodes(self, node_id: int) -> list[Node]:
        """Nodes from the owning topic down to ``node_id``, inclusive."""
        chain = [self.node(node_id)]
        cur = node_id
        while (up := self._parent.get(cur)) is not None:
            chain.append(self.nodes[up])
            cur = up
        chain.reverse()
        if chain[0].kind is not NodeKind.TOPIC:
            raise StructureError(f"path of node {node_id} does not start at a topic")
        return chain

    def fact_path(self, fact_id: int) -> list[Node]:
        """Full path topic -> routes -> fact for one fact leaf.

        Raises:
            UnknownNodeError: no such node.
            NotAFactError: the node exists but is not a fact.
        """
        node = self.node(fact_id)
        if node.kind is not NodeKind.FACT:
            raise NotAFactError(f"node {fact_id} is a {node.kind.value}")
        path = self.path_nodes(fact_id)
        if len(path) < 2:
            raise StructureError("fact path shorter than two nodes")
        return path

    def facts_under(self, topic_id: int) -> Iterator[int]:
        """Fact ids below a topic, in depth-first line-insertion order."""
        node = self.node(topic_id)
        if node.kind is not NodeKind.TOPIC:
            raise UnknownNodeError(f"node {topic_id} is not a topic")
        stack = list(reversed(self._children.get(topic_id, [])))
        while stack:
            cur = stack.pop()
            if self.nodes[cur].kind is NodeKind.FACT:
                yield cur
            else:
                stack.extend(reversed(self._children.get(cur, [])))

    def walk_candidates(self, seed_topics: Iterable[int]) -> set[int]:
        """Expand seed topics by exactly one super-node hop.

        The result contains the seeds, every topic sharing a super_topic with
        a seed, and every topic owning a fact that shares a super_fact with a
        fact under a seed. Monotone in the seed set and symmetric: if B is
        reachable from {A}, then A is reachable from {B}.
        """
        seeds = set(seed_topics)
        for sid in seeds:
            node = self.node(sid)
            if node.kind is not NodeKind.TOPIC:
                raise StructureError(f"seed {sid} is not a topic")
        result = set(seeds)
        for sn in self.super_nodes.values():
            if sn.kind is SuperKind.SUPER_TOPIC and sn.member_ids & seeds:
                result |= sn.member_ids
        for sid in seeds:
            for fact_id in self.facts_under(sid):
                sn = self.super_node_of(fact_id, SuperKind.SUPER_FACT)
                if sn is None:
                    continue
                for member in sn.member_ids:
                    result.add(self.map_of(member).topic_id)
        return result

    # -- whole-graph validation ---------------------------------------------

    def validate(self) -> None:
        """Re-check every structural invariant; used after loading an archive."""
        for mm in self.maps.values():
            payload = MindMapPayload(
                mind_map=mm,
                nodes=[self.nodes[nid] for nid in sorted(mm.node_ids)],
                lines=[self.lines[lid] for lid in sorted(mm.line_ids)],
            )
            _validate_standalone(payload)
        owned = set()
        for mm in self.maps.values():
            if mm.node_ids & owned:
                raise StructureError("node owned by two mind maps")
            owned |= mm.node_ids
        if owned != set(self.nodes):
            raise StructureError("nodes exist outside any mind map")
        for sn in self.super_nodes.values():
            if sn.founder_id not in sn.member_ids:
                raise StructureError("super-node founder is not a member")
            if len(sn.member_ids) < 2:
                raise StructureError("super-node with fewer than two members")
            for mid in sn.member_ids:
                node = self.nodes.get(mid)
                if node is None:
                    raise UnknownNodeError(f"super-node member {mid} missing")
                if node.kind is not sn.kind.member_kind:
                    raise StructureError("super-node member kind mismatch")
        counts: dict[tuple[int, SuperKind], int] = {}
        for sn in self.super_nodes.values():
            for mid in sn.member_ids:
                key = (mid, sn.kind)
                counts[key] = counts.get(key, 0) + 1
                if counts[key] > 1:
                    raise StructureError(f"node {mid} in two {sn.kind.value}s")


def _validate_standalone(payload: MindMapPayload) -> None:
    # reuse the insertion checks against an empty graph
    probe = PseudoGraph()
    probe._check_payload(payload)
