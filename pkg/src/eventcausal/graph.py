"""Local independence graphs over baseline variables and counting processes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping

__all__ = [
    "NodeKind",
    "ROLE_TAGS",
    "Node",
    "Violation",
    "GraphValidationError",
    "UnknownNodeError",
    "LocalIndependenceGraph",
    "build_graph",
    "parents",
    "children",
    "ancestors",
    "descendants",
    "induced_subgraph",
    "graph_from_dict",
    "graph_to_dict",
    "load_graph",
    "dump_graph",
    "to_text",
    "from_text",
]


class NodeKind(str, Enum):
    BASELINE = "baseline"
    PROCESS = "process"


# ``covariate`` is kept as an alias of ``baseline_keep``.
ROLE_TAGS = frozenset(
    {"treatment", "outcome", "censoring", "latent", "covariate", "baseline_keep", "marginalize"}
)


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    roles: frozenset = frozenset()

    @property
    def is_process(self) -> bool:
        return self.kind is NodeKind.PROCESS


@dataclass(frozen=True)
class Violation:
    rule: str
    detail: str

    def to_dict(self) -> dict:
        return {"rule": self.rule, "detail": self.detail}


class GraphValidationError(ValueError):
    """Raised with the complete list of structural violations of a graph."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        msg = "; ".join(f"{v.rule}: {v.detail}" for v in self.violations)
        super().__init__(msg)

    @property
    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class LocalIndependenceGraph:
    """Immutable, validated local independence graph.

    Use :func:`build_graph` to construct one; the constructor assumes its
    input has already been validated.
    """

    nodes: tuple  # tuple[Node, ...], sorted by id
    edges: frozenset  # frozenset[tuple[str, str]]
    _index: dict = field(repr=False, compare=False, hash=False, default_factory=dict)

    def __post_init__(self):
        self._index.update({n.id: n for n in self.nodes})

    def __contains__(self, v) -> bool:
        return v in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, v: str) -> Node:
        try:
            return self._index[v]
        except KeyError:
            raise UnknownNodeError(v) from None

    @property
    def node_ids(self) -> tuple:
        return tuple(n.id for n in self.nodes)

    def kind(self, v: str) -> NodeKind:
        return self.node(v).kind

    def is_process(self, v: str) -> bool:
        return self.node(v).is_process

    def roles(self, v: str) -> frozenset:
        return self.node(v).roles

    def with_role(self, role: str) -> list[str]:
        return [n.id for n in self.nodes if role in n.roles]

    @cached_property
    def _parents(self) -> dict:
        out: dict = {n.id: set() for n in self.nodes}
        for u, v in self.edges:
            out[v].add(u)
        return {k: frozenset(s) for k, s in out.items()}

    @cached_property
    def _children(self) -> dict:
        out: dict = {n.id: set() for n in self.nodes}
        for u, v in self.edges:
            out[u].add(v)
        return {k: frozenset(s) for k, s in out.items()}

    @cached_property
    def _incident(self) -> dict:
        # node -> sorted list of (neighbour, edge) with edge a (from, to) tuple;
        # for each neighbour the outgoing edge sorts before the incoming one.
        out: dict = {n.id: [] for n in self.nodes}
        for u, v in self.edges:
            out[u].append((v, 0, (u, v)))
            out[v].append((u, 1, (u, v)))
        return {k: tuple((w, e) for w, _, e in sorted(lst)) for k, lst in out.items()}

    @cached_property
    def _descendants(self) -> dict:
        return {n.id: _reach(n.id, self._children) for n in self.nodes}

    def parents(self, v: str) -> frozenset:
        self.node(v)
        return self._parents[v]

    def children(self, v: str) -> frozenset:
        self.node(v)
        return self._children[v]

    def descendants(self, v: str) -> frozenset:
        self.node(v)
        return self._descendants[v]

    def ancestors(self, v: str) -> frozenset:
        self.node(v)
        return _reach(v, self._parents)

    def incident(self, v: str) -> tuple:
        return self._incident[v]

    def ancestral_closure(self, nodes: Iterable[str]) -> frozenset:
        """The given nodes together with all their ancestors."""
        seen = set()
        stack = list(nodes)
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(self._parents[v])
        return frozenset(seen)


def _reach(v: str, nbrs: Mapping) -> frozenset:
    # Nodes reachable from v by >= 1 step; v itself only through a cycle.
    seen: set = set()
    stack = list(nbrs[v])
    while stack:
        w = stack.pop()
        if w in seen:
            continue
        seen.add(w)
        stack.extend(nbrs[w])
    return frozenset(seen)


def _coerce_node(spec) -> tuple:
    if isinstance(spec, Node):
        return spec.id, spec.kind, spec.roles
    if isinstance(spec, Mapping):
        return spec.get("id"), spec.get("kind"), spec.get("roles", ())
    node_id, kind, *rest = spec
    return node_id, kind, rest[0] if rest else ()


def build_graph(nodes: Iterable, edges: Iterable) -> LocalIndependenceGraph:
    """Validate nodes and edges and return a :class:`LocalIndependenceGraph`.

    Nodes may be :class:`Node` objects, mappings with ``id``/``kind``/``roles``
    keys, or ``(id, kind[, roles])`` tuples.  Edges are ``(from, to)`` pairs or
    mappings with ``from``/``to`` keys.  Every violated structural rule is
    collected and raised together in a :class:`GraphValidationError`.
    """
    violations: list[Violation] = []
    index: dict = {}
    for spec in nodes:
        try:
            node_id, kind, roles = _coerce_node(spec)
        except (TypeError, ValueError):
            violations.append(Violation("MalformedNode", repr(spec)))
            continue
        if not isinstance(node_id, str) or not node_id or any(c.isspace() for c in node_id):
            violations.append(Violation("InvalidNodeId", repr(node_id)))
            continue
        try:
            kind = NodeKind(kind)
        except ValueError:
            violations.append(Violation("InvalidKind", f"{node_id}: {kind!r}"))
            continue
        if isinstance(roles, str):
            roles = (roles,)
        roles = frozenset(roles or ())
        bad = sorted(r for r in roles if r not in ROLE_TAGS)
        if bad:
            violations.append(Violation("InvalidRole", f"{node_id}: {bad}"))
            roles = roles - set(bad)
        if node_id in index:
            violations.append(Violation("DuplicateNode", node_id))
            continue
        index[node_id] = Node(node_id, kind, roles)

    edge_set: set = set()
    for spec in edges:
        if isinstance(spec, Mapping):
            u, v = spec.get("from"), spec.get("to")
        else:
            try:
                u, v = spec
            except (TypeError, ValueError):
                violations.append(Violation("MalformedEdge", repr(spec)))
                continue
        missing = [w for w in (u, v) if w not in index]
        if missing:
            violations.append(Violation("UnknownEndpoint", f"{u}->{v}: {missing}"))
            continue
        if u == v:
            violations.append(Violation("SelfLoop", f"{u}->{v}"))
            continue
        if (u, v) in edge_set:
            violations.append(Violation("DuplicateEdge", f"{u}->{v}"))
            continue
        if index[u].is_process and not index[v].is_process:
            violations.append(Violation("ProcessToBaselineEdge", f"{u}->{v}"))
        edge_set.add((u, v))

    baseline = {k for k, n in index.items() if not n.is_process}
    cycle = _find_cycle(baseline, {e for e in edge_set if e[0] in baseline and e[1] in baseline})
    if cycle:
        violations.append(Violation("BaselineCycle", "->".join(cycle)))

    for role, rule in (("censoring", "MultipleCensoringNodes"), ("treatment", "MultipleTreatmentNodes")):
        tagged = sorted(k for k, n in index.items() if role in n.roles)
        if len(tagged) > 1:
            violations.append(Violation(rule, ", ".join(tagged)))
    for k, n in sorted(index.items()):
        if "censoring" in n.roles and not n.is_process:
            violations.append(Violation("CensoringNotProcess", k))

    if violations:
        raise GraphValidationError(violations)
    return LocalIndependenceGraph(tuple(index[k] for k in sorted(index)), frozenset(edge_set))


def _find_cycle(nodes: set, edges: set) -> list | None:
    adj: dict = {v: [] for v in nodes}
    for u, v in edges:
        adj[u].append(v)
    for lst in adj.values():
        lst.sort()
    state = dict.fromkeys(nodes, 0)
    stack: list = []

    def visit(v):
        state[v] = 1
        stack.append(v)
        for w in adj[v]:
            if state[w] == 1:
                return stack[stack.index(w):] + [w]
            if state[w] == 0:
                found = visit(w)
                if found:
                    return found
        stack.pop()
        state[v] = 2
        return None

    for v in sorted(nodes):
        if state[v] == 0:
            found = visit(v)
            if found:
                return found
    return None


def parents(graph: LocalIndependenceGraph, v: str) -> frozenset:
    return graph.parents(v)


def children(graph: LocalIndependenceGraph, v: str) -> frozenset:
    return graph.children(v)


def ancestors(graph: LocalIndependenceGraph, v: str) -> frozenset:
    return graph.ancestors(v)


def descendants(graph: LocalIndependenceGraph, v: str) -> frozenset:
    return graph.descendants(v)


def induced_subgraph(graph: LocalIndependenceGraph, nodes: Iterable[str]) -> LocalIndependenceGraph:
    keep = set(nodes)
    for v in keep:
        graph.node(v)
    return build_graph(
        [n for n in graph.nodes if n.id in keep],
        [e for e in graph.edges if e[0] in keep and e[1] in keep],
    )


# -- serialization ---------------------------------------------------------

_NODE_KEYS = {"id", "kind", "roles"}
_EDGE_KEYS = {"from", "to"}


class GraphFormatError(ValueError):
    pass


def graph_to_dict(graph: LocalIndependenceGraph) -> dict:
    return {
        "nodes": [
            {"id": n.id, "kind": n.kind.value, "roles": sorted(n.roles)} for n in graph.nodes
        ],
        "edges": [{"from": u, "to": v} for u, v in sorted(graph.edges)],
    }


def graph_from_dict(data: Mapping) -> LocalIndependenceGraph:
    """Build a graph from its JSON object form; unknown keys are rejected."""
    if not isinstance(data, Mapping):
        raise GraphFormatError("graph must be a JSON object")
    extra = set(data) - {"nodes", "edges"}
    if extra:
        raise GraphFormatError(f"unknown keys in graph: {sorted(extra)}")
    nodes = data.get("nodes", [])
    edges = data.get("edges", [])
    if not isinstance(nodes, list) or not isinstance(edges, list):
        raise GraphFormatError("'nodes' and 'edges' must be lists")
    for n in nodes:
        if not isinstance(n, Mapping) or set(n) - _NODE_KEYS or not {"id", "kind"} <= set(n):
            raise GraphFormatError(f"bad node entry: {n!r}")
        if "roles" in n and not isinstance(n["roles"], list):
            raise GraphFormatError(f"roles must be a list: {n!r}")
    for e in edges:
        if not isinstance(e, Mapping) or set(e) != _EDGE_KEYS:
            raise GraphFormatError(f"bad edge entry: {e!r}")
    return build_graph(nodes, edges)


def load_graph(path) -> LocalIndependenceGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_dict(json.load(fh))


def dump_graph(graph: LocalIndependenceGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def to_text(graph: LocalIndependenceGraph) -> str:
    """Deterministic line-oriented form, sorted for diff-friendly output."""
    lines = []
    for n in graph.nodes:
        roles = ",".join(sorted(n.roles)) or "-"
        lines.append(f"node {n.id} {n.kind.value} {roles}")
    lines.extend(f"edge {u} {v}" for u, v in sorted(graph.edges))
    return "\n".join(lines) + "\n"


def from_text(text: str) -> LocalIndependenceGraph:
    nodes, edges = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "node" and len(parts) == 4:
            roles = [] if parts[3] == "-" else parts[3].split(",")
            nodes.append({"id": parts[1], "kind": parts[2], "roles": roles})
        elif parts[0] == "edge" and len(parts) == 3:
            edges.append((parts[1], parts[2]))
        else:
            raise GraphFormatError(f"line {lineno}: cannot parse {raw!r}")
    return build_graph(nodes, edges)
