"""Metric graphs: vertices, bounded edges and half-lines.

A bounded edge ``e`` is identified with ``[0, length]`` where coordinate 0 sits
at ``tail`` and ``length`` at ``head``.  A half-line is identified with
``[0, inf)`` and is attached to its tail vertex only.  Loops and multi-edges
are allowed.

Text format, one statement per line::

    # comment
    vertex v0 0.0 1.0          # optional, with an optional position hint
    v0 -- v1 : 3.14159         # bounded edge, id generated as e<k>
    e7 : v1 -- v2 : 1.0        # bounded edge with an explicit id
    h0 : v0 --> inf            # half-line with an explicit id
    v0 --> inf                 # half-line, id generated as h<k>
    core subgraph e0 e7        # nonlinearity restricted to these edges

Graphs are immutable once built.
"""
from __future__ import annotations

import hashlib
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import ParseError, UnknownVertex, ValidationError

START = "start"
END = "end"

WHOLE_GRAPH = "whole"
COMPACT_CORE = "core"
SUBGRAPH = "subgraph"

_TOKEN = r"[A-Za-z_][A-Za-z0-9_.\-]*"
_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_RE_VERTEX = re.compile(rf"^vertex\s+({_TOKEN})(?:\s+({_NUMBER})\s+({_NUMBER}))?$")
_RE_EDGE = re.compile(rf"^(?:({_TOKEN})\s*:\s*)?({_TOKEN})\s+--\s+({_TOKEN})\s*:\s*({_NUMBER})$")
_RE_HALF = re.compile(rf"^(?:({_TOKEN})\s*:\s*)?({_TOKEN})\s+-->\s+inf$")
_RE_CORE = re.compile(rf"^core\s+subgraph((?:\s+{_TOKEN})+)$")


@dataclass(frozen=True)
class Vertex:
    id: str
    position: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: Optional[str]
    length: float  # math.inf for half-lines

    @property
    def is_half_line(self) -> bool:
        return self.head is None

    @property
    def is_loop(self) -> bool:
        return self.head == self.tail


@dataclass(frozen=True)
class Region:
    """Where the nonlinearity acts: whole graph, compact core or a subgraph."""

    kind: str = WHOLE_GRAPH
    edges: frozenset = frozenset()


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    region: Region = field(default_factory=Region)

    def __post_init__(self):
        _validate(self)

    # -- lookups -------------------------------------------------------
    def vertex_ids(self) -> list[str]:
        return [v.id for v in self.vertices]

    def edge(self, eid: str) -> Edge:
        for e in self.edges:
            if e.id == eid:
                return e
        raise KeyError(eid)

    @property
    def bounded_edges(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if not e.is_half_line)

    @property
    def half_lines(self) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.is_half_line)

    @property
    def compact_core(self) -> frozenset:
        return frozenset(e.id for e in self.bounded_edges)

    def region_edges(self) -> frozenset:
        """Edge ids on which the nonlinear term is integrated."""
        if self.region.kind == WHOLE_GRAPH:
            return frozenset(e.id for e in self.edges)
        if self.region.kind == COMPACT_CORE:
            return self.compact_core
        return frozenset(self.region.edges)

    def with_region(self, region: Region) -> "MetricGraph":
        return MetricGraph(self.vertices, self.edges, region)

    def total_length(self) -> float:
        return float(sum(e.length for e in self.bounded_edges))

    def digest(self) -> str:
        return hashlib.sha256(serialize_graph(self).encode()).hexdigest()[:16]


def _validate(g: MetricGraph) -> None:
    ids = [v.id for v in g.vertices]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate vertex id")
    eids = [e.id for e in g.edges]
    if len(set(eids)) != len(eids):
        raise ValidationError("duplicate edge id")
    if set(ids) & set(eids):
        raise ValidationError("vertex and edge ids must not overlap")
    if not g.edges:
        raise ValidationError("graph has no edges")
    known = set(ids)
    touched = set()
    for e in g.edges:
        for end in (e.tail, e.head):
            if end is None:
                continue
            if end not in known:
                raise UnknownVertex(f"edge {e.id} references unknown vertex {end!r}")
            touched.add(end)
        if e.is_half_line:
            if e.length != float("inf"):
                raise ValidationError(f"half-line {e.id} must have infinite length")
        elif not (e.length > 0 and e.length < float("inf")):
            raise ValidationError(f"edge {e.id} has non-positive length {e.length}")
    if touched != known:
        raise ValidationError(f"isolated vertices: {sorted(known - touched)}")
    # connectivity by traversal over vertex-edge incidences
    adj = defaultdict(set)
    for e in g.edges:
        if e.head is not None:
            adj[e.tail].add(e.head)
            adj[e.head].add(e.tail)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if seen != known:
        raise ValidationError("graph is disconnected")
    if g.region.kind == SUBGRAPH:
        missing = set(g.region.edges) - set(eids)
        if missing or not g.region.edges:
            raise ValidationError(f"core subgraph references unknown edges {sorted(missing)}")
        if any(g.edge(eid).is_half_line for eid in g.region.edges):
            raise ValidationError("core subgraph must consist of bounded edges")
    elif g.region.kind == COMPACT_CORE and not g.compact_core:
        raise ValidationError("compact core is empty")
    elif g.region.kind not in (WHOLE_GRAPH, COMPACT_CORE, SUBGRAPH):
        raise ValidationError(f"unknown region kind {g.region.kind!r}")


def default_region(edges: Iterable[Edge]) -> Region:
    """Whole graph when compact (or core empty), compact core otherwise."""
    edges = list(edges)
    has_half = any(e.is_half_line for e in edges)
    has_bounded = any(not e.is_half_line for e in edges)
    if has_half and has_bounded:
        return Region(COMPACT_CORE)
    return Region(WHOLE_GRAPH)


def is_compact(g: MetricGraph) -> bool:
    return not g.half_lines


def incident_edges(g: MetricGraph, v: str) -> list[tuple[str, str]]:
    """All (edge id, endpoint) pairs touching ``v``; loops appear twice."""
    if v not in g.vertex_ids():
        raise UnknownVertex(v)
    out = []
    for e in g.edges:
        if e.tail == v:
            out.append((e.id, START))
        if e.head == v:
            out.append((e.id, END))
    return out


def degree(g: MetricGraph, v: str) -> int:
    return len(incident_edges(g, v))


def parse_graph(text: str) -> MetricGraph:
    vertices: dict[str, Vertex] = {}
    edges: list[Edge] = []
    core = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RE_VERTEX.match(line)
        if m:
            vid, x, y = m.groups()
            if vid in vertices and vertices[vid].position is not None:
                raise ValidationError(f"line {lineno}: vertex {vid} declared twice")
            pos = (float(x), float(y)) if x is not None else None
            vertices[vid] = Vertex(vid, pos)
            continue
        m = _RE_EDGE.match(line)
        if m:
            eid, a, b, length = m.groups()
            eid = eid or f"e{len(edges)}"
            for vid in (a, b):
                vertices.setdefault(vid, Vertex(vid))
            edges.append(Edge(eid, a, b, float(length)))
            continue
        m = _RE_HALF.match(line)
        if m:
            eid, a = m.groups()
            eid = eid or f"h{len(edges)}"
            vertices.setdefault(a, Vertex(a))
            edges.append(Edge(eid, a, None, float("inf")))
            continue
        m = _RE_CORE.match(line)
        if m:
            if core is not None:
                raise ParseError(f"line {lineno}: duplicate core statement")
            core = frozenset(m.group(1).split())
            continue
        raise ParseError(f"line {lineno}: cannot parse {raw.strip()!r}")
    if not edges:
        raise ParseError("no edges declared")
    region = Region(SUBGRAPH, core) if core is not None else default_region(edges)
    return MetricGraph(tuple(vertices.values()), tuple(edges), region)


def serialize_graph(g: MetricGraph) -> str:
    lines = []
    for v in g.vertices:
        if v.position is None:
            lines.append(f"vertex {v.id}")
        else:
            lines.append(f"vertex {v.id} {v.position[0]!r} {v.position[1]!r}")
    for e in g.edges:
        if e.is_half_line:
            lines.append(f"{e.id} : {e.tail} --> inf")
        else:
            lines.append(f"{e.id} : {e.tail} -- {e.head} : {e.length!r}")
    if g.region.kind == SUBGRAPH:
        lines.append("core subgraph " + " ".join(sorted(g.region.edges)))
    return "\n".join(lines) + "\n"


def read_graph(path) -> MetricGraph:
    with open(path) as fh:
        return parse_graph(fh.read())


# -- small constructors used by tests and examples --------------------------

def interval(length: float) -> MetricGraph:
    return parse_graph(f"e0 : v0 -- v1 : {length!r}")


def loop(length: float) -> MetricGraph:
    return parse_graph(f"e0 : v0 -- v0 : {length!r}")


def tadpole(loop_length: float, tail_length: float) -> MetricGraph:
    return parse_graph(f"loop : v0 -- v0 : {loop_length!r}\ntail : v0 -- v1 : {tail_length!r}")


def star(bounded: Iterable[float] = (), half_lines: int = 0) -> MetricGraph:
    lines = [f"e{k} : c -- v{k} : {ell!r}" for k, ell in enumerate(bounded)]
    lines += [f"h{k} : c --> inf" for k in range(half_lines)]
    return parse_graph("\n".join(lines))
