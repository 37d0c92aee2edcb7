"""Finite metric graphs: edges with lengths glued at vertices, geodesic distance.

Every edge carries a coordinate running from 0 at its tail vertex to the edge
length at its head.  A missing head marks either an open boundary (finite
length, endpoint excluded) or a ray (infinite length).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .errors import (
    DanglingVertexReference,
    InvalidPoint,
    NonPositiveLength,
    UnknownVertex,
)

VertexId = int
EdgeId = int


@dataclass(frozen=True)
class Edge:
    """One edge, parameterized by coordinates in [0, length].

    ``head is None`` means the far endpoint is not a vertex: an open boundary
    when the length is finite, an unbounded ray when it is infinite.
    """

    id: EdgeId
    length: float
    tail: VertexId
    head: VertexId | None

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.length)

    @property
    def has_open_end(self) -> bool:
        """True when the far endpoint is not a graph vertex."""
        return self.head is None

    @property
    def is_open_boundary(self) -> bool:
        """Finite edge whose far endpoint is excluded (natural boundary)."""
        return self.head is None and not math.isinf(self.length)


@dataclass(frozen=True)
class GraphPoint:
    """A point of the graph given as (edge, coordinate along the edge)."""

    edge: EdgeId
    coord: float


class MetricGraph:
    """Immutable finite metric graph with precomputed vertex distances."""

    def __init__(self, edges: list[Edge], n_vertices: int):
        self.edges = tuple(edges)
        self.n_vertices = n_vertices
        self._in: list[list[EdgeId]] = [[] for _ in range(n_vertices)]
        self._out: list[list[EdgeId]] = [[] for _ in range(n_vertices)]
        for e in self.edges:
            self._out[e.tail].append(e.id)
            if e.head is not None:
                self._in[e.head].append(e.id)
        self._vertex_dist = self._all_pairs_distance()

    # -- construction helpers ------------------------------------------------

    def _all_pairs_distance(self) -> np.ndarray:
        n = self.n_vertices
        w = np.full((n, n), np.inf)
        np.fill_diagonal(w, 0.0)
        for e in self.edges:
            if e.head is not None:
                w[e.tail, e.head] = min(w[e.tail, e.head], e.length)
                w[e.head, e.tail] = min(w[e.head, e.tail], e.length)
        if n == 1:
            return w
        return shortest_path(w, method="FW", directed=False)

    # -- lookups ---------------------------------------------------------------

    def edge(self, e: EdgeId) -> Edge:
        if not 0 <= e < len(self.edges):
            raise InvalidPoint(f"unknown edge id {e}")
        return self.edges[e]

    def incident_edges(self, v: VertexId) -> tuple[list[EdgeId], list[EdgeId]]:
        """All edges at v, split into (pointing in, pointing out)."""
        if not 0 <= v < self.n_vertices:
            raise UnknownVertex(v)
        return list(self._in[v]), list(self._out[v])

    def degree(self, v: VertexId) -> int:
        e_in, e_out = self.incident_edges(v)
        return len(e_in) + len(e_out)

    def validate_point(self, p: GraphPoint) -> None:
        e = self.edge(p.edge)
        if not np.isfinite(p.coord):
            raise InvalidPoint(f"non-finite coordinate {p.coord} on edge {p.edge}")
        if p.coord < 0 or p.coord > e.length:
            raise InvalidPoint(
                f"coordinate {p.coord} outside [0, {e.length}] on edge {p.edge}"
            )
        if e.has_open_end and p.coord == e.length:
            raise InvalidPoint(
                f"coordinate {p.coord} hits the open endpoint of edge {p.edge}"
            )

    def vertex_at(self, p: GraphPoint) -> VertexId | None:
        """The vertex p identifies with, or None for a true interior point."""
        e = self.edge(p.edge)
        if p.coord == 0.0:
            return e.tail
        if e.head is not None and p.coord == e.length:
            return e.head
        return None

    def vertex_point(self, v: VertexId) -> GraphPoint:
        """A canonical GraphPoint representation of vertex v."""
        e_in, e_out = self.incident_edges(v)
        if e_out:
            return GraphPoint(e_out[0], 0.0)
        return GraphPoint(e_in[0], self.edge(e_in[0]).length)

    def points_equal(self, p: GraphPoint, q: GraphPoint) -> bool:
        vp, vq = self.vertex_at(p), self.vertex_at(q)
        if vp is not None or vq is not None:
            return vp == vq
        return p.edge == q.edge and p.coord == q.coord

    # -- geodesic distance -----------------------------------------------------

    def _endpoint_offsets(self, p: GraphPoint) -> list[tuple[VertexId, float]]:
        e = self.edge(p.edge)
        ends = [(e.tail, p.coord)]
        if e.head is not None:
            ends.append((e.head, e.length - p.coord))
        return ends

    def geodesic_distance(self, p: GraphPoint, q: GraphPoint) -> float:
        """Length of a shortest path between p and q."""
        self.validate_point(p)
        self.validate_point(q)
        best = math.inf
        if p.edge == q.edge:
            best = abs(p.coord - q.coord)
        for vp, dp in self._endpoint_offsets(p):
            for vq, dq in self._endpoint_offsets(q):
                best = min(best, dp + self._vertex_dist[vp, vq] + dq)
        return best


def build_graph(
    edges: list[tuple[float, VertexId, VertexId | None]],
) -> MetricGraph:
    """Assemble a validated MetricGraph from (length, tail, head) triples.

    Vertex ids must form a dense range 0..n-1 and every id must be touched by
    at least one edge.  Loop edges (tail == head) are rejected: lateral data
    is keyed by edge id and a loop would need two entries per vertex.
    """
    if not edges:
        raise DanglingVertexReference("graph needs at least one edge")
    built: list[Edge] = []
    referenced: set[int] = set()
    for i, (length, tail, head) in enumerate(edges):
        if not length > 0:
            raise NonPositiveLength(f"edge {i} has length {length}")
        if math.isinf(length) and head is not None:
            raise NonPositiveLength(f"edge {i} is infinite but declares a head")
        if tail < 0 or (head is not None and head < 0):
            raise DanglingVertexReference(f"edge {i} references a negative vertex id")
        if head is not None and head == tail:
            raise DanglingVertexReference(f"edge {i} is a loop (tail == head)")
        built.append(Edge(id=i, length=float(length), tail=tail, head=head))
        referenced.add(tail)
        if head is not None:
            referenced.add(head)
    n_vertices = max(referenced) + 1
    missing = set(range(n_vertices)) - referenced
    if missing:
        raise DanglingVertexReference(f"vertex ids never referenced: {sorted(missing)}")
    return MetricGraph(built, n_vertices)
