"""Grid subdivisions of a metric graph.

A subdivision is a set of grid nodes per edge plus the cells they center:
interior nodes center open intervals bounded by their neighbors, graph
vertices center star-shaped neighborhoods whose radii reach the first grid
node on every incident edge.  Thinness weights cell size by the diffusion's
scale and speed; the adapted builder bisects until every cell's thinness is
at most h^2.

Edges without a far vertex (rays and open boundaries) are generated up to a
frontier.  The last node on such an edge is a frontier node: it exists as a
cell boundary but centers no cell until ``lazy_extend`` pushes the frontier.
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionSpec, reoriented, speed_mass
from .errors import (
    FrontierExhausted,
    InvalidPoint,
    NoVertexCells,
    NotExtendable,
    OutsideGeneratedRegion,
    RefinementCapExceeded,
    StepTooLarge,
)
from .graph import EdgeId, GraphPoint, VertexId

REFINEMENT_CAP = 30
DEFAULT_FRONTIER = 10.0
THINNESS_SLACK = 1.0 + 1e-9


def default_vertex_radius(h: float) -> float:
    return h * h


@dataclass(frozen=True)
class GridNode:
    id: int
    edge: EdgeId | None
    coord: float
    vertex: VertexId | None = None

    @property
    def is_vertex(self) -> bool:
        return self.vertex is not None


@dataclass(frozen=True)
class InteriorCell:
    id: int
    edge: EdgeId
    a: float
    b: float
    center: float
    center_node: int
    left_node: int
    right_node: int

    @property
    def kind(self) -> str:
        return "interior"

    @property
    def width(self) -> float:
        return self.b - self.a

    def boundary_nodes(self) -> list[int]:
        return [self.left_node, self.right_node]


@dataclass(frozen=True)
class VertexCell:
    id: int
    vertex: VertexId
    radii: dict[EdgeId, float]
    center_node: int
    exits: dict[EdgeId, int]

    @property
    def kind(self) -> str:
        return "vertex"

    @property
    def width(self) -> float:
        return max(self.radii.values())

    def boundary_nodes(self) -> list[int]:
        return [self.exits[e] for e in sorted(self.exits)]


Cell = InteriorCell | VertexCell


# ---------------------------------------------------------------------------
# thinness
# ---------------------------------------------------------------------------

def cell_thinness(spec: DiffusionSpec, cell: Cell,
                  n_panels: int | None = None) -> float:
    """Scale-and-speed weighted size of one cell, in time units."""
    kw = {} if n_panels is None else {"n_panels": n_panels}
    if isinstance(cell, InteriorCell):
        s = spec.scales[cell.edge]
        return speed_mass(spec, cell.edge, cell.a, cell.b, **kw) * abs(s(cell.b) - s(cell.a))
    cond = spec.vertex_conditions[cell.vertex]
    sticky = 0.0
    diffusive = 0.0
    for e, u in cell.radii.items():
        s_hat, m_hat = reoriented(spec, cell.vertex, e)
        inc = s_hat(u) - s_hat(0.0)
        sticky += inc / cond.betas[e]
        diffusive += m_hat.mass(0.0, u, **kw) * inc
    return cond.rho * sticky + diffusive


# ---------------------------------------------------------------------------
# per-edge build state
# ---------------------------------------------------------------------------

@dataclass
class _EdgeState:
    """Sorted grid coordinates on one edge, including both endpoints.

    coords[0] is always 0 (the tail vertex).  For closed edges the last
    coordinate is the edge length (head vertex); for open-ended edges it is
    the current frontier.  depths[i] is the bisection depth of the panel
    (coords[i], coords[i+1]).
    """

    coords: list[float]
    depths: list[int]
    open_end: bool

    def insert_midpoints(self, lefts: set[float]) -> None:
        new_coords: list[float] = []
        new_depths: list[int] = []
        for i in range(len(self.coords) - 1):
            a, b = self.coords[i], self.coords[i + 1]
            new_coords.append(a)
            if a in lefts:
                mid = 0.5 * (a + b)
                if not a < mid < b:
                    raise RefinementCapExceeded(
                        f"panel ({a}, {b}) cannot be bisected at float resolution"
                    )
                new_coords.append(mid)
                new_depths.extend([self.depths[i] + 1] * 2)
            else:
                new_depths.append(self.depths[i])
        new_coords.append(self.coords[-1])
        self.coords = new_coords
        self.depths = new_depths

    def append(self, coord: float, depth: int = 0) -> None:
        if coord <= self.coords[-1]:
            raise NotExtendable(f"coordinate {coord} not beyond frontier {self.coords[-1]}")
        self.coords.append(coord)
        self.depths.append(depth)


def _spacing_count(length: float, h: float) -> int:
    return max(2, int(math.ceil(length / h - 1e-12)))


def _initial_edge_state(edge, h: float, radius: float, frontier: float) -> _EdgeState:
    if edge.is_infinite:
        n = int(math.ceil(frontier / h - 1e-12))
        coords = [0.0, radius] + [k * h for k in range(1, n + 1)]
        if radius >= h:
            raise StepTooLarge(f"vertex radius {radius} >= spacing {h} on edge {edge.id}")
        return _EdgeState(coords=sorted(coords), depths=[0] * (len(coords) - 1),
                          open_end=True)
    if edge.is_open_boundary:
        gap = min(h, edge.length / 4.0)
        front = edge.length - gap
        n = _spacing_count(front, h)
        spacing = front / n
        coords = [0.0, radius] + [k * spacing for k in range(1, n + 1)]
        if radius >= spacing:
            raise StepTooLarge(f"vertex radius {radius} >= spacing {spacing} on edge {edge.id}")
        return _EdgeState(coords=sorted(coords), depths=[0] * (len(coords) - 1),
                          open_end=True)
    # closed edge: vertex radii at both ends
    n = _spacing_count(edge.length, h)
    spacing = edge.length / n
    coords = ([0.0, radius, edge.length - radius, edge.length]
              + [k * spacing for k in range(1, n)])
    if radius >= spacing:
        raise StepTooLarge(f"vertex radius {radius} >= spacing {spacing} on edge {edge.id}")
    coords = sorted(set(coords))
    return _EdgeState(coords=coords, depths=[0] * (len(coords) - 1), open_end=False)


# ---------------------------------------------------------------------------
# refinement loop (shared by the adapted builder and lazy extension)
# ---------------------------------------------------------------------------

def _vertex_radii(spec, states: dict[EdgeId, _EdgeState], v: VertexId) -> dict[EdgeId, float]:
    e_in, e_out = spec.graph.incident_edges(v)
    radii: dict[EdgeId, float] = {}
    for e in e_out:
        radii[e] = states[e].coords[1]
    for e in e_in:
        st = states[e].coords
        radii[e] = spec.graph.edge(e).length - st[-2]
    return radii


def _vertex_first_panels(spec, states, v: VertexId) -> list[tuple[EdgeId, float]]:
    """Panels forming the vertex cell at v, keyed by (edge, left coordinate)."""
    e_in, e_out = spec.graph.incident_edges(v)
    panels = [(e, states[e].coords[0]) for e in e_out]
    panels += [(e, states[e].coords[-2]) for e in e_in]
    return panels


def _thinness_interior(spec, e: EdgeId, a: float, b: float) -> float:
    s = spec.scales[e]
    return spec.speeds[e].mass(a, b) * abs(s(b) - s(a))


def _thinness_vertex(spec, states, v: VertexId) -> float:
    cond = spec.vertex_conditions[v]
    sticky = diffusive = 0.0
    for e, u in _vertex_radii(spec, states, v).items():
        s_hat, m_hat = reoriented(spec, v, e)
        inc = s_hat(u) - s_hat(0.0)
        sticky += inc / cond.betas[e]
        diffusive += m_hat.mass(0.0, u) * inc
    return cond.rho * sticky + diffusive


def _refine_to_target(spec, states: dict[EdgeId, _EdgeState], target: float,
                      min_left: dict[EdgeId, float] | None = None) -> None:
    """Bisect panels until every refinable cell's thinness is at most target.

    ``min_left`` restricts splitting to panels whose left coordinate is at or
    beyond the given per-edge threshold; lazy extension uses it to leave
    already-published cells untouched.  Cells with no splittable panel are
    skipped, not reported.
    """

    def splittable(e: EdgeId, left: float) -> bool:
        return min_left is None or (e in min_left and left >= min_left[e] - 1e-15)

    def collect_marks():
        marks: dict[EdgeId, set[float]] = {e: set() for e in states}
        worst: tuple[float, str] | None = None
        for v in range(spec.graph.n_vertices):
            panels = [(e, left) for e, left in _vertex_first_panels(spec, states, v)
                      if splittable(e, left)]
            if not panels:
                continue
            t = _thinness_vertex(spec, states, v)
            if t > target * THINNESS_SLACK:
                for e, left in panels:
                    marks[e].add(left)
                if worst is None or t > worst[0]:
                    worst = (t, f"vertex cell at {v}")
        for e, st in states.items():
            coords = st.coords
            # interior node coords[i] centers the cell (coords[i-1], coords[i+1]);
            # the last coordinate is a vertex or frontier node, never a center
            for i in range(1, len(coords) - 1):
                a, x, b = coords[i - 1], coords[i], coords[i + 1]
                lefts = [left for left in (a, x) if splittable(e, left)]
                if not lefts:
                    continue
                t = _thinness_interior(spec, e, a, b)
                if t > target * THINNESS_SLACK:
                    marks[e].update(lefts)
                    if worst is None or t > worst[0]:
                        worst = (t, f"interior cell ({a}, {b}) on edge {e}")
        return marks, worst

    for level in range(REFINEMENT_CAP + 1):
        marks, worst = collect_marks()
        if all(not m for m in marks.values()):
            return
        if level == REFINEMENT_CAP:
            raise RefinementCapExceeded(
                f"thinness target {target} unreachable within {REFINEMENT_CAP} "
                f"levels; offending: {worst[1] if worst else 'unknown'} "
                f"(thinness {worst[0] if worst else 'n/a'})"
            )
        for e, lefts in marks.items():
            if not lefts:
                continue
            st = states[e]
            depth_of = {st.coords[i]: st.depths[i] for i in range(len(st.coords) - 1)}
            deep = [left for left in lefts if depth_of[left] >= REFINEMENT_CAP]
            if deep:
                raise RefinementCapExceeded(
                    f"panel at ({e}, {deep[0]}) reached depth {REFINEMENT_CAP}; "
                    f"offending: {worst[1] if worst else 'unknown'}"
                )
            st.insert_midpoints(lefts)


# ---------------------------------------------------------------------------
# the subdivision object
# ---------------------------------------------------------------------------

class Subdivision:
    """Grid nodes and cells over a metric graph.

    Published cells and node ids never change.  Lazy extension appends nodes
    and cells under an internal lock, so concurrent readers only ever observe
    a fully consistent prefix.
    """

    def __init__(self, spec: DiffusionSpec, states: dict[EdgeId, _EdgeState],
                 h: float, mode: str, vertex_radius: float, frontier: float):
        self.spec = spec
        self.graph = spec.graph
        self.h = h
        self.mode = mode
        self.vertex_radius = vertex_radius
        self.frontier_init = frontier
        self._states = states
        self._lock = threading.RLock()

        self.nodes: list[GridNode] = []
        self.cells: list[Cell] = []
        self.cell_of_node: dict[int, int] = {}
        self._vertex_node: dict[VertexId, int] = {}
        self._edge_coords: dict[EdgeId, list[float]] = {}
        self._edge_node_ids: dict[EdgeId, list[int]] = {}
        self._thinness: list[float] = []
        self._build_all()

    # -- construction -----------------------------------------------------

    def _build_all(self) -> None:
        g = self.graph
        for v in range(g.n_vertices):
            self._vertex_node[v] = len(self.nodes)
            self.nodes.append(GridNode(id=len(self.nodes), edge=None, coord=0.0, vertex=v))
        for e in g.edges:
            st = self._states[e.id]
            ids = [self._vertex_node[e.tail]]
            for c in st.coords[1:-1]:
                ids.append(len(self.nodes))
                self.nodes.append(GridNode(id=len(self.nodes), edge=e.id, coord=c))
            if st.open_end:
                ids.append(len(self.nodes))
                self.nodes.append(GridNode(id=len(self.nodes), edge=e.id,
                                           coord=st.coords[-1]))
            else:
                ids.append(self._vertex_node[e.head])
            self._edge_coords[e.id] = list(st.coords)
            self._edge_node_ids[e.id] = ids
        for v in range(g.n_vertices):
            self._add_vertex_cell(v)
        for e in g.edges:
            st = self._states[e.id]
            for i in range(1, len(st.coords) - 1):
                self._add_interior_cell(e.id, i)

    def _add_vertex_cell(self, v: VertexId) -> None:
        radii = _vertex_radii(self.spec, self._states, v)
        exits: dict[EdgeId, int] = {}
        e_in, e_out = self.graph.incident_edges(v)
        for e in e_out:
            exits[e] = self._edge_node_ids[e][1]
        for e in e_in:
            exits[e] = self._edge_node_ids[e][-2]
        cell = VertexCell(id=len(self.cells), vertex=v, radii=radii,
                          center_node=self._vertex_node[v], exits=exits)
        self.cells.append(cell)
        self.cell_of_node[cell.center_node] = cell.id
        self._thinness.append(cell_thinness(self.spec, cell))

    def _add_interior_cell(self, e: EdgeId, i: int) -> None:
        coords = self._edge_coords[e]
        ids = self._edge_node_ids[e]
        cell = InteriorCell(id=len(self.cells), edge=e, a=coords[i - 1], b=coords[i + 1],
                            center=coords[i], center_node=ids[i],
                            left_node=ids[i - 1], right_node=ids[i + 1])
        self.cells.append(cell)
        self.cell_of_node[cell.center_node] = cell.id
        self._thinness.append(cell_thinness(self.spec, cell))

    # -- basic accessors ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def vertex_node(self, v: VertexId) -> int:
        return self._vertex_node[v]

    def node_point(self, node_id: int) -> GraphPoint:
        n = self.nodes[node_id]
        if n.is_vertex:
            return self.graph.vertex_point(n.vertex)
        return GraphPoint(n.edge, n.coord)

    def thinness_of(self, cell_id: int) -> float:
        return self._thinness[cell_id]

    @property
    def thinness_quantifier(self) -> float:
        """Largest cell thinness over all published cells."""
        return max(self._thinness)

    @property
    def step(self) -> float:
        """Largest cell width over all published cells."""
        return max(c.width for c in self.cells)

    def vertex_cells(self) -> list[VertexCell]:
        return [c for c in self.cells if isinstance(c, VertexCell)]

    def frontier_nodes(self) -> list[int]:
        out = []
        for e in self.graph.edges:
            if self._states[e.id].open_end:
                out.append(self._edge_node_ids[e.id][-1])
        return out

    def is_frontier_node(self, node_id: int) -> bool:
        return node_id not in self.cell_of_node and not self.nodes[node_id].is_vertex

    def edge_grid(self, e: EdgeId) -> tuple[list[float], list[int]]:
        """All grid coordinates on edge e with their node ids, sorted."""
        return list(self._edge_coords[e]), list(self._edge_node_ids[e])

    # -- diagnostics ----------------------------------------------------------

    def c_delta(self) -> float:
        cells = self.vertex_cells()
        if not cells:
            raise NoVertexCells("subdivision has no vertex cell")
        worst = math.inf
        for cell in cells:
            cond = self.spec.vertex_conditions[cell.vertex]
            rates = [cond.betas[e] / u for e, u in cell.radii.items()]
            worst = min(worst, min(rates) / sum(rates))
        return worst

    def symmetry_epsilon(self) -> float:
        cells = self.vertex_cells()
        if not cells:
            raise NoVertexCells("subdivision has no vertex cell")
        eps = 1.0
        for cell in cells:
            radii = list(cell.radii.values())
            for i in range(len(radii)):
                for j in range(i + 1, len(radii)):
                    r = radii[i] / radii[j]
                    eps = min(eps, r, 1.0 / r)
        return eps

    # -- locating points --------------------------------------------------------

    def locate(self, p: GraphPoint) -> tuple[int | None, tuple[int, int] | None]:
        """Locate p on the grid.

        Returns (node_id, None) when p coincides with a grid node, else
        (None, (left_node, right_node)) for the bracketing nodes.  Raises
        OutsideGeneratedRegion beyond the frontier of an open-ended edge.
        """
        self.graph.validate_point(p)
        v = self.graph.vertex_at(p)
        if v is not None:
            return self._vertex_node[v], None
        coords = self._edge_coords[p.edge]
        ids = self._edge_node_ids[p.edge]
        tol = 1e-12 * max(1.0, abs(p.coord))
        i = int(np.searchsorted(coords, p.coord))
        for j in (i - 1, i, i + 1):
            if 0 <= j < len(coords) and abs(coords[j] - p.coord) <= tol:
                return ids[j], None
        if p.coord > coords[-1]:
            raise OutsideGeneratedRegion(
                f"coordinate {p.coord} beyond frontier {coords[-1]} on edge {p.edge}"
            )
        return None, (ids[i - 1], ids[i])

    # -- lazy extension -----------------------------------------------------------

    def lazy_extend(self, e: EdgeId, new_frontier: float) -> "Subdivision":
        """Extend the grid on an open-ended edge out to new_frontier.

        Appends nodes and cells; everything already published is unchanged.
        Returns self (the extension is in place, guarded by a lock).
        """
        edge = self.graph.edge(e)
        st = self._states[e]
        if not st.open_end:
            raise NotExtendable(f"edge {e} is closed")
        with self._lock:
            old_frontier = st.coords[-1]
            if not new_frontier > old_frontier:
                raise NotExtendable(
                    f"new frontier {new_frontier} not beyond {old_frontier}"
                )
            # build on a copy so a failed extension leaves no partial state
            work = _EdgeState(coords=list(st.coords), depths=list(st.depths),
                              open_end=True)
            if edge.is_open_boundary:
                if new_frontier >= edge.length:
                    raise NotExtendable(
                        f"frontier {new_frontier} reaches the open endpoint "
                        f"{edge.length} of edge {e}"
                    )
                gap = edge.length - old_frontier
                while work.coords[-1] < new_frontier:
                    gap *= 0.5
                    nxt = edge.length - gap
                    if gap < 1e-15 * edge.length or nxt <= work.coords[-1]:
                        raise FrontierExhausted(
                            f"edge {e}: frontier gap underflow at {work.coords[-1]}"
                        )
                    work.append(nxt)
            else:
                n = int(math.ceil((new_frontier - old_frontier) / self.h - 1e-12))
                spacing = (new_frontier - old_frontier) / n
                for k in range(1, n + 1):
                    work.append(old_frontier + k * spacing)
            # open boundaries refine in every mode: a plain gap-halving grid
            # toward a singular endpoint would keep constant cell thinness and
            # let the walk cross to the endpoint in spuriously little time.
            # In uniform mode the target cannot beat the straddling cell,
            # whose pre-extension panel is immutable.
            if self.mode == "adapted" or edge.is_open_boundary:
                target = self.h * self.h
                if self.mode != "adapted":
                    floor = _thinness_interior(self.spec, e,
                                               st.coords[-2], st.coords[-1])
                    target = max(target, floor * (1 + 1e-6))
                try:
                    _refine_to_target(self.spec, {**self._states, e: work},
                                      target, min_left={e: old_frontier})
                except RefinementCapExceeded as exc:
                    raise FrontierExhausted(
                        f"edge {e}: frontier cannot advance past "
                        f"{work.coords[-1]}: {exc}"
                    ) from exc
            self._states[e] = work
            self._append_new_nodes(e, old_frontier)
        return self

    def _append_new_nodes(self, e: EdgeId, old_frontier: float) -> None:
        coords = self._states[e].coords
        ids = self._edge_node_ids[e]
        n_old = len(self._edge_coords[e])
        for c in coords[n_old:]:
            ids.append(len(self.nodes))
            self.nodes.append(GridNode(id=len(self.nodes), edge=e, coord=c))
        self._edge_coords[e] = list(coords)
        # every node from the old frontier up to (not including) the new one
        # now centers a cell
        for i in range(n_old - 1, len(coords) - 1):
            self._add_interior_cell(e, i)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _check_step(spec: DiffusionSpec, h: float) -> None:
    if not h > 0:
        raise StepTooLarge(f"step must be positive, got {h}")
    finite = [e.length for e in spec.graph.edges if math.isfinite(e.length)]
    if finite and h >= min(finite) / 2.0:
        raise StepTooLarge(f"step {h} >= half the shortest finite edge {min(finite)}")


def uniform_subdivision(spec: DiffusionSpec, h: float,
                        vertex_radius_rule=None,
                        frontier: float = DEFAULT_FRONTIER) -> Subdivision:
    """Grid with spacing h per edge and vertex cells of radius h^2 by default."""
    _check_step(spec, h)
    rule = vertex_radius_rule or default_vertex_radius
    radius = float(rule(h))
    if not radius > 0:
        raise StepTooLarge(f"vertex radius must be positive, got {radius}")
    states = {e.id: _initial_edge_state(e, h, radius, frontier) for e in spec.graph.edges}
    return Subdivision(spec, states, h=h, mode="uniform",
                       vertex_radius=radius, frontier=frontier)


def adapted_subdivision(spec: DiffusionSpec, h: float,
                        vertex_radius_rule=None,
                        frontier: float = DEFAULT_FRONTIER) -> Subdivision:
    """Uniform start, then bisection until every cell thinness is <= h^2."""
    _check_step(spec, h)
    rule = vertex_radius_rule or default_vertex_radius
    radius = float(rule(h))
    if not radius > 0:
        raise StepTooLarge(f"vertex radius must be positive, got {radius}")
    states = {e.id: _initial_edge_state(e, h, radius, frontier) for e in spec.graph.edges}
    _refine_to_target(spec, states, h * h)
    return Subdivision(spec, states, h=h, mode="adapted",
                       vertex_radius=radius, frontier=frontier)


def bisect_cell(sub: Subdivision, cell_id: int) -> Subdivision:
    """A fresh subdivision with the given cell's panels halved (for studies)."""
    states = {e: _EdgeState(coords=list(st.coords), depths=list(st.depths),
                            open_end=st.open_end)
              for e, st in sub._states.items()}
    cell = sub.cells[cell_id]
    if isinstance(cell, InteriorCell):
        states[cell.edge].insert_midpoints({cell.a, cell.center})
    else:
        for e, left in _vertex_first_panels(sub.spec, states, cell.vertex):
            states[e].insert_midpoints({left})
    return Subdivision(sub.spec, states, h=sub.h, mode=sub.mode,
                       vertex_radius=sub.vertex_radius, frontier=sub.frontier_init)


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------

def write_nodes_csv(sub: Subdivision, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "kind", "edge", "coord", "vertex"])
        for n in sub.nodes:
            if n.is_vertex:
                w.writerow([n.id, "vertex", "", "", n.vertex])
            else:
                kind = "frontier" if sub.is_frontier_node(n.id) else "interior"
                w.writerow([n.id, kind, n.edge, f"{n.coord:.17g}", ""])


def write_cells_csv(sub: Subdivision, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "kind", "edge_or_vertex", "a", "b", "radii", "thinness"])
        for c in sub.cells:
            t = f"{sub.thinness_of(c.id):.17g}"
            if isinstance(c, InteriorCell):
                w.writerow([c.id, "interior", c.edge, f"{c.a:.17g}", f"{c.b:.17g}", "", t])
            else:
                radii = ";".join(f"{e}:{u:.17g}" for e, u in sorted(c.radii.items()))
                w.writerow([c.id, "vertex", c.vertex, "", "", radii, t])
