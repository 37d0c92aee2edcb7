"""Transition quantities of the grid walk: exit probabilities and times.

Interior cells use scale ratios for the exit probabilities and a Green-kernel
quadrature for the first exit-time moment.  Vertex cells go through a solver
for the Dirichlet problem on a star neighborhood, whose gluing condition at
the vertex carries the bias weights and the stickiness coefficient.

Normalization: with generator (1/2) D_m D_s, the first-moment recursion is
v1(x) = 2 * integral of G(x, y) v0(y) m(dy).  The factor 2 is pinned by the
requirement that standard Brownian motion (identity scale, Lebesgue speed)
exit (-h, h) from 0 in mean time h^2.
"""
from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diffusion import DiffusionSpec, ScaleFn, SpeedMeasure, reoriented
from .errors import (
    FrontierExhausted,
    NotIncident,
    NotNaturalScale,
    OutOfCell,
    OutOfInterval,
    QuadratureFailure,
)
from .graph import EdgeId, GraphPoint, VertexId
from .subdivision import Cell, InteriorCell, Subdivision, VertexCell

DEFAULT_KERNEL_PANELS = 256
ROW_SUM_TOL = 1e-9
MAX_FRONTIER = 1e6


# ---------------------------------------------------------------------------
# Green kernel and interior cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GreenKernelEval:
    """G(x, y) = (s(x^y) - s(a)) (s(b) - s(xvy)) / (s(b) - s(a)) on (a, b)."""

    scale: ScaleFn
    a: float
    b: float

    def __call__(self, x: float, y) -> np.ndarray:
        s = self.scale
        sa, sb, sx = s(self.a), s(self.b), s(x)
        sy = np.asarray([s(float(t)) for t in np.atleast_1d(y)]) \
            if not self.scale.is_identity else np.atleast_1d(np.asarray(y, dtype=float))
        lo = np.minimum(sx, sy)
        hi = np.maximum(sx, sy)
        return (lo - sa) * (sb - hi) / (sb - sa)


def _scale_values(s: ScaleFn, xs: np.ndarray) -> np.ndarray:
    if s.is_identity:
        return xs
    return np.asarray([s(float(t)) for t in xs], dtype=float)


def interior_exit_prob(spec: DiffusionSpec, e: EdgeId, a: float, b: float,
                       x: float) -> tuple[float, float]:
    """(probability of exiting at b, at a) for the cell (a, b) from x."""
    edge = spec.graph.edge(e)
    if not (0 <= a < b <= edge.length):
        raise OutOfInterval(f"({a}, {b}) not inside edge {e}")
    if not a < x < b:
        raise OutOfInterval(f"x = {x} not strictly inside ({a}, {b})")
    s = spec.scales[e]
    den = s(b) - s(a)
    p_b = (s(x) - s(a)) / den
    return p_b, 1.0 - p_b


def _interior_first_moment(spec: DiffusionSpec, e: EdgeId, a: float, b: float,
                           x: float, v0: Callable[[np.ndarray], np.ndarray],
                           n_panels: int) -> float:
    """2 * integral over (a,b) of G(x,y) v0(y) m(dy), trapezoid split at x."""
    m = spec.speeds[e]
    green = GreenKernelEval(spec.scales[e], a, b)
    total = 0.0
    for lo, hi in ((a, x), (x, b)):
        if hi <= lo:
            continue
        ys = np.linspace(lo, hi, n_panels + 1)
        vals = green(x, ys) * v0(ys) * m.density_at(ys)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure(
                f"non-finite integrand on edge {e} in ({lo}, {hi})"
            )
        total += float(np.trapezoid(vals, ys))
    for pos, mass in m.atoms_in(a, b):
        total += float(green(x, pos)[0]) * float(v0(np.asarray([pos]))[0]) * mass
    return 2.0 * total


def interior_conditional_time(spec: DiffusionSpec, e: EdgeId, a: float, b: float,
                              x: float, target: str,
                              n_panels: int = DEFAULT_KERNEL_PANELS) -> float:
    """Mean exit time from (a, b) started at x, conditioned on the exit side.

    ``target`` is "b" (upper boundary) or "a" (lower boundary).
    """
    p_b, p_a = interior_exit_prob(spec, e, a, b, x)
    s = spec.scales[e]
    den = s(b) - s(a)
    if target == "b":
        v0 = lambda ys: (_scale_values(s, ys) - s(a)) / den
        v0_x = p_b
    elif target == "a":
        v0 = lambda ys: (s(b) - _scale_values(s, ys)) / den
        v0_x = p_a
    else:
        raise OutOfInterval(f"target must be 'a' or 'b', got {target!r}")
    v1 = _interior_first_moment(spec, e, a, b, x, v0, n_panels)
    return v1 / v0_x


# ---------------------------------------------------------------------------
# vertex cells: oriented data and the closed-form exit probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _OrientedEdge:
    edge: EdgeId
    u: float
    beta: float
    scale: ScaleFn
    speed: SpeedMeasure
    s_u: float
    d: float  # beta * s'(0) / s(u), the weight entering every vertex formula


def _vertex_data(spec: DiffusionSpec, cell: VertexCell) -> tuple[list[_OrientedEdge], float]:
    cond = spec.vertex_conditions[cell.vertex]
    edges = []
    for e in sorted(cell.radii):
        u = cell.radii[e]
        s_hat, m_hat = reoriented(spec, cell.vertex, e)
        s_u = s_hat(u) - s_hat(0.0)
        edges.append(_OrientedEdge(edge=e, u=u, beta=cond.betas[e], scale=s_hat,
                                   speed=m_hat, s_u=s_u,
                                   d=cond.betas[e] * s_hat.deriv0 / s_u))
    return edges, cond.rho


def _reoriented_position(spec: DiffusionSpec, cell: VertexCell,
                         p: GraphPoint) -> tuple[EdgeId | None, float]:
    """(edge, distance from the vertex) for p inside the cell; (None, 0) at v."""
    g = spec.graph
    g.validate_point(p)
    v_at = g.vertex_at(p)
    if v_at is not None:
        if v_at != cell.vertex:
            raise OutOfCell(f"point {p} is the foreign vertex {v_at}")
        return None, 0.0
    if p.edge not in cell.radii:
        raise OutOfCell(f"edge {p.edge} does not touch vertex {cell.vertex}")
    edge = g.edge(p.edge)
    e_in, _ = g.incident_edges(cell.vertex)
    r = edge.length - p.coord if p.edge in e_in else p.coord
    # the closed cell: r = u_e is the boundary point itself
    if not 0 <= r <= cell.radii[p.edge]:
        raise OutOfCell(
            f"point {p} at distance {r} outside radius {cell.radii[p.edge]}"
        )
    return p.edge, r


def _v0_formula(edges: list[_OrientedEdge], target: EdgeId,
                at_edge: EdgeId | None, x: float) -> float:
    d_sum = sum(oe.d for oe in edges)
    d_j = next(oe.d for oe in edges if oe.edge == target)
    if at_edge is None or x == 0.0:
        return d_j / d_sum
    oe = next(oe for oe in edges if oe.edge == at_edge)
    sx = oe.scale(x) - oe.scale(0.0)
    through_vertex = (oe.s_u - sx) / oe.s_u * d_j / d_sum
    direct = sx / oe.s_u if at_edge == target else 0.0
    return through_vertex + direct


def vertex_exit_prob(spec: DiffusionSpec, cell: VertexCell, start: GraphPoint,
                     target_edge: EdgeId) -> float:
    """Probability that the first exit from the vertex cell is on target_edge."""
    edges, _ = _vertex_data(spec, cell)
    if target_edge not in cell.radii:
        raise NotIncident(f"edge {target_edge} not incident to vertex {cell.vertex}")
    at_edge, r = _reoriented_position(spec, cell, start)
    return _v0_formula(edges, target_edge, at_edge, r)


# ---------------------------------------------------------------------------
# the Dirichlet solver on a vertex neighborhood
# ---------------------------------------------------------------------------

class VertexSolution:
    """Solution of (1/2) D_m D_s f = g on a star cell.

    Boundary data f(e, u_e) = a_e, continuity at the vertex, and the gluing
    condition  sum_e beta_e f'(e, 0) = rho * g(v).  Coordinates are reoriented
    distances from the vertex.  The solution on each edge is
    f(e, x) = A_e(x) + B_e s_e(x) + C with A_e the iterated integral of 2g.
    """

    def __init__(self, edges: list[_OrientedEdge], rho: float,
                 g: Callable[[EdgeId, np.ndarray], np.ndarray],
                 boundary: dict[EdgeId, float], n_panels: int):
        self.edges = edges
        self.rho = rho
        self.g_vertex = float(np.asarray(g(edges[0].edge, np.zeros(1)))[0])
        self._per_edge: dict[EdgeId, dict] = {}

        d_sum = 0.0
        weighted = self.rho * self.g_vertex
        for oe in edges:
            a_e = boundary.get(oe.edge, 0.0)
            grid = np.linspace(0.0, oe.u, n_panels + 1)
            atoms = oe.speed.atoms_in(0.0, oe.u)
            if atoms:
                grid = np.unique(np.concatenate([grid, [p for p, _ in atoms]]))
            s_vals = _scale_values(oe.scale, grid) - oe.scale(0.0)
            gm = np.asarray(g(oe.edge, grid), dtype=float) * oe.speed.density_at(grid)
            if not np.all(np.isfinite(gm)):
                raise QuadratureFailure(f"non-finite source density on edge {oe.edge}")
            # inner integral I(y) = integral of g dm over (0, y), density part
            panel = 0.5 * (gm[1:] + gm[:-1]) * np.diff(grid)
            inner = np.concatenate([[0.0], np.cumsum(panel)])
            # A(x) = 2 * Stieltjes integral of I against s, plus exact atom terms
            a_panel = 0.5 * (inner[1:] + inner[:-1]) * np.diff(s_vals)
            a_dens = 2.0 * np.concatenate([[0.0], np.cumsum(a_panel)])
            entry = {
                "grid": grid, "s": s_vals, "gm": gm, "inner": inner,
                "a_dens": a_dens, "atoms": atoms, "a_bnd": a_e,
                "g": g,
            }
            entry["A_u"] = self._a_value(oe, entry, oe.u)
            self._per_edge[oe.edge] = entry
            d_sum += oe.d
            weighted += (entry["A_u"] - a_e) * oe.d
        self.C = -weighted / d_sum
        for oe in edges:
            entry = self._per_edge[oe.edge]
            entry["B"] = (entry["a_bnd"] - entry["A_u"] - self.C) / oe.s_u
        self._by_edge = {oe.edge: oe for oe in edges}

    def _a_value(self, oe: _OrientedEdge, entry: dict, x: float) -> float:
        grid, s_vals = entry["grid"], entry["s"]
        inner, gm = entry["inner"], entry["gm"]
        k = int(np.searchsorted(grid, x, side="right")) - 1
        k = min(max(k, 0), len(grid) - 2)
        a_val = entry["a_dens"][k]
        if x > grid[k]:
            gm_x = float(np.asarray(entry["g"](oe.edge, np.asarray([x])))[0]
                         * oe.speed.density_at(np.asarray([x]))[0])
            inner_x = inner[k] + 0.5 * (gm[k] + gm_x) * (x - grid[k])
            s_x = oe.scale(x) - oe.scale(0.0)
            a_val += 2.0 * 0.5 * (inner[k] + inner_x) * (s_x - s_vals[k])
        for pos, mass in entry["atoms"]:
            if pos < x:
                g_p = float(np.asarray(entry["g"](oe.edge, np.asarray([pos])))[0])
                s_x = oe.scale(x) - oe.scale(0.0)
                s_p = oe.scale(pos) - oe.scale(0.0)
                a_val += 2.0 * g_p * mass * (s_x - s_p)
        return a_val

    def __call__(self, edge: EdgeId | None, x: float) -> float:
        """Evaluate at reoriented distance x on the given edge (None = vertex)."""
        if edge is None or x == 0.0:
            return self.C
        oe = self._by_edge[edge]
        entry = self._per_edge[edge]
        s_x = oe.scale(x) - oe.scale(0.0)
        return self._a_value(oe, entry, x) + entry["B"] * s_x + self.C

    @property
    def at_vertex(self) -> float:
        return self.C

    def vertex_flux(self, edge: EdgeId) -> float:
        """f'(e, 0) from the solved coefficients (B_e * s'_e(0))."""
        oe = self._by_edge[edge]
        return self._per_edge[edge]["B"] * oe.scale.deriv0


def dirichlet_solve(spec: DiffusionSpec, cell: VertexCell,
                    g: Callable[[EdgeId, np.ndarray], np.ndarray],
                    boundary: dict[EdgeId, float] | None = None,
                    n_panels: int = DEFAULT_KERNEL_PANELS) -> VertexSolution:
    """Solve the vertex-cell Dirichlet problem with source g and boundary data.

    g takes (edge id, array of reoriented distances) and must be continuous
    across the vertex.  Returns an evaluator over the closed cell.
    """
    edges, rho = _vertex_data(spec, cell)
    sol = VertexSolution(edges, rho, g, boundary or {}, n_panels)
    if not math.isfinite(sol.C):
        raise QuadratureFailure(f"vertex constant non-finite at vertex {cell.vertex}")
    return sol


def vertex_conditional_time(spec: DiffusionSpec, cell: VertexCell,
                            start: GraphPoint, target_edge: EdgeId,
                            n_panels: int = DEFAULT_KERNEL_PANELS) -> float:
    """Mean exit time from the vertex cell, conditioned on exiting at target_edge.

    The conditional first moment solves the cell's Dirichlet problem with
    source -v0 (occupation-functional sign) and zero boundary data.
    """
    edges, _ = _vertex_data(spec, cell)
    if target_edge not in cell.radii:
        raise NotIncident(f"edge {target_edge} not incident to vertex {cell.vertex}")

    def neg_v0(e: EdgeId, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        return -np.asarray([_v0_formula(edges, target_edge, e, float(x)) for x in xs])

    sol = dirichlet_solve(spec, cell, neg_v0, None, n_panels)
    at_edge, r = _reoriented_position(spec, cell, start)
    v1 = sol(at_edge, r)
    v0 = _v0_formula(edges, target_edge, at_edge, r)
    t = v1 / v0
    if not (math.isfinite(t) and t >= -1e-12):
        raise QuadratureFailure(
            f"conditional time {t} invalid at vertex {cell.vertex} -> edge {target_edge}"
        )
    return max(t, 0.0)


def expected_occupation(spec: DiffusionSpec, cell: Cell,
                        g, start: GraphPoint,
                        n_panels: int = DEFAULT_KERNEL_PANELS) -> float:
    """E[ integral of g(X_s) ds up to the first exit from the cell ].

    For vertex cells g takes (edge, distances); for interior cells g takes an
    array of edge coordinates.
    """
    if isinstance(cell, VertexCell):
        sol = dirichlet_solve(
            spec, cell,
            lambda e, xs: -np.asarray(g(e, xs), dtype=float),
            None, n_panels,
        )
        at_edge, r = _reoriented_position(spec, cell, start)
        return sol(at_edge, r)
    x = start.coord
    if start.edge != cell.edge or not cell.a < x < cell.b:
        raise OutOfCell(f"point {start} not inside cell ({cell.a}, {cell.b})")
    return _interior_first_moment(
        spec, cell.edge, cell.a, cell.b, x,
        lambda ys: np.asarray(g(ys), dtype=float), n_panels,
    )


# ---------------------------------------------------------------------------
# per-cell kernels and the full table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExitChannel:
    node: int
    p: float
    t: float
    v0: float
    v1: float


@dataclass(frozen=True)
class CellKernel:
    cell_id: int
    center_node: int
    exits: tuple[ExitChannel, ...]

    @property
    def p_sum(self) -> float:
        return sum(ch.p for ch in self.exits)

    def max_time_ratio(self) -> float:
        """max over exits of v1/v0, the quantity the thinness bound controls."""
        return max(ch.v1 / ch.v0 for ch in self.exits)


def vertex_asymptotic_kernel(spec: DiffusionSpec, cell: VertexCell) -> CellKernel:
    """Small-radius vertex kernel: p_j = beta_j, t_j = rho * u_j.

    Valid for natural-scale specs with rho > 0; with rho = 0 the builder must
    fall back to the exact solver (a zero time would erase the diffusive
    O(u^2) part entirely).
    """
    cond = spec.vertex_conditions[cell.vertex]
    exits = []
    for e in sorted(cell.radii):
        p = cond.betas[e]
        t = cond.rho * cell.radii[e]
        exits.append(ExitChannel(node=cell.exits[e], p=p, t=t, v0=p, v1=p * t))
    return CellKernel(cell_id=cell.id, center_node=cell.center_node,
                      exits=tuple(exits))


def _interior_cell_kernel(spec: DiffusionSpec, cell: InteriorCell,
                          n_panels: int) -> CellKernel:
    p_b, p_a = interior_exit_prob(spec, cell.edge, cell.a, cell.b, cell.center)
    t_b = interior_conditional_time(spec, cell.edge, cell.a, cell.b, cell.center,
                                    "b", n_panels)
    t_a = interior_conditional_time(spec, cell.edge, cell.a, cell.b, cell.center,
                                    "a", n_panels)
    exits = (
        ExitChannel(node=cell.left_node, p=p_a, t=t_a, v0=p_a, v1=p_a * t_a),
        ExitChannel(node=cell.right_node, p=p_b, t=t_b, v0=p_b, v1=p_b * t_b),
    )
    return CellKernel(cell_id=cell.id, center_node=cell.center_node, exits=exits)


def _vertex_cell_kernel(spec: DiffusionSpec, cell: VertexCell, policy: str,
                        n_panels: int) -> CellKernel:
    cond = spec.vertex_conditions[cell.vertex]
    if policy == "asymptotic" and cond.rho > 0:
        if not spec.is_nse:
            raise NotNaturalScale(
                "asymptotic vertex kernels need identity scales on every edge"
            )
        return vertex_asymptotic_kernel(spec, cell)
    edges, _ = _vertex_data(spec, cell)
    center = spec.graph.vertex_point(cell.vertex)
    exits = []
    for e in sorted(cell.radii):
        v0 = _v0_formula(edges, e, None, 0.0)
        t = vertex_conditional_time(spec, cell, center, e, n_panels)
        exits.append(ExitChannel(node=cell.exits[e], p=v0, t=t, v0=v0, v1=v0 * t))
    return CellKernel(cell_id=cell.id, center_node=cell.center_node,
                      exits=tuple(exits))


def _cell_kernel(spec: DiffusionSpec, cell: Cell, policy: str,
                 n_panels: int) -> CellKernel:
    if isinstance(cell, InteriorCell):
        kern = _interior_cell_kernel(spec, cell, n_panels)
    else:
        kern = _vertex_cell_kernel(spec, cell, policy, n_panels)
    if abs(kern.p_sum - 1.0) > ROW_SUM_TOL:
        raise QuadratureFailure(
            f"cell {cell.id}: exit probabilities sum to {kern.p_sum!r}"
        )
    bad_t = [ch for ch in kern.exits if ch.t < 0 or not math.isfinite(ch.t)]
    if bad_t:
        raise QuadratureFailure(f"cell {cell.id}: invalid exit time {bad_t[0].t!r}")
    return kern


class KernelTable:
    """Per-grid-node transition kernels, extendable at the frontier.

    The table follows its subdivision: when a sampler lands on a frontier
    node, ``ensure_node`` extends the grid and fills in kernels for the new
    cells.  Published entries never change; extension appends under a lock.
    """

    def __init__(self, spec: DiffusionSpec, sub: Subdivision, policy: str = "exact",
                 n_panels: int = DEFAULT_KERNEL_PANELS,
                 extend_chunk: float | None = None):
        if policy not in ("exact", "asymptotic"):
            raise ValueError(f"unknown kernel policy {policy!r}")
        self.spec = spec
        self.subdivision = sub
        self.policy = policy
        self.n_panels = n_panels
        self.extend_chunk = extend_chunk if extend_chunk is not None else max(1.0, 20 * sub.h)
        self.kernels: dict[int, CellKernel] = {}
        self._cells_done = 0
        self._lock = threading.RLock()
        self._packed = None
        self._fill()

    def _fill(self) -> None:
        cells = self.subdivision.cells
        for cell in cells[self._cells_done:]:
            kern = _cell_kernel(self.spec, cell, self.policy, self.n_panels)
            self.kernels[kern.center_node] = kern
        self._cells_done = len(cells)
        self._packed = None

    @property
    def n_entries(self) -> int:
        return len(self.kernels)

    def kernel_for(self, node: int) -> CellKernel:
        return self.kernels[node]

    def ensure_node(self, node: int) -> CellKernel:
        """Kernel for node, extending the grid first if node is at the frontier."""
        kern = self.kernels.get(node)
        if kern is not None:
            return kern
        with self._lock:
            kern = self.kernels.get(node)
            if kern is not None:
                return kern
            sub = self.subdivision
            gn = sub.nodes[node]
            if gn.is_vertex or not sub.is_frontier_node(node):
                raise QuadratureFailure(f"node {node} has no cell and is not a frontier")
            edge = sub.graph.edge(gn.edge)
            coords, _ = sub.edge_grid(gn.edge)
            frontier = coords[-1]
            if edge.is_open_boundary:
                target = 0.5 * (frontier + edge.length)
            else:
                if frontier + self.extend_chunk > MAX_FRONTIER:
                    raise FrontierExhausted(
                        f"edge {gn.edge}: frontier {frontier} beyond cap {MAX_FRONTIER}"
                    )
                target = frontier + self.extend_chunk
            sub.lazy_extend(gn.edge, target)
            self._fill()
            return self.kernels[node]

    # -- packed arrays for vectorized sampling -------------------------------

    def packed(self):
        if self._packed is None:
            with self._lock:
                if self._packed is None:
                    self._packed = _pack(self)
        return self._packed


@dataclass(frozen=True)
class PackedTable:
    """Dense per-node arrays: cumulative probabilities, targets, times."""

    cum: np.ndarray      # (n_nodes, k) cumulative exit probabilities
    target: np.ndarray   # (n_nodes, k) target node ids, -1 padded
    time: np.ndarray     # (n_nodes, k) conditional times
    has_cell: np.ndarray  # (n_nodes,) bool

    def pick(self, nodes: np.ndarray, uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rows_cum = self.cum[nodes]
        slot = np.sum(uniforms[:, None] >= rows_cum, axis=1)
        slot = np.minimum(slot, rows_cum.shape[1] - 1)
        nxt = self.target[nodes, slot]
        dt = self.time[nodes, slot]
        return nxt, dt


def _pack(table: KernelTable) -> PackedTable:
    n = table.subdivision.n_nodes
    k = max((len(kern.exits) for kern in table.kernels.values()), default=1)
    cum = np.ones((n, k), dtype=float)
    target = np.full((n, k), -1, dtype=np.int64)
    time = np.zeros((n, k), dtype=float)
    has_cell = np.zeros(n, dtype=bool)
    for node, kern in table.kernels.items():
        probs = np.array([ch.p for ch in kern.exits])
        c = np.cumsum(probs)
        c[-1] = 1.0
        cum[node, : len(probs)] = c
        cum[node, len(probs):] = 1.0
        target[node, : len(probs)] = [ch.node for ch in kern.exits]
        target[node, len(probs):] = kern.exits[-1].node
        time[node, : len(probs)] = [ch.t for ch in kern.exits]
        time[node, len(probs):] = kern.exits[-1].t
        has_cell[node] = True
    return PackedTable(cum=cum, target=target, time=time, has_cell=has_cell)


def build_kernel_table(spec: DiffusionSpec, sub: Subdivision, policy: str = "exact",
                       n_panels: int = DEFAULT_KERNEL_PANELS) -> KernelTable:
    """Compute transition kernels for every cell of the subdivision."""
    return KernelTable(spec, sub, policy=policy, n_panels=n_panels)


# ---------------------------------------------------------------------------
# diagnostics and a cross-check on the vertex first moment
# ---------------------------------------------------------------------------

def time_ratio_bound(table: KernelTable) -> float:
    """The thinness bound 2 (1 v 1/c_Delta) |Delta|_X on v1/v0 per exit."""
    sub = table.subdivision
    c = sub.c_delta()
    return 2.0 * max(1.0, 1.0 / c) * sub.thinness_quantifier


def check_time_ratio_bound(table: KernelTable) -> tuple[bool, float, float]:
    """(all within bound, worst observed ratio, bound)."""
    bound = time_ratio_bound(table)
    worst = 0.0
    for kern in table.kernels.values():
        worst = max(worst, kern.max_time_ratio())
    return worst <= bound * (1 + 1e-9), worst, bound


def vertex_recursion_crosscheck(spec: DiffusionSpec, cell: VertexCell,
                                target_edge: EdgeId,
                                n_panels: int = DEFAULT_KERNEL_PANELS) -> dict:
    """Compare the solver's vertex first moment with the per-edge recursion.

    Evaluating 2 * integral (s(u)-s(y)) v0(y) m(dy) + rho v0(v) / C' on a
    single edge yields values that differ from edge to edge (the naive
    recursion is discontinuous at the vertex), which is why the table goes
    through the full solver.  Their d-weighted mean, with d_e = beta_e
    s'_e(0) / s_e(u_e), recovers the solver's vertex value; this function
    reports all of it.
    """
    edges, rho = _vertex_data(spec, cell)
    c_prime = sum(oe.d for oe in edges)
    v0_v = _v0_formula(edges, target_edge, None, 0.0)
    per_edge = {}
    for oe in edges:
        ys = np.linspace(0.0, oe.u, n_panels + 1)
        v0_vals = np.asarray(
            [_v0_formula(edges, target_edge, oe.edge, float(y)) for y in ys]
        )
        s_vals = _scale_values(oe.scale, ys) - oe.scale(0.0)
        integrand = (oe.s_u - s_vals) * v0_vals * oe.speed.density_at(ys)
        val = 2.0 * float(np.trapezoid(integrand, ys)) + rho * v0_v / c_prime
        per_edge[oe.edge] = val
    weighted = sum(oe.d * per_edge[oe.edge] for oe in edges) / c_prime
    center = spec.graph.vertex_point(cell.vertex)
    solver_v1 = vertex_conditional_time(spec, cell, center, target_edge, n_panels) * v0_v
    return {"per_edge": per_edge, "weighted": weighted, "solver": solver_v1,
            "spread": max(per_edge.values()) - min(per_edge.values())}


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def write_kernel_csv(table: KernelTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from_node", "to_node", "p", "t", "v0", "v1", "cell_id"])
        for node in sorted(table.kernels):
            kern = table.kernels[node]
            for ch in kern.exits:
                w.writerow([node, ch.node, f"{ch.p:.17g}", f"{ch.t:.17g}",
                            f"{ch.v0:.17g}", f"{ch.v1:.17g}", kern.cell_id])


def read_kernel_csv(spec: DiffusionSpec, sub: Subdivision, path) -> KernelTable:
    """Rebuild a table from its CSV dump; floats round-trip bit-exactly."""
    table = KernelTable.__new__(KernelTable)
    table.spec = spec
    table.subdivision = sub
    table.policy = "loaded"
    table.n_panels = 0
    table.extend_chunk = max(1.0, 20 * sub.h)
    table.kernels = {}
    table._lock = threading.RLock()
    table._packed = None
    rows: dict[int, list] = {}
    cell_ids: dict[int, int] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            node = int(row["from_node"])
            rows.setdefault(node, []).append(ExitChannel(
                node=int(row["to_node"]), p=float(row["p"]), t=float(row["t"]),
                v0=float(row["v0"]), v1=float(row["v1"]),
            ))
            cell_ids[node] = int(row["cell_id"])
    for node, exits in rows.items():
        table.kernels[node] = CellKernel(cell_id=cell_ids[node], center_node=node,
                                         exits=tuple(exits))
    table._cells_done = len(sub.cells)
    return table
