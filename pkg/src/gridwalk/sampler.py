"""Sampling the grid walk.

The walk's consecutive states form a Markov chain over grid nodes; the jump
out of a cell takes exactly the kernel's conditional mean time for the chosen
target, so a path is fully determined by its uniform draws.  Every path owns
a counter-based random stream derived from (master seed, path id), which
makes ensembles reproducible and independent of scheduling order.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvariantError,
    NotNaturalScale,
    TimeOutOfRange,
    ZeroTimeLoop,
)
from .graph import GraphPoint
from .kernel import KernelTable, interior_exit_prob, vertex_exit_prob
from .subdivision import InteriorCell, Subdivision, VertexCell

MAX_ZERO_STEPS = 10**6
UNIFORM_BLOCK = 256


@dataclass(frozen=True)
class InitialDistribution:
    """Distribution of the walk's first state over boundary grid nodes."""

    support: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.weights) or not self.support:
            raise InvariantError("support and weights must match and be non-empty")
        if any(w < 0 or w > 1 for w in self.weights):
            raise InvariantError("weights must lie in [0, 1]")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise InvariantError(f"weights sum to {sum(self.weights)!r}")

    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c


def initial_distribution(spec, sub: Subdivision, x0: GraphPoint) -> InitialDistribution:
    """Starting distribution for a walk launched at x0.

    On-grid starts give a point mass.  Off-grid starts enter the cell whose
    center is nearest, and the weights are the exit probabilities of that
    cell seen from x0.
    """
    node, bracket = sub.locate(x0)
    if node is not None:
        return InitialDistribution(support=(node,), weights=(1.0,))
    left, right = bracket
    coords_left = sub.node_point(left)
    coords_right = sub.node_point(right)
    d_left = sub.graph.geodesic_distance(x0, coords_left)
    d_right = sub.graph.geodesic_distance(x0, coords_right)
    ordered = [left, right] if d_left <= d_right else [right, left]
    chosen = next((n for n in ordered if n in sub.cell_of_node), None)
    if chosen is None:
        raise InvariantError(f"no cell available around {x0}")
    cell = sub.cells[sub.cell_of_node[chosen]]
    if isinstance(cell, InteriorCell):
        p_b, p_a = interior_exit_prob(spec, cell.edge, cell.a, cell.b, x0.coord)
        return InitialDistribution(support=(cell.left_node, cell.right_node),
                                   weights=(p_a, p_b))
    support = []
    weights = []
    for e in sorted(cell.radii):
        support.append(cell.exits[e])
        weights.append(vertex_exit_prob(spec, cell, x0, e))
    return InitialDistribution(support=tuple(support), weights=tuple(weights))


def initial_distribution_extending(table: KernelTable, x0: GraphPoint,
                                   margin: float = 1.25) -> InitialDistribution:
    """initial_distribution, extending the frontier when x0 lies beyond it."""
    from .errors import OutsideGeneratedRegion

    sub = table.subdivision
    for _ in range(64):
        try:
            return initial_distribution(table.spec, sub, x0)
        except OutsideGeneratedRegion:
            edge = sub.graph.edge(x0.edge)
            coords, _ = sub.edge_grid(x0.edge)
            if edge.is_open_boundary:
                target = 0.5 * (max(coords[-1], x0.coord) + edge.length)
            else:
                target = max(x0.coord * margin, coords[-1] + table.extend_chunk)
            sub.lazy_extend(x0.edge, target)
            table._fill()
    raise OutsideGeneratedRegion(f"could not cover start point {x0}")


# ---------------------------------------------------------------------------
# per-path random streams
# ---------------------------------------------------------------------------

def path_rng(master_seed: int, path_id: int) -> np.random.Generator:
    """The dedicated counter-based stream of one path."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(path_id,))
    return np.random.Generator(np.random.Philox(seed=ss))


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Path:
    """One sampled trajectory: states and their entry times."""

    jump_times: np.ndarray
    states: np.ndarray
    seed: object

    def __post_init__(self):
        if len(self.jump_times) != len(self.states):
            raise InvariantError("one state per jump epoch required")

    @property
    def horizon_reached(self) -> float:
        return float(self.jump_times[-1])


def value_at(path: Path, t: float) -> int:
    """State occupied at time t; right-continuous at jump times."""
    if t < 0 or t > path.jump_times[-1]:
        raise TimeOutOfRange(f"t = {t} outside [0, {path.jump_times[-1]}]")
    idx = int(np.searchsorted(path.jump_times, t, side="right")) - 1
    return int(path.states[idx])


def _require_nse(table: KernelTable) -> None:
    if table.spec is not None and not table.spec.is_nse:
        raise NotNaturalScale(
            "sampling requires identity scales on every edge; transform the "
            "diffusion to natural scale first"
        )


def sample_path(table: KernelTable, init: InitialDistribution, horizon: float,
                rng_seed) -> Path:
    """Sample one path until its jump time first reaches the horizon."""
    if not horizon > 0:
        raise InvariantError(f"horizon must be positive, got {horizon}")
    _require_nse(table)
    if isinstance(rng_seed, tuple):
        rng = path_rng(*rng_seed)
    else:
        rng = np.random.Generator(np.random.Philox(seed=rng_seed))
    cum0 = init.cumulative()
    u0 = rng.random()
    state = init.support[min(int(np.searchsorted(cum0, u0, side="right")),
                             len(init.support) - 1)]
    t = 0.0
    states = [state]
    times = [0.0]
    zero_run = 0
    while t < horizon:
        kern = table.ensure_node(state)
        u = rng.random()
        probs = np.array([ch.p for ch in kern.exits])
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        slot = min(int(np.searchsorted(cum, u, side="right")), len(kern.exits) - 1)
        ch = kern.exits[slot]
        t += ch.t
        state = ch.node
        states.append(state)
        times.append(t)
        if ch.t == 0.0:
            zero_run += 1
            if zero_run > MAX_ZERO_STEPS:
                raise ZeroTimeLoop(f"{zero_run} zero-time steps at node {state}")
        else:
            zero_run = 0
    return Path(jump_times=np.array(times), states=np.array(states, dtype=np.int64),
                seed=rng_seed)


# ---------------------------------------------------------------------------
# vectorized ensemble engine
# ---------------------------------------------------------------------------

@dataclass
class EnsembleRun:
    """Raw vectorized output: marginal states and vertex occupation times."""

    n_paths: int
    horizon: float
    sample_times: tuple[float, ...]
    marginal_nodes: np.ndarray      # (n_times, n_paths) grid node ids
    vertex_time: np.ndarray         # (n_paths,) time spent at vertex nodes in [0, T]
    per_vertex_time: dict[int, float]
    total_steps: int


class _UniformBlocks:
    """Per-path uniform draws served column by column, refilled in blocks.

    Drawing a block consumes the path's stream exactly like repeated single
    draws, so vectorized sampling reproduces ``sample_path`` value for value.
    """

    def __init__(self, master_seed: int, n_paths: int, block: int = UNIFORM_BLOCK):
        self._gens = [path_rng(master_seed, pid) for pid in range(n_paths)]
        self._block = block
        self._buf = np.empty((n_paths, block))
        for i, g in enumerate(self._gens):
            self._buf[i] = g.random(block)
        self._col = 0

    def next_column(self) -> np.ndarray:
        if self._col == self._block:
            for i, g in enumerate(self._gens):
                self._buf[i] = g.random(self._block)
            self._col = 0
        col = self._buf[:, self._col]
        self._col += 1
        return col


def run_walks(table: KernelTable, init: InitialDistribution, horizon: float,
              sample_times, n_paths: int, master_seed: int) -> EnsembleRun:
    """Run n_paths walks in lockstep and record states at the sample times."""
    if n_paths < 1:
        raise InvariantError(f"need at least one path, got {n_paths}")
    if not horizon > 0:
        raise InvariantError(f"horizon must be positive, got {horizon}")
    _require_nse(table)
    s_times = tuple(float(t) for t in sample_times)
    if any(t < 0 or t > horizon for t in s_times):
        raise InvariantError(f"sample times {s_times} outside [0, {horizon}]")

    sub = table.subdivision
    uniforms = _UniformBlocks(master_seed, n_paths)
    cum0 = init.cumulative()
    support = np.array(init.support, dtype=np.int64)
    u0 = uniforms.next_column()
    states = support[np.minimum(np.searchsorted(cum0, u0, side="right"),
                                len(support) - 1)]
    times = np.zeros(n_paths)
    zero_run = np.zeros(n_paths, dtype=np.int64)
    records = np.full((len(s_times), n_paths), -1, dtype=np.int64)
    vertex_time = np.zeros(n_paths)
    per_vertex: dict[int, float] = {}
    total_steps = 0

    def vertex_of(nodes: np.ndarray) -> np.ndarray:
        # vertex nodes occupy ids 0 .. n_vertices-1 by construction
        return nodes < sub.graph.n_vertices

    active = times < horizon
    while np.any(active):
        packed = table.packed()
        idx = np.nonzero(active)[0]
        cur = states[idx]
        missing = ~packed.has_cell[cur]
        if np.any(missing):
            for node in np.unique(cur[missing]):
                table.ensure_node(int(node))
            packed = table.packed()
        u = uniforms.next_column()[idx]
        nxt, dt = packed.pick(cur, u)
        new_times = times[idx] + dt
        for k, s in enumerate(s_times):
            hit = (times[idx] <= s) & (new_times > s)
            records[k, idx[hit]] = cur[hit]
        at_vertex = vertex_of(cur)
        if np.any(at_vertex):
            held = np.minimum(new_times, horizon) - times[idx]
            contrib = np.where(at_vertex, held, 0.0)
            vertex_time[idx] += contrib
            for v in np.unique(cur[at_vertex]):
                per_vertex[int(v)] = per_vertex.get(int(v), 0.0) + float(
                    contrib[cur == v].sum()
                )
        zero = dt == 0.0
        zero_run[idx] = np.where(zero, zero_run[idx] + 1, 0)
        if np.any(zero_run[idx] > MAX_ZERO_STEPS):
            bad = idx[zero_run[idx] > MAX_ZERO_STEPS][0]
            raise ZeroTimeLoop(f"path {bad}: zero-time cycle at node {states[bad]}")
        times[idx] = new_times
        states[idx] = nxt
        total_steps += len(idx)
        active[idx] = new_times < horizon

    # a sample time equal to a path's final jump time records the entered state
    for k, s in enumerate(s_times):
        open_slots = records[k] < 0
        records[k, open_slots] = states[open_slots]
    return EnsembleRun(n_paths=n_paths, horizon=horizon, sample_times=s_times,
                       marginal_nodes=records, vertex_time=vertex_time,
                       per_vertex_time=per_vertex, total_steps=total_steps)


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------

def write_paths_csv(paths: list[Path], sub: Subdivision, out) -> None:
    """Rows (path_id, k, t, edge, coord); vertex states use their canonical point."""
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "k", "t", "edge", "coord"])
        for pid, p in enumerate(paths):
            for k, (t, node) in enumerate(zip(p.jump_times, p.states)):
                gp = sub.node_point(int(node))
                w.writerow([pid, k, f"{t:.17g}", gp.edge, f"{gp.coord:.17g}"])


def write_sample_matrix_csv(run: EnsembleRun, sub: Subdivision, out) -> None:
    """Rows (path_id, one edge:coord entry per sample time)."""
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id"] + [f"t={t:g}" for t in run.sample_times])
        for pid in range(run.n_paths):
            row = [pid]
            for k in range(len(run.sample_times)):
                gp = sub.node_point(int(run.marginal_nodes[k, pid]))
                row.append(f"{gp.edge}:{gp.coord:.17g}")
            w.writerow(row)
