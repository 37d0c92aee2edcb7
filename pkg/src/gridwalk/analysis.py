"""Ensemble statistics over sampled walks.

Marginals at the sample times are summarized per edge (histogram, kernel
density estimate, sample count) plus a pooled vertex count; vertex occupation
is time-weighted over the run horizon.  Ensembles on different grids are
compared through a marginal distance that mixes total variation across edges
with a one-dimensional transport distance along each shared edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .diffusion import DiffusionSpec
from .errors import InvariantError, TimeNotSampled, TooFewSamples
from .graph import GraphPoint
from .kernel import KernelTable, build_kernel_table
from .sampler import EnsembleRun, initial_distribution_extending, run_walks
from .subdivision import Subdivision, adapted_subdivision, uniform_subdivision

DEFAULT_HIST_BINS = 40
DEFAULT_KDE_POINTS = 512
VERTEX = -1  # edge id used for samples sitting at a graph vertex


# ---------------------------------------------------------------------------
# kernel density estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


def silverman_bandwidth(samples: np.ndarray) -> float:
    n = len(samples)
    sigma = float(np.std(samples, ddof=1))
    q75, q25 = np.percentile(samples, [75, 25])
    iqr = float(q75 - q25)
    candidates = [c for c in (sigma, iqr / 1.34) if c > 0]
    if not candidates:
        # degenerate sample cloud; a token width keeps the curve finite
        return max(1e-3, 1e-3 * abs(float(samples[0])))
    return 0.9 * min(candidates) * n ** (-0.2)


def kde(samples, bandwidth="silverman", grid_points: int = DEFAULT_KDE_POINTS,
        lower_boundary: float | None = None) -> KdeCurve:
    """Gaussian kernel density estimate on an evaluation grid.

    ``bandwidth`` is Silverman's rule by default, or a fixed float, or a
    callable on the samples.  ``lower_boundary`` reflects mass at a hard
    lower edge (used for edge-coordinate samples, which live on [0, len)).
    """
    xs = np.asarray(samples, dtype=float)
    if xs.ndim != 1 or len(xs) < 2:
        raise TooFewSamples(f"kde needs at least 2 samples, got {xs.size}")
    if bandwidth == "silverman":
        bw = silverman_bandwidth(xs)
    elif callable(bandwidth):
        bw = float(bandwidth(xs))
    else:
        bw = float(bandwidth)
    if not bw > 0:
        raise InvariantError(f"bandwidth must be positive, got {bw}")
    lo = float(xs.min()) - 4.0 * bw
    hi = float(xs.max()) + 4.0 * bw
    if lower_boundary is not None:
        lo = lower_boundary
    grid = np.linspace(lo, hi, grid_points)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * bw * len(xs))
    dens = np.zeros_like(grid)
    chunk = 4096
    for start in range(0, len(xs), chunk):
        block = xs[start:start + chunk]
        z = (grid[:, None] - block[None, :]) / bw
        dens += norm * np.exp(-0.5 * z * z).sum(axis=1)
        if lower_boundary is not None:
            zr = (grid[:, None] - (2.0 * lower_boundary - block)[None, :]) / bw
            dens += norm * np.exp(-0.5 * zr * zr).sum(axis=1)
    return KdeCurve(grid=grid, density=dens, bandwidth=bw)


# ---------------------------------------------------------------------------
# ensemble statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeMarginal:
    edge: int
    count: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    kde: KdeCurve | None


@dataclass(frozen=True)
class TimeMarginal:
    t: float
    edge_ids: np.ndarray    # (n_paths,), VERTEX for samples at a vertex
    coords: np.ndarray      # (n_paths,), edge coordinate (0 at a vertex)
    edges: dict[int, EdgeMarginal]
    vertex_count: int


@dataclass(frozen=True)
class EnsembleStats:
    n_paths: int
    horizon: float
    sample_times: tuple[float, ...]
    marginals: tuple[TimeMarginal, ...]
    vertex_fraction: float
    per_vertex_fraction: dict[int, float]
    master_seed: int

    def time_index(self, t: float) -> int:
        for i, s in enumerate(self.sample_times):
            if math.isclose(s, t, rel_tol=1e-12, abs_tol=1e-12):
                return i
        raise TimeNotSampled(f"time {t} not among {self.sample_times}")

    def marginal_at(self, t: float) -> TimeMarginal:
        return self.marginals[self.time_index(t)]

    def to_json_dict(self) -> dict:
        times = []
        for m in self.marginals:
            edges = {}
            for e, em in sorted(m.edges.items()):
                entry = {
                    "count": int(em.count),
                    "hist": {
                        "bin_edges": [float(x) for x in em.hist_edges],
                        "counts": [int(c) for c in em.hist_counts],
                    },
                }
                if em.kde is not None:
                    entry["kde"] = {
                        "grid": [float(x) for x in em.kde.grid],
                        "density": [float(x) for x in em.kde.density],
                        "bandwidth": float(em.kde.bandwidth),
                    }
                edges[str(e)] = entry
            times.append({"t": float(m.t), "edges": edges,
                          "vertex_count": int(m.vertex_count)})
        return {
            "schema_version": 1,
            "n_paths": int(self.n_paths),
            "horizon": float(self.horizon),
            "sample_times": [float(t) for t in self.sample_times],
            "master_seed": int(self.master_seed),
            "times": times,
            "vertex_fraction": float(self.vertex_fraction),
            "per_vertex_fraction": {str(v): float(f)
                                    for v, f in sorted(self.per_vertex_fraction.items())},
        }


def _node_lookup(sub: Subdivision) -> tuple[np.ndarray, np.ndarray]:
    edges = np.full(sub.n_nodes, VERTEX, dtype=np.int64)
    coords = np.zeros(sub.n_nodes)
    for n in sub.nodes:
        if not n.is_vertex:
            edges[n.id] = n.edge
            coords[n.id] = n.coord
    return edges, coords


def summarize_run(sub: Subdivision, run: EnsembleRun, master_seed: int,
                  hist_bins: int = DEFAULT_HIST_BINS,
                  kde_points: int = DEFAULT_KDE_POINTS,
                  kde_boundary: float | None = 0.0) -> EnsembleStats:
    """Aggregate a raw vectorized run into per-time, per-edge statistics."""
    node_edge, node_coord = _node_lookup(sub)
    marginals = []
    for k, t in enumerate(run.sample_times):
        nodes = run.marginal_nodes[k]
        edge_ids = node_edge[nodes]
        coords = node_coord[nodes]
        edges: dict[int, EdgeMarginal] = {}
        for e in sorted(int(x) for x in np.unique(edge_ids) if x != VERTEX):
            vals = coords[edge_ids == e]
            top = float(vals.max()) if vals.size else 1.0
            hist_counts, hist_edges = np.histogram(
                vals, bins=hist_bins, range=(0.0, max(top, 1e-12))
            )
            curve = None
            if vals.size >= 2:
                curve = kde(vals, "silverman", kde_points, lower_boundary=kde_boundary)
            edges[e] = EdgeMarginal(edge=e, count=int(vals.size),
                                    hist_edges=hist_edges, hist_counts=hist_counts,
                                    kde=curve)
        vertex_count = int(np.sum(edge_ids == VERTEX))
        if vertex_count + sum(em.count for em in edges.values()) != run.n_paths:
            raise InvariantError("per-time counts do not add up to n_paths")
        marginals.append(TimeMarginal(t=t, edge_ids=edge_ids, coords=coords,
                                      edges=edges, vertex_count=vertex_count))
    per_vertex = {v: tot / (run.n_paths * run.horizon)
                  for v, tot in sorted(run.per_vertex_time.items())}
    return EnsembleStats(
        n_paths=run.n_paths, horizon=run.horizon, sample_times=run.sample_times,
        marginals=tuple(marginals),
        vertex_fraction=float(run.vertex_time.mean() / run.horizon),
        per_vertex_fraction=per_vertex, master_seed=master_seed,
    )


def run_ensemble(spec: DiffusionSpec, sub: Subdivision, table: KernelTable,
                 x0: GraphPoint, horizon: float, n_paths: int, sample_times,
                 master_seed: int, hist_bins: int = DEFAULT_HIST_BINS,
                 kde_points: int = DEFAULT_KDE_POINTS,
                 kde_boundary: float | None = 0.0) -> EnsembleStats:
    """Sample n_paths walks from x0 and summarize their marginals."""
    init = initial_distribution_extending(table, x0)
    run = run_walks(table, init, horizon, sample_times, n_paths, master_seed)
    return summarize_run(sub, run, master_seed, hist_bins, kde_points, kde_boundary)


# ---------------------------------------------------------------------------
# marginal distance and self-convergence
# ---------------------------------------------------------------------------

def marginal_distance(a: EnsembleStats, b: EnsembleStats, t: float) -> float:
    """Distance between two empirical time-t marginals.

    Total variation across edge/vertex frequencies plus, per shared edge, the
    overlapping frequency times the one-dimensional order-statistics
    transport distance of the edge-coordinate samples.  Zero exactly when the
    empirical marginals coincide.
    """
    ma = a.marginal_at(t)
    mb = b.marginal_at(t)
    cats = sorted(set(ma.edges) | set(mb.edges) | {VERTEX})
    dist = 0.0
    for c in cats:
        if c == VERTEX:
            fa = ma.vertex_count / a.n_paths
            fb = mb.vertex_count / b.n_paths
            dist += abs(fa - fb)
            continue
        fa = ma.edges[c].count / a.n_paths if c in ma.edges else 0.0
        fb = mb.edges[c].count / b.n_paths if c in mb.edges else 0.0
        dist += abs(fa - fb)
        overlap = min(fa, fb)
        if overlap > 0:
            xs = ma.coords[ma.edge_ids == c]
            ys = mb.coords[mb.edge_ids == c]
            dist += overlap * float(wasserstein_distance(xs, ys))
    return dist


@dataclass(frozen=True)
class ConvergenceReport:
    h: tuple[float, ...]
    distances: tuple[float, ...]
    slope: float
    degenerate: bool

    def to_json_dict(self) -> dict:
        return {
            "h": [float(x) for x in self.h],
            "distance": [float(d) for d in self.distances],
            "slope": float(self.slope) if math.isfinite(self.slope) else None,
            "degenerate": bool(self.degenerate),
        }


def self_convergence(spec: DiffusionSpec, x0: GraphPoint, horizon: float,
                     h_list, n_paths: int, master_seed: int,
                     grid_mode: str = "uniform", policy: str = "exact",
                     n_panels: int = 256, frontier: float = 10.0) -> ConvergenceReport:
    """Distance of each grid's time-T marginal to the finest grid's marginal.

    The fitted log-log slope is the empirical convergence order; it comes
    back NaN (with the degenerate flag) when the grids coincide or a
    distance vanishes.
    """
    hs = [float(h) for h in h_list]
    if len(hs) < 3:
        raise InvariantError(f"need at least 3 grid steps, got {len(hs)}")
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        if len(set(hs)) > 1:
            raise InvariantError(f"grid steps must decrease, got {hs}")
    builder = uniform_subdivision if grid_mode == "uniform" else adapted_subdivision
    stats = []
    for h in hs:
        sub = builder(spec, h, frontier=frontier)
        table = build_kernel_table(spec, sub, policy=policy, n_panels=n_panels)
        stats.append(run_ensemble(spec, sub, table, x0, horizon, n_paths,
                                  [horizon], master_seed))
    finest = stats[-1]
    dists = [marginal_distance(s, finest, horizon) for s in stats[:-1]]
    coarse_h = hs[:-1]
    degenerate = (len(set(hs)) < 2 or any(d <= 0 for d in dists)
                  or len(set(coarse_h)) < 2)
    if degenerate:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(coarse_h), np.log(dists), 1)[0])
    return ConvergenceReport(h=tuple(hs), distances=tuple(dists), slope=slope,
                             degenerate=degenerate)
