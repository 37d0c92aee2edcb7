"""Analytical data of a diffusion on a metric graph.

Each edge carries a scale function and a speed measure; each vertex carries
bias weights over its incident edges and a stickiness coefficient.  Together
these determine the process uniquely, and everything the transition-kernel
module needs is expressed through them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    IntervalOutOfRange,
    InvariantError,
    NonFiniteDensity,
    NotIncident,
)
from .graph import EdgeId, MetricGraph, VertexId

DEFAULT_QUAD_PANELS = 256

BETA_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# scales
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleFn:
    """Strictly increasing edge scale with s(0) = 0.

    ``deriv0`` is the right-derivative at 0, needed by the vertex formulas.
    ``is_identity`` marks the natural-scale case where everything simplifies
    and sampling is allowed.
    """

    fn: Callable[[float], float]
    deriv0: float
    is_identity: bool = False
    catalog: tuple | None = None

    def __call__(self, x):
        return self.fn(x)

    @staticmethod
    def identity() -> "ScaleFn":
        return ScaleFn(fn=lambda x: x, deriv0=1.0, is_identity=True,
                       catalog=("identity",))

    @staticmethod
    def from_callable(fn: Callable[[float], float], deriv0: float) -> "ScaleFn":
        # deriv0 = 0 is tolerated for edge-interior use; vertex formulas then
        # assign the edge zero weight
        if not (deriv0 >= 0 and math.isfinite(deriv0)):
            raise InvariantError(f"scale derivative at 0 must be >= 0, got {deriv0}")
        if abs(fn(0.0)) > 1e-12:
            raise InvariantError("scale must satisfy s(0) = 0")
        return ScaleFn(fn=fn, deriv0=float(deriv0), is_identity=False)


# ---------------------------------------------------------------------------
# speed measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedMeasure:
    """Speed measure given by a positive density plus finitely many atoms.

    ``density`` must accept numpy arrays.  Atoms are (position, mass) pairs
    strictly inside the edge; stickiness at vertices lives in the vertex
    condition, never in atoms.
    """

    density: Callable[[np.ndarray], np.ndarray]
    atoms: tuple[tuple[float, float], ...] = ()
    catalog: tuple | None = None

    def __post_init__(self):
        for pos, mass in self.atoms:
            if not mass > 0:
                raise InvariantError(f"atom at {pos} has non-positive mass {mass}")

    def density_at(self, x) -> np.ndarray:
        return np.asarray(self.density(np.asarray(x, dtype=float)), dtype=float)

    def atoms_in(self, a: float, b: float) -> list[tuple[float, float]]:
        """Atoms with position strictly inside the open interval (a, b)."""
        return [(p, m) for (p, m) in self.atoms if a < p < b]

    def mass(self, a: float, b: float, n_panels: int = DEFAULT_QUAD_PANELS) -> float:
        """m((a, b)) by composite trapezoid on the density, exact on atoms."""
        if not a < b:
            raise IntervalOutOfRange(f"need a < b, got ({a}, {b})")
        xs = np.linspace(a, b, n_panels + 1)
        dens = self.density_at(xs)
        if not np.all(np.isfinite(dens)):
            bad = xs[~np.isfinite(dens)][0]
            raise NonFiniteDensity(f"density non-finite at x = {bad}")
        total = float(np.trapezoid(dens, xs))
        total += sum(m for _, m in self.atoms_in(a, b))
        return total


def _as_array_fn(f: Callable[[float], float]) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: f(x) * np.ones_like(np.asarray(x, dtype=float))


def lebesgue_speed() -> SpeedMeasure:
    return SpeedMeasure(density=lambda x: np.ones_like(np.asarray(x, dtype=float)),
                        catalog=("lebesgue",))


def power_shifted_speed(epsilon: float, power: float,
                        atoms: tuple[tuple[float, float], ...] = ()) -> SpeedMeasure:
    """Density 1 / (epsilon + x)^power; the heavy-near-vertex family."""
    if not epsilon > 0:
        raise InvariantError(f"epsilon must be positive, got {epsilon}")
    return SpeedMeasure(
        density=lambda x, e=epsilon, p=power: (e + np.asarray(x, dtype=float)) ** (-p),
        atoms=atoms,
        catalog=("power_shifted", epsilon, power),
    )


def power_boundary_speed(length: float, power: float,
                         atoms: tuple[tuple[float, float], ...] = ()) -> SpeedMeasure:
    """Density 1 / (length - x)^power; blows up toward the open endpoint."""
    if not (length > 0 and math.isfinite(length)):
        raise InvariantError(f"boundary density needs a finite length, got {length}")
    return SpeedMeasure(
        density=lambda x, l=length, p=power: (l - np.asarray(x, dtype=float)) ** (-p),
        atoms=atoms,
        catalog=("power_boundary", length, power),
    )


def table_speed(xs: list[float], values: list[float]) -> SpeedMeasure:
    """Piecewise-linear density through (x, m') samples."""
    xs_a = np.asarray(xs, dtype=float)
    vs_a = np.asarray(values, dtype=float)
    if xs_a.ndim != 1 or xs_a.shape != vs_a.shape or len(xs_a) < 2:
        raise InvariantError("user table needs matching 1-d x and density arrays")
    if np.any(np.diff(xs_a) <= 0):
        raise InvariantError("user table abscissae must be strictly increasing")
    if np.any(vs_a <= 0):
        raise InvariantError("user table densities must be positive")
    return SpeedMeasure(
        density=lambda x: np.interp(np.asarray(x, dtype=float), xs_a, vs_a),
        catalog=("user_table", tuple(map(float, xs_a)), tuple(map(float, vs_a))),
    )


SPEED_CATALOG = {
    "lebesgue": lebesgue_speed,
    "power_shifted": power_shifted_speed,
    "power_boundary": power_boundary_speed,
    "user_table": table_speed,
}


# ---------------------------------------------------------------------------
# vertex conditions and the full spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VertexCondition:
    """Bias weights over incident edges plus stickiness coefficient."""

    betas: dict[EdgeId, float]
    rho: float = 0.0

    def __post_init__(self):
        if not self.betas:
            raise InvariantError("vertex condition needs at least one edge weight")
        for e, b in self.betas.items():
            if not b > 0:
                raise InvariantError(f"beta for edge {e} must be positive, got {b}")
        total = sum(self.betas.values())
        if abs(total - 1.0) > BETA_SUM_TOL:
            raise InvariantError(f"betas must sum to 1, got {total!r}")
        if self.rho < 0:
            raise InvariantError(f"rho must be nonnegative, got {self.rho}")


@dataclass(frozen=True)
class DiffusionSpec:
    """Graph plus per-edge (scale, speed) and per-vertex lateral data."""

    graph: MetricGraph
    scales: dict[EdgeId, ScaleFn]
    speeds: dict[EdgeId, SpeedMeasure]
    vertex_conditions: dict[VertexId, VertexCondition]

    def __post_init__(self):
        g = self.graph
        edge_ids = {e.id for e in g.edges}
        if set(self.scales) != edge_ids or set(self.speeds) != edge_ids:
            raise InvariantError("need exactly one (scale, speed) pair per edge")
        if set(self.vertex_conditions) != set(range(g.n_vertices)):
            raise InvariantError("need exactly one vertex condition per vertex")
        for v, cond in self.vertex_conditions.items():
            e_in, e_out = g.incident_edges(v)
            if set(cond.betas) != set(e_in) | set(e_out):
                raise InvariantError(
                    f"vertex {v}: betas keyed by {sorted(cond.betas)} but incident "
                    f"edges are {sorted(set(e_in) | set(e_out))}"
                )

    @property
    def is_nse(self) -> bool:
        """Every edge on natural scale (identity scale function)."""
        return all(s.is_identity for s in self.scales.values())


def reoriented(spec: DiffusionSpec, v: VertexId, e: EdgeId) -> tuple[ScaleFn, SpeedMeasure]:
    """Scale and speed of edge e as seen from vertex v.

    Outward edges are returned unchanged.  Inward edges are reflected so the
    local coordinate runs away from v, with the scale re-anchored at 0:
    s_hat(u) = s(l) - s(l - u), density m_hat'(u) = m'(l - u).
    """
    edge = spec.graph.edge(e)
    e_in, e_out = spec.graph.incident_edges(v)
    if e in e_out:
        return spec.scales[e], spec.speeds[e]
    if e not in e_in:
        raise NotIncident(f"edge {e} is not incident to vertex {v}")
    length = edge.length
    s, m = spec.scales[e], spec.speeds[e]
    s_total = s(length)
    flipped = ScaleFn(
        fn=lambda u, st=s_total, l=length: st - s.fn(l - u),
        deriv0=_left_derivative(s, length),
        is_identity=s.is_identity,
    )
    reflected = SpeedMeasure(
        density=lambda u, l=length: m.density_at(l - np.asarray(u, dtype=float)),
        atoms=tuple((length - p, mass) for p, mass in m.atoms),
    )
    return flipped, reflected


def _left_derivative(s: ScaleFn, x: float) -> float:
    if s.is_identity:
        return 1.0
    h = max(1e-7, 1e-7 * abs(x))
    return (s(x) - s(x - h)) / h


def speed_mass(spec: DiffusionSpec, e: EdgeId, a: float, b: float,
               n_panels: int = DEFAULT_QUAD_PANELS) -> float:
    """Mass of the open interval (a, b) on edge e under the speed measure."""
    edge = spec.graph.edge(e)
    if not (0 <= a < b <= edge.length):
        raise IntervalOutOfRange(
            f"interval ({a}, {b}) not inside [0, {edge.length}] on edge {e}"
        )
    return spec.speeds[e].mass(a, b, n_panels=n_panels)


# ---------------------------------------------------------------------------
# speed lower-bound report (advisory)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpeedBoundViolation:
    vertex: VertexId | None
    edge: EdgeId
    reoriented: bool
    y: float
    density: float
    bound: float


@dataclass(frozen=True)
class SpeedBoundReport:
    k1: float
    k2: float
    n_samples: int
    violations: tuple[SpeedBoundViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def check_speed_lower_bound(spec: DiffusionSpec, k1: float, k2: float = 0.0,
                            n_samples: int = 200, y_max: float = 1e3) -> SpeedBoundReport:
    """Sample-test the lower bound m'(y) >= k1 / (1 + k2 y^2).

    Both the plain edge densities and every vertex-reoriented view are
    sampled on a log-spaced grid.  This is a report, not a proof: it only
    flags observed violations.
    """
    if not k1 > 0:
        raise InvariantError(f"k1 must be positive, got {k1}")
    violations: list[SpeedBoundViolation] = []

    def scan(measure: SpeedMeasure, limit: float, edge: EdgeId,
             vertex: VertexId | None, flipped: bool):
        hi = min(limit, y_max)
        ys = np.geomspace(min(1e-6, hi / 10), hi * (1 - 1e-9), n_samples)
        dens = measure.density_at(ys)
        bound = k1 / (1.0 + k2 * ys**2)
        bad = dens < bound * (1 - 1e-12)
        for y, d, bd in zip(ys[bad], dens[bad], bound[bad]):
            violations.append(SpeedBoundViolation(vertex, edge, flipped,
                                                  float(y), float(d), float(bd)))

    for e in spec.graph.edges:
        scan(spec.speeds[e.id], e.length, e.id, None, False)
    for v in range(spec.graph.n_vertices):
        e_in, e_out = spec.graph.incident_edges(v)
        for e in list(e_in) + list(e_out):
            _, m_hat = reoriented(spec, v, e)
            scan(m_hat, spec.graph.edge(e).length, e, v, True)
    return SpeedBoundReport(k1=k1, k2=k2, n_samples=n_samples,
                            violations=tuple(violations))
