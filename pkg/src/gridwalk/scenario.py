"""Declarative scenario files: graph, diffusion data, grid, kernel, run plan.

Scenarios are JSON with a schema_version field so experiment files stay
replayable.  Parsing validates structure (SchemaError, with the path of the
offending field) and every constructor invariant (InvariantError).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

from .diffusion import (
    DiffusionSpec,
    ScaleFn,
    SpeedMeasure,
    VertexCondition,
    lebesgue_speed,
    power_boundary_speed,
    power_shifted_speed,
    table_speed,
)
from .errors import SchemaError
from .graph import GraphPoint, MetricGraph, build_graph

SCHEMA_VERSION = 1

ARTIFACT_KINDS = ("subdivision", "kernel", "stats", "paths", "sample_matrix",
                  "convergence")


@dataclass(frozen=True)
class EdgeConfig:
    length: float
    tail: int
    head: int | None
    scale: tuple
    speed: tuple


@dataclass(frozen=True)
class VertexConfig:
    betas: dict[int, float]
    rho: float

    def __eq__(self, other):
        if not isinstance(other, VertexConfig):
            return NotImplemented
        return dict(self.betas) == dict(other.betas) and self.rho == other.rho

    def __hash__(self):
        return hash((tuple(sorted(self.betas.items())), self.rho))


@dataclass(frozen=True)
class GridConfig:
    mode: str = "uniform"
    h: float = 0.1
    vertex_radius: str | float = "h_squared"
    frontier: float = 10.0


@dataclass(frozen=True)
class KernelConfig:
    policy: str = "exact"
    quad_panels: int = 256


@dataclass(frozen=True)
class RunConfig:
    x0: tuple
    horizon: float
    n_paths: int
    sample_times: tuple[float, ...]
    master_seed: int


@dataclass(frozen=True)
class ConvergenceConfig:
    h_list: tuple[float, ...]
    n_paths: int
    grid_mode: str = "uniform"


@dataclass(frozen=True)
class OutputConfig:
    artifacts: tuple[str, ...] = ("subdivision", "kernel", "stats")


@dataclass(frozen=True)
class Scenario:
    schema_version: int
    edges: tuple[EdgeConfig, ...]
    vertices: tuple[VertexConfig, ...]
    grid: GridConfig
    kernel: KernelConfig
    run: RunConfig
    output: OutputConfig
    convergence: ConvergenceConfig | None = None


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _need(d: dict, key: str, kinds, path: str):
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing required field")
    val = d[key]
    if kinds is not None and not isinstance(val, kinds):
        raise SchemaError(f"{path}.{key}",
                          f"expected {kinds}, got {type(val).__name__}")
    return val


def _opt(d: dict, key: str, kinds, path: str, default):
    if key not in d:
        return default
    return _need(d, key, kinds, path)


def _parse_length(raw, path: str) -> float:
    if raw == "inf":
        return float("inf")
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    raise SchemaError(path, f"length must be a number or 'inf', got {raw!r}")


def _parse_scale(raw: dict, path: str) -> tuple:
    kind = _need(raw, "kind", str, path)
    if kind != "identity":
        raise SchemaError(f"{path}.kind", f"unknown scale kind {kind!r}")
    return ("identity",)


def _parse_speed(raw: dict, path: str) -> tuple:
    kind = _need(raw, "kind", str, path)
    if kind == "lebesgue":
        return ("lebesgue",)
    if kind == "power_shifted":
        eps = _need(raw, "epsilon", (int, float), path)
        power = _need(raw, "power", (int, float), path)
        return ("power_shifted", float(eps), float(power))
    if kind == "power_boundary":
        power = _need(raw, "power", (int, float), path)
        return ("power_boundary", float(power))
    if kind == "user_table":
        xs = _need(raw, "x", list, path)
        vals = _need(raw, "density", list, path)
        return ("user_table", tuple(float(v) for v in xs),
                tuple(float(v) for v in vals))
    raise SchemaError(f"{path}.kind", f"unknown speed kind {kind!r}")


def _parse_x0(raw: dict, path: str) -> tuple:
    if "vertex" in raw:
        return ("vertex", int(_need(raw, "vertex", int, path)))
    edge = _need(raw, "edge", int, path)
    coord = _need(raw, "coord", (int, float), path)
    return ("edge", int(edge), float(coord))


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("$", "top level must be an object")
    version = _need(raw, "schema_version", int, "$")
    if version != SCHEMA_VERSION:
        raise SchemaError("$.schema_version", f"unsupported version {version}")

    edges = []
    raw_edges = _need(raw, "edges", list, "$")
    if not raw_edges:
        raise SchemaError("$.edges", "at least one edge required")
    for i, re_ in enumerate(raw_edges):
        path = f"$.edges[{i}]"
        if not isinstance(re_, dict):
            raise SchemaError(path, "edge must be an object")
        head = _opt(re_, "head", int, path, None)
        edges.append(EdgeConfig(
            length=_parse_length(_need(re_, "length", None, path), f"{path}.length"),
            tail=int(_need(re_, "tail", int, path)),
            head=None if head is None else int(head),
            scale=_parse_scale(_opt(re_, "scale", dict, path, {"kind": "identity"}),
                               f"{path}.scale"),
            speed=_parse_speed(_need(re_, "speed", dict, path), f"{path}.speed"),
        ))

    vertices = []
    raw_vertices = _need(raw, "vertices", list, "$")
    for i, rv in enumerate(raw_vertices):
        path = f"$.vertices[{i}]"
        if not isinstance(rv, dict):
            raise SchemaError(path, "vertex must be an object")
        betas_raw = _need(rv, "betas", dict, path)
        try:
            betas = {int(k): float(v) for k, v in betas_raw.items()}
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}.betas", f"bad edge key or weight: {exc}")
        vertices.append(VertexConfig(
            betas=betas, rho=float(_opt(rv, "rho", (int, float), path, 0.0)),
        ))

    raw_grid = _opt(raw, "grid", dict, "$", {})
    mode = _opt(raw_grid, "mode", str, "$.grid", "uniform")
    if mode not in ("uniform", "adapted"):
        raise SchemaError("$.grid.mode", f"unknown mode {mode!r}")
    radius = _opt(raw_grid, "vertex_radius", (str, int, float), "$.grid", "h_squared")
    if isinstance(radius, str) and radius != "h_squared":
        raise SchemaError("$.grid.vertex_radius", f"unknown rule {radius!r}")
    grid = GridConfig(
        mode=mode,
        h=float(_need(raw_grid, "h", (int, float), "$.grid")),
        vertex_radius=radius if isinstance(radius, str) else float(radius),
        frontier=float(_opt(raw_grid, "frontier", (int, float), "$.grid", 10.0)),
    )

    raw_kernel = _opt(raw, "kernel", dict, "$", {})
    policy = _opt(raw_kernel, "policy", str, "$.kernel", "exact")
    if policy not in ("exact", "asymptotic"):
        raise SchemaError("$.kernel.policy", f"unknown policy {policy!r}")
    kernel = KernelConfig(
        policy=policy,
        quad_panels=int(_opt(raw_kernel, "quad_panels", int, "$.kernel", 256)),
    )

    raw_run = _need(raw, "run", dict, "$")
    sample_times = _need(raw_run, "sample_times", list, "$.run")
    run = RunConfig(
        x0=_parse_x0(_need(raw_run, "x0", dict, "$.run"), "$.run.x0"),
        horizon=float(_need(raw_run, "horizon", (int, float), "$.run")),
        n_paths=int(_need(raw_run, "n_paths", int, "$.run")),
        sample_times=tuple(float(t) for t in sample_times),
        master_seed=int(_need(raw_run, "master_seed", int, "$.run")),
    )
    if run.horizon <= 0:
        raise SchemaError("$.run.horizon", "horizon must be positive")
    if any(t < 0 or t > run.horizon for t in run.sample_times):
        raise SchemaError("$.run.sample_times", "times must lie in [0, horizon]")

    raw_out = _opt(raw, "output", dict, "$", {})
    artifacts = tuple(_opt(raw_out, "artifacts", list, "$.output",
                           ["subdivision", "kernel", "stats"]))
    for art in artifacts:
        if art not in ARTIFACT_KINDS:
            raise SchemaError("$.output.artifacts", f"unknown artifact {art!r}")
    output = OutputConfig(artifacts=artifacts)

    convergence = None
    if "convergence" in raw:
        raw_conv = _need(raw, "convergence", dict, "$")
        h_list = _need(raw_conv, "h_list", list, "$.convergence")
        conv_mode = _opt(raw_conv, "grid_mode", str, "$.convergence", "uniform")
        if conv_mode not in ("uniform", "adapted"):
            raise SchemaError("$.convergence.grid_mode", f"unknown mode {conv_mode!r}")
        convergence = ConvergenceConfig(
            h_list=tuple(float(h) for h in h_list),
            n_paths=int(_opt(raw_conv, "n_paths", int, "$.convergence", run.n_paths)),
            grid_mode=conv_mode,
        )

    sc = Scenario(schema_version=version, edges=tuple(edges), vertices=tuple(vertices),
                  grid=grid, kernel=kernel, run=run, output=output,
                  convergence=convergence)
    # surface invariant violations (bad betas, dangling vertices, ...) now
    build_spec(sc)
    return sc


def render_scenario(sc: Scenario) -> str:
    """Serialize a Scenario; parse(render(sc)) == sc."""
    doc: dict = {"schema_version": sc.schema_version}
    doc["edges"] = []
    for e in sc.edges:
        entry: dict = {"length": "inf" if e.length == float("inf") else e.length,
                       "tail": e.tail}
        if e.head is not None:
            entry["head"] = e.head
        entry["scale"] = {"kind": e.scale[0]}
        kind = e.speed[0]
        if kind == "lebesgue":
            entry["speed"] = {"kind": kind}
        elif kind == "power_shifted":
            entry["speed"] = {"kind": kind, "epsilon": e.speed[1], "power": e.speed[2]}
        elif kind == "power_boundary":
            entry["speed"] = {"kind": kind, "power": e.speed[1]}
        else:
            entry["speed"] = {"kind": kind, "x": list(e.speed[1]),
                              "density": list(e.speed[2])}
        doc["edges"].append(entry)
    doc["vertices"] = [
        {"betas": {str(k): v for k, v in sorted(vc.betas.items())}, "rho": vc.rho}
        for vc in sc.vertices
    ]
    doc["grid"] = {"mode": sc.grid.mode, "h": sc.grid.h,
                   "vertex_radius": sc.grid.vertex_radius,
                   "frontier": sc.grid.frontier}
    doc["kernel"] = {"policy": sc.kernel.policy,
                     "quad_panels": sc.kernel.quad_panels}
    x0 = sc.run.x0
    x0_doc = {"vertex": x0[1]} if x0[0] == "vertex" else {"edge": x0[1], "coord": x0[2]}
    doc["run"] = {"x0": x0_doc, "horizon": sc.run.horizon, "n_paths": sc.run.n_paths,
                  "sample_times": list(sc.run.sample_times),
                  "master_seed": sc.run.master_seed}
    doc["output"] = {"artifacts": list(sc.output.artifacts)}
    if sc.convergence is not None:
        doc["convergence"] = {"h_list": list(sc.convergence.h_list),
                              "n_paths": sc.convergence.n_paths,
                              "grid_mode": sc.convergence.grid_mode}
    return json.dumps(doc, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# building runtime objects from a scenario
# ---------------------------------------------------------------------------

def _speed_from_config(cfg: tuple, length: float) -> SpeedMeasure:
    kind = cfg[0]
    if kind == "lebesgue":
        return lebesgue_speed()
    if kind == "power_shifted":
        return power_shifted_speed(cfg[1], cfg[2])
    if kind == "power_boundary":
        return power_boundary_speed(length, cfg[1])
    if kind == "user_table":
        return table_speed(list(cfg[1]), list(cfg[2]))
    raise SchemaError("$.edges[*].speed.kind", f"unknown speed {kind!r}")


def build_graph_from(sc: Scenario) -> MetricGraph:
    return build_graph([(e.length, e.tail, e.head) for e in sc.edges])


def build_spec(sc: Scenario) -> DiffusionSpec:
    graph = build_graph_from(sc)
    scales = {e.id: ScaleFn.identity() for e in graph.edges}
    speeds = {i: _speed_from_config(e.speed, e.length)
              for i, e in enumerate(sc.edges)}
    conditions = {
        v: VertexCondition(betas=dict(sc.vertices[v].betas), rho=sc.vertices[v].rho)
        for v in range(graph.n_vertices)
    }
    if len(sc.vertices) != graph.n_vertices:
        raise SchemaError("$.vertices",
                          f"{graph.n_vertices} vertices in graph but "
                          f"{len(sc.vertices)} configured")
    return DiffusionSpec(graph=graph, scales=scales, speeds=speeds,
                         vertex_conditions=conditions)


def start_point(sc: Scenario, spec: DiffusionSpec) -> GraphPoint:
    x0 = sc.run.x0
    if x0[0] == "vertex":
        return spec.graph.vertex_point(x0[1])
    return GraphPoint(x0[1], x0[2])


def vertex_radius_value(sc: Scenario) -> float:
    if sc.grid.vertex_radius == "h_squared":
        return sc.grid.h ** 2
    return float(sc.grid.vertex_radius)


def bundled_scenario_text(name: str) -> str:
    """Text of a scenario shipped with the package (scenarios/<name>.json)."""
    ref = resources.files("gridwalk").joinpath(f"scenarios/{name}.json")
    return ref.read_text()


def with_overrides(sc: Scenario, seed: int | None = None,
                   quad_panels: int | None = None) -> Scenario:
    out = sc
    if seed is not None:
        out = replace(out, run=replace(out.run, master_seed=seed))
    if quad_panels is not None:
        out = replace(out, kernel=replace(out.kernel, quad_panels=quad_panels))
    return out
