"""Metric graph construction and geodesic distance."""
from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gridwalk as gw
from gridwalk.errors import (
    DanglingVertexReference,
    InvalidPoint,
    NonPositiveLength,
    UnknownVertex,
)
from gridwalk.graph import GraphPoint, build_graph


def test_star_graph_build_and_incidence():
    g = build_graph([(float("inf"), 0, None)] * 3)
    assert g.n_vertices == 1
    e_in, e_out = g.incident_edges(0)
    assert e_in == [] and e_out == [0, 1, 2]


def test_interval_graph_incidence():
    g = build_graph([(1.0, 0, 1)])
    assert g.incident_edges(1) == ([0], [])
    assert g.incident_edges(0) == ([], [0])


def test_zero_length_rejected():
    with pytest.raises(NonPositiveLength):
        build_graph([(0.0, 0, 1)])


def test_loop_rejected():
    with pytest.raises(DanglingVertexReference):
        build_graph([(1.0, 0, 0)])


def test_unreferenced_vertex_rejected():
    with pytest.raises(DanglingVertexReference):
        build_graph([(1.0, 0, 3)])


def test_unknown_vertex():
    g = build_graph([(1.0, 0, 1)])
    with pytest.raises(UnknownVertex):
        g.incident_edges(7)


def test_star_distances_match_closed_form():
    g = build_graph([(float("inf"), 0, None)] * 3)
    assert g.geodesic_distance(GraphPoint(1, 0.3), GraphPoint(1, 0.8)) == pytest.approx(0.5)
    assert g.geodesic_distance(GraphPoint(1, 0.3), GraphPoint(2, 0.4)) == pytest.approx(0.7)
    # the central vertex under either representation
    assert g.geodesic_distance(GraphPoint(1, 0.0), GraphPoint(2, 0.0)) == 0.0
    assert g.points_equal(GraphPoint(1, 0.0), GraphPoint(2, 0.0))


def test_single_edge_distance_is_coordinate_gap():
    g = build_graph([(2.0, 0, 1)])
    assert g.geodesic_distance(GraphPoint(0, 0.25), GraphPoint(0, 1.5)) == pytest.approx(1.25)


def test_distance_routes_through_vertices():
    # path graph 0 -1- 2 with unit edges; distance across the middle vertex
    g = build_graph([(1.0, 0, 1), (1.0, 1, 2)])
    d = g.geodesic_distance(GraphPoint(0, 0.25), GraphPoint(1, 0.5))
    assert d == pytest.approx(0.75 + 0.5)


def test_open_endpoint_is_not_a_point():
    g = build_graph([(1.0, 0, None)])
    with pytest.raises(InvalidPoint):
        g.validate_point(GraphPoint(0, 1.0))
    g.validate_point(GraphPoint(0, 1.0 - 1e-9))


@st.composite
def path_graph_points(draw):
    n_edges = draw(st.integers(2, 5))
    lengths = [draw(st.floats(0.5, 3.0)) for _ in range(n_edges)]
    # chain plus one extra leg at vertex 0 makes branching cases
    edges = [(lengths[i], i, i + 1) for i in range(n_edges)]
    edges.append((draw(st.floats(0.5, 2.0)), 0, None))
    g = build_graph(edges)
    pts = []
    for _ in range(3):
        e = draw(st.integers(0, n_edges))
        frac = draw(st.floats(0.0, 0.99))
        pts.append(GraphPoint(e, frac * edges[e][0]))
    return g, pts


@given(path_graph_points())
@settings(max_examples=60, deadline=None)
def test_geodesic_is_a_metric(data):
    g, (p, q, r) = data
    dpq = g.geodesic_distance(p, q)
    dqp = g.geodesic_distance(q, p)
    assert dpq >= 0
    assert dpq == pytest.approx(dqp, abs=1e-12)
    dpr = g.geodesic_distance(p, r)
    drq = g.geodesic_distance(r, q)
    assert dpq <= dpr + drq + 1e-9
    if g.points_equal(p, q):
        assert dpq == 0.0


def test_infinite_edge_never_routes_around():
    g = build_graph([(float("inf"), 0, None), (float("inf"), 0, None)])
    assert g.geodesic_distance(GraphPoint(0, 3.0), GraphPoint(1, 4.0)) == pytest.approx(7.0)
    assert math.isinf(g.edges[0].length)
