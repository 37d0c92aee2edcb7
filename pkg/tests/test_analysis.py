"""Ensemble statistics, KDE, marginal distance, self-convergence."""
from __future__ import annotations

import numpy as np
import pytest
from scipy import stats as sps

import gridwalk as gw
from gridwalk.analysis import (
    EdgeMarginal,
    EnsembleStats,
    TimeMarginal,
    kde,
    marginal_distance,
    run_ensemble,
    self_convergence,
)
from gridwalk.errors import TimeNotSampled, TooFewSamples
from gridwalk.graph import GraphPoint
from gridwalk.kernel import build_kernel_table
from gridwalk.subdivision import uniform_subdivision

from conftest import interval_spec, mixed_speeds_spec, walsh_spec


# ---------------------------------------------------------------------------
# kde
# ---------------------------------------------------------------------------

def test_kde_two_samples_symmetric_bimodal():
    curve = kde([0.0, 1.0], bandwidth=0.1)
    total = np.trapezoid(curve.density, curve.grid)
    assert total == pytest.approx(1.0, abs=1e-3)
    # symmetric about 0.5: density at x equals density at 1 - x
    flipped = np.interp(1.0 - curve.grid, curve.grid, curve.density)
    assert np.allclose(curve.density, flipped, atol=1e-9)
    interior = (curve.grid > 0.2) & (curve.grid < 0.8)
    assert curve.density[interior].min() < 0.5 * curve.density.max()


def test_kde_identical_samples_single_bump():
    curve = kde([0.7] * 50)
    peak = curve.grid[np.argmax(curve.density)]
    assert peak == pytest.approx(0.7, abs=0.01)
    assert np.trapezoid(curve.density, curve.grid) == pytest.approx(1.0, abs=1e-3)


def test_kde_too_few_samples():
    with pytest.raises(TooFewSamples):
        kde([1.0])


def test_kde_half_normal_with_boundary_reflection():
    rng = np.random.default_rng(12345)
    samples = np.abs(rng.standard_normal(10_000))
    curve = kde(samples, bandwidth="silverman", lower_boundary=0.0)
    truth = sps.halfnorm.pdf(curve.grid)
    assert np.max(np.abs(curve.density - truth)) <= 0.05


# ---------------------------------------------------------------------------
# marginal distance
# ---------------------------------------------------------------------------

def _point_mass_stats(edge: int, coord: float) -> EnsembleStats:
    edge_ids = np.array([edge])
    coords = np.array([coord])
    em = EdgeMarginal(edge=edge, count=1, hist_edges=np.array([0.0, coord + 1.0]),
                      hist_counts=np.array([1]), kde=None)
    tm = TimeMarginal(t=1.0, edge_ids=edge_ids, coords=coords,
                      edges={edge: em}, vertex_count=0)
    return EnsembleStats(n_paths=1, horizon=1.0, sample_times=(1.0,),
                         marginals=(tm,), vertex_fraction=0.0,
                         per_vertex_fraction={}, master_seed=0)


def test_marginal_distance_identity_zero():
    a = _point_mass_stats(0, 0.4)
    assert marginal_distance(a, a, 1.0) == 0.0


def test_marginal_distance_point_masses_same_edge():
    a = _point_mass_stats(0, 0.4)
    b = _point_mass_stats(0, 0.9)
    assert marginal_distance(a, b, 1.0) == pytest.approx(0.5)
    assert marginal_distance(b, a, 1.0) == pytest.approx(0.5)


def test_marginal_distance_disjoint_edges_saturates():
    a = _point_mass_stats(0, 0.4)
    b = _point_mass_stats(1, 0.4)
    assert marginal_distance(a, b, 1.0) == pytest.approx(2.0)


def test_marginal_distance_requires_shared_time():
    a = _point_mass_stats(0, 0.4)
    with pytest.raises(TimeNotSampled):
        marginal_distance(a, a, 0.5)


# ---------------------------------------------------------------------------
# run_ensemble
# ---------------------------------------------------------------------------

def _walsh_setup(h=0.1, frontier=3.0, rho=0.0):
    spec = walsh_spec(3, rho=rho)
    sub = uniform_subdivision(spec, h, frontier=frontier)
    table = build_kernel_table(spec, sub)
    return spec, sub, table


def test_run_ensemble_single_path():
    spec, sub, table = _walsh_setup()
    stats = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 1,
                         [0.5, 1.0], master_seed=3)
    for m in stats.marginals:
        assert m.vertex_count + sum(em.count for em in m.edges.values()) == 1


def test_run_ensemble_counts_and_determinism():
    spec, sub, table = _walsh_setup()
    stats1 = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 2000,
                          [1.0], master_seed=77)
    stats2 = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 2000,
                          [1.0], master_seed=77)
    assert stats1.to_json_dict() == stats2.to_json_dict()
    m = stats1.marginal_at(1.0)
    counts = [m.edges[e].count for e in sorted(m.edges)]
    assert sum(counts) + m.vertex_count == 2000
    sigma = np.sqrt((1 / 3) * (2 / 3) / 2000)
    for c in counts:
        assert abs(c / 2000 - 1 / 3) <= 4 * sigma


def test_run_ensemble_sticky_fraction_larger():
    spec0, sub0, table0 = _walsh_setup(h=0.1, rho=0.0)
    stats0 = run_ensemble(spec0, sub0, table0, spec0.graph.vertex_point(0), 1.0, 400,
                          [1.0], master_seed=5)
    spec1, sub1, table1 = _walsh_setup(h=0.1, rho=1.0)
    stats1 = run_ensemble(spec1, sub1, table1, spec1.graph.vertex_point(0), 1.0, 400,
                          [1.0], master_seed=5)
    assert stats1.vertex_fraction > stats0.vertex_fraction
    assert stats1.vertex_fraction > 0


def test_stats_json_roundtrippable(tmp_path):
    import json

    spec, sub, table = _walsh_setup()
    stats = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 50,
                         [1.0], master_seed=5)
    doc = stats.to_json_dict()
    text = json.dumps(doc, sort_keys=True)
    assert json.loads(text) == json.loads(text)
    edges = doc["times"][0]["edges"]
    for entry in edges.values():
        if "kde" in entry:
            dens = np.array(entry["kde"]["density"])
            grid = np.array(entry["kde"]["grid"])
            assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def test_marginal_distance_on_real_ensembles_symmetry():
    spec, sub, table = _walsh_setup()
    a = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 500,
                     [1.0], master_seed=1)
    b = run_ensemble(spec, sub, table, spec.graph.vertex_point(0), 1.0, 500,
                     [1.0], master_seed=2)
    dab = marginal_distance(a, b, 1.0)
    dba = marginal_distance(b, a, 1.0)
    assert dab == pytest.approx(dba, rel=1e-12)
    assert dab >= 0
    assert marginal_distance(a, a, 1.0) == 0.0


# ---------------------------------------------------------------------------
# self-convergence
# ---------------------------------------------------------------------------

def test_self_convergence_identical_grids_degenerate():
    spec = interval_spec()
    rep = self_convergence(spec, GraphPoint(0, 0.5), 1.0, [0.1, 0.1, 0.1],
                           n_paths=200, master_seed=9)
    assert rep.degenerate
    assert np.isnan(rep.slope)


def test_self_convergence_requires_enough_grids():
    spec = interval_spec()
    with pytest.raises(gw.errors.InvariantError):
        self_convergence(spec, GraphPoint(0, 0.5), 1.0, [0.2, 0.1],
                         n_paths=100, master_seed=9)


def test_self_convergence_positive_slope_quick():
    spec = interval_spec()
    rep = self_convergence(spec, GraphPoint(0, 0.5), 1.0, [0.2, 0.1, 0.05],
                           n_paths=4000, master_seed=123)
    assert not rep.degenerate
    assert rep.slope > 0.2
    assert rep.distances[0] > rep.distances[-1]


def test_adapted_beats_uniform_at_matched_node_count():
    # singular-boundary diffusion: grid mass belongs near the singular ends;
    # compare both grid modes against a fine adapted reference.  The horizon
    # stays short of the mean boundary-hitting time of the fastest leg, which
    # is reachable in finite time for exponents below 2.
    from conftest import natural_boundary_spec
    from gridwalk.subdivision import adapted_subdivision

    spec = natural_boundary_spec()
    x0 = spec.graph.vertex_point(0)
    T, n, seed = 0.3, 4000, 314

    ref_sub = adapted_subdivision(spec, 0.02, frontier=2.0)
    ref_table = build_kernel_table(spec, ref_sub)
    ref = run_ensemble(spec, ref_sub, ref_table, x0, T, n, [T], master_seed=seed)

    ad_sub = adapted_subdivision(spec, 0.12, frontier=2.0)
    ad_table = build_kernel_table(spec, ad_sub)
    ad = run_ensemble(spec, ad_sub, ad_table, x0, T, n, [T], master_seed=seed)

    # uniform grid with at least as many nodes
    h_uni = 3 * 1.0 / ad_sub.n_nodes * 1.05
    un_sub = uniform_subdivision(spec, h_uni, frontier=2.0)
    while un_sub.n_nodes < ad_sub.n_nodes:
        h_uni *= 0.95
        un_sub = uniform_subdivision(spec, h_uni, frontier=2.0)
    un_table = build_kernel_table(spec, un_sub)
    un = run_ensemble(spec, un_sub, un_table, x0, T, n, [T], master_seed=seed)

    d_ad = marginal_distance(ad, ref, T)
    d_un = marginal_distance(un, ref, T)
    assert un_sub.n_nodes >= ad_sub.n_nodes
    assert d_ad <= d_un
