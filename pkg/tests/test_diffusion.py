"""Scales, speed measures, vertex conditions, reorientation, quadrature."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gridwalk as gw
from gridwalk.diffusion import reoriented, speed_mass
from gridwalk.errors import IntervalOutOfRange, InvariantError, NonFiniteDensity, NotIncident

from conftest import interval_spec, star_spec


def test_vertex_condition_invariants():
    gw.VertexCondition(betas={0: 0.5, 1: 0.5}, rho=0.0)
    with pytest.raises(InvariantError):
        gw.VertexCondition(betas={0: 0.5, 1: 0.4})
    with pytest.raises(InvariantError):
        gw.VertexCondition(betas={0: 1.2, 1: -0.2})
    with pytest.raises(InvariantError):
        gw.VertexCondition(betas={0: 1.0}, rho=-1e-3)


def test_spec_wiring_validated():
    g = gw.build_graph([(1.0, 0, 1)])
    with pytest.raises(InvariantError):
        gw.DiffusionSpec(
            graph=g, scales={0: gw.ScaleFn.identity()}, speeds={0: gw.lebesgue_speed()},
            vertex_conditions={0: gw.VertexCondition(betas={0: 1.0})},
        )


def test_reoriented_outward_is_identity():
    spec = star_spec([gw.power_shifted_speed(0.5, 2.0)], lengths=[float("inf")])
    s_hat, m_hat = reoriented(spec, 0, 0)
    xs = np.linspace(0.0, 2.0, 7)
    assert np.allclose(m_hat.density_at(xs), spec.speeds[0].density_at(xs))
    assert s_hat.is_identity


def test_reoriented_inward_reflects_density():
    # unit edge into v1 with density (1-x)^-2 blows up toward the head;
    # seen from the head the density is u^-2 near the vertex
    g = gw.build_graph([(1.0, 0, 1)])
    spec = gw.DiffusionSpec(
        graph=g, scales={0: gw.ScaleFn.identity()},
        speeds={0: gw.SpeedMeasure(density=lambda x: (1.0 - np.asarray(x)) ** -2.0)},
        vertex_conditions={0: gw.VertexCondition(betas={0: 1.0}),
                           1: gw.VertexCondition(betas={0: 1.0})},
    )
    _, m_hat = reoriented(spec, 1, 0)
    us = np.array([0.1, 0.25, 0.5])
    assert np.allclose(m_hat.density_at(us), us ** -2.0)


def test_reoriented_scale_increments_match_reflection():
    g = gw.build_graph([(1.0, 0, 1)])
    s = gw.ScaleFn.from_callable(lambda x: x + 0.25 * x * x, deriv0=1.0)
    spec = gw.DiffusionSpec(
        graph=g, scales={0: s}, speeds={0: gw.lebesgue_speed()},
        vertex_conditions={0: gw.VertexCondition(betas={0: 1.0}),
                           1: gw.VertexCondition(betas={0: 1.0})},
    )
    s_hat, _ = reoriented(spec, 1, 0)
    assert s_hat(0.0) == pytest.approx(0.0, abs=1e-12)
    for a, b in [(0.0, 0.3), (0.1, 0.8), (0.4, 0.9)]:
        assert s_hat(b) - s_hat(a) == pytest.approx(s.fn(1 - a) - s.fn(1 - b), abs=1e-12)
    # reflecting twice recovers the original increments
    assert s_hat(1.0) - s_hat(0.0) == pytest.approx(s.fn(1.0) - s.fn(0.0), abs=1e-12)


def test_reoriented_requires_incidence():
    g = gw.build_graph([(1.0, 0, 1), (1.0, 1, 2)])
    spec = gw.DiffusionSpec(
        graph=g, scales={0: gw.ScaleFn.identity(), 1: gw.ScaleFn.identity()},
        speeds={0: gw.lebesgue_speed(), 1: gw.lebesgue_speed()},
        vertex_conditions={0: gw.VertexCondition(betas={0: 1.0}),
                           1: gw.VertexCondition(betas={0: 0.5, 1: 0.5}),
                           2: gw.VertexCondition(betas={1: 1.0})},
    )
    with pytest.raises(NotIncident):
        reoriented(spec, 0, 1)


def test_speed_mass_lebesgue():
    spec = interval_spec()
    assert speed_mass(spec, 0, 0.2, 0.5) == pytest.approx(0.3, abs=1e-12)


def test_speed_mass_matches_antiderivative():
    # density (1-x)^-2 over (0, 0.5): antiderivative 1/(1-x) gives exactly 1
    spec = star_spec([gw.power_boundary_speed(1.0, 2.0)], lengths=[1.0])
    got = speed_mass(spec, 0, 0.0, 0.5)
    assert got == pytest.approx(1.0, rel=2e-5)
    finer = speed_mass(spec, 0, 0.0, 0.5, n_panels=4096)
    assert abs(finer - 1.0) < abs(got - 1.0) + 1e-12


def test_speed_mass_atom_only():
    m = gw.SpeedMeasure(density=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                        atoms=((0.3, 2.0),))
    assert m.mass(0.0, 1.0) == pytest.approx(2.0, abs=1e-15)
    # open-interval convention: the atom is excluded once it sits on a bound
    assert m.mass(0.3, 1.0) == pytest.approx(0.0, abs=1e-15)


def test_speed_mass_interval_validation():
    spec = interval_spec()
    with pytest.raises(IntervalOutOfRange):
        speed_mass(spec, 0, 0.5, 0.2)
    with pytest.raises(IntervalOutOfRange):
        speed_mass(spec, 0, 0.0, 1.5)


def test_non_finite_density_reported():
    spec = star_spec([gw.SpeedMeasure(density=lambda x: 1.0 / np.asarray(x, dtype=float))],
                     lengths=[1.0])
    with pytest.raises(NonFiniteDensity):
        speed_mass(spec, 0, 0.0, 0.5)


@given(
    cuts=st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95)),
    atom_pos=st.floats(0.1, 0.9),
    atom_mass=st.floats(0.1, 5.0),
)
@settings(max_examples=40, deadline=None)
def test_speed_mass_additivity(cuts, atom_pos, atom_mass):
    # linear density, so the trapezoid rule is exact and additivity is sharp
    a, b, c = sorted(cuts)
    if not (a < b < c):
        return
    m = gw.SpeedMeasure(
        density=lambda x: 1.0 + 0.5 * np.asarray(x, dtype=float),
        atoms=((atom_pos, atom_mass),),
    )
    if atom_pos in (a, b, c):
        return
    total = m.mass(a, c)
    split = m.mass(a, b) + m.mass(b, c)
    assert abs(total - split) <= 1e-10 * (1.0 + total)


def test_check_speed_lower_bound_lebesgue_ok():
    spec = star_spec([gw.lebesgue_speed()] * 3)
    report = gw.check_speed_lower_bound(spec, k1=1.0, k2=1.0)
    assert report.ok


def test_check_speed_lower_bound_shifted_power_ok():
    # density 1/(0.5+x)^2 dominates 0.1/(1+x^2) out to 1e3
    spec = star_spec([gw.power_shifted_speed(0.5, 2.0)])
    report = gw.check_speed_lower_bound(spec, k1=0.1, k2=1.0)
    assert report.ok


def test_check_speed_lower_bound_flags_decay():
    spec = star_spec([gw.SpeedMeasure(density=lambda x: np.exp(-np.asarray(x, dtype=float)))],
                     lengths=[5.0])
    report = gw.check_speed_lower_bound(spec, k1=1.0, k2=0.0)
    assert not report.ok
    assert all(v.density < v.bound for v in report.violations)
