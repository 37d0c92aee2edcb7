"""Shared builders and independent Monte Carlo oracles for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

import gridwalk as gw


# ---------------------------------------------------------------------------
# spec builders
# ---------------------------------------------------------------------------

def star_spec(speeds, betas=None, rho=0.0, lengths=None, scales=None):
    """Star graph with the given per-edge speeds; all edges leave vertex 0."""
    n = len(speeds)
    if lengths is None:
        lengths = [float("inf")] * n
    g = gw.build_graph([(l, 0, None) for l in lengths])
    if betas is None:
        betas = {e: 1.0 / n for e in range(n)}
        betas[n - 1] = 1.0 - sum(betas[e] for e in range(n - 1))
    if scales is None:
        scales = {e: gw.ScaleFn.identity() for e in range(n)}
    return gw.DiffusionSpec(
        graph=g, scales=scales, speeds=dict(enumerate(speeds)),
        vertex_conditions={0: gw.VertexCondition(betas=betas, rho=rho)},
    )


def walsh_spec(n_edges=3, rho=0.0, betas=None):
    return star_spec([gw.lebesgue_speed()] * n_edges, betas=betas, rho=rho)


def interval_spec(length=1.0):
    """Brownian motion on [0, length] reflected at both ends."""
    g = gw.build_graph([(length, 0, 1)])
    return gw.DiffusionSpec(
        graph=g, scales={0: gw.ScaleFn.identity()}, speeds={0: gw.lebesgue_speed()},
        vertex_conditions={0: gw.VertexCondition(betas={0: 1.0}),
                           1: gw.VertexCondition(betas={0: 1.0})},
    )


def mixed_speeds_spec(rho=0.0, epsilon=0.5):
    """Three infinite legs: heavy shifted-power, shifted-power, Lebesgue."""
    return star_spec(
        [gw.power_shifted_speed(epsilon, 2.0), gw.power_shifted_speed(epsilon, 1.0),
         gw.lebesgue_speed()],
        rho=rho,
    )


def natural_boundary_spec():
    """Three unit legs with inaccessible far endpoints."""
    return star_spec(
        [gw.power_boundary_speed(1.0, 2.0), gw.power_boundary_speed(1.0, 1.6),
         gw.power_boundary_speed(1.0, 1.2)],
        lengths=[1.0, 1.0, 1.0],
    )


@pytest.fixture
def walsh3():
    return walsh_spec(3)


# ---------------------------------------------------------------------------
# lattice Monte Carlo oracles (independent of the kernel module)
# ---------------------------------------------------------------------------

def star_walk_mc(betas, radii, start, delta, n_walkers, seed, max_steps=2_000_000):
    """Nearest-neighbor walk on a star lattice with beta-kicks at the center.

    Each lattice step advances time by delta^2; at the center the walk enters
    edge e with probability beta_e.  Returns (exit_edge, exit_steps) arrays,
    one entry per walker.  This is the classical invariance-principle walk
    whose limit is Walsh Brownian motion, used as an oracle for vertex-cell
    exit probabilities and conditional exit times.
    """
    rng = np.random.default_rng(seed)
    n_edges = len(betas)
    beta_cum = np.cumsum([betas[e] for e in range(n_edges)])
    beta_cum[-1] = 1.0
    limits = np.array([int(round(radii[e] / delta)) for e in range(n_edges)])
    start_edge, start_frac = start
    edge = np.full(n_walkers, start_edge, dtype=np.int64)
    pos = np.full(n_walkers, int(round(start_frac / delta)), dtype=np.int64)
    steps = np.zeros(n_walkers, dtype=np.int64)
    exit_edge = np.full(n_walkers, -1, dtype=np.int64)
    active = np.ones(n_walkers, dtype=bool)
    done = pos >= limits[edge]
    exit_edge[done] = edge[done]
    active[done] = False
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        at_v = pos[idx] == 0
        kick = np.searchsorted(beta_cum, u, side="right")
        edge[idx[at_v]] = kick[at_v]
        pos[idx[at_v]] = 1
        moves = np.where(u < 0.5, -1, 1)
        pos[idx[~at_v]] += moves[~at_v]
        steps[idx] += 1
        hit = pos[idx] >= limits[edge[idx]]
        exit_edge[idx[hit]] = edge[idx[hit]]
        active[idx[hit]] = False
    assert not active.any(), "oracle walkers did not all exit"
    return exit_edge, steps


def segment_walk_mc(a, b, x, delta, n_walkers, seed, max_steps=2_000_000):
    """Symmetric walk on a lattice over (a, b); returns (hit_b, steps)."""
    rng = np.random.default_rng(seed)
    n = int(round((b - a) / delta))
    pos = np.full(n_walkers, int(round((x - a) / delta)), dtype=np.int64)
    steps = np.zeros(n_walkers, dtype=np.int64)
    hit_b = np.zeros(n_walkers, dtype=bool)
    active = np.ones(n_walkers, dtype=bool)
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        pos[idx] += np.where(u < 0.5, -1, 1)
        steps[idx] += 1
        up = pos[idx] >= n
        down = pos[idx] <= 0
        hit_b[idx[up]] = True
        active[idx[up | down]] = False
    assert not active.any()
    return hit_b, steps


def conditional_time_mc(exit_edge, steps, delta, target):
    """Mean exit time conditioned on exiting at target, with its standard error."""
    sel = exit_edge == target
    times = steps[sel] * delta * delta
    return float(times.mean()), float(times.std(ddof=1) / np.sqrt(sel.sum()))
