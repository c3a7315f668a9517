import math

import numpy as np
import pytest

from qperc.analysis import bethe_saturation
from qperc.errors import NotSeriesParallelError, ParameterError
from qperc.exactsc import exact_classical_sc
from qperc.netcore import QUARTER_PI, Edge, LinkWeight, Network, build_bethe, build_lattice
from qperc.rules import RuleSystem, parallel, series
from qperc.spreduce import (bethe_layer_profile, bethe_sponge_crossing, is_series_parallel, reduce_sp,
                            reduce_sp_traced, sp_trace, st_block_nodes, sweep_bethe, sweep_sp)


def _chain(thetas, s=0):
    edges = tuple(Edge(i, i + 1, t) for i, t in enumerate(thetas, start=s))
    return Network(tuple(range(s, s + len(thetas) + 1)), edges, frozenset({s}), frozenset({s + len(thetas)}))


# === Test: series and parallel merges ===

@pytest.mark.parametrize("system", list(RuleSystem))
def test_chain_is_a_series_product(system):
    """A path of links reduces to the product of its values."""
    thetas = [0.3, 0.5, 0.7]
    net = _chain(thetas)
    expected = series(system, [system.from_theta(t) for t in thetas])
    assert reduce_sp(net, system) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("system", list(RuleSystem))
def test_parallel_bundle(system):
    """Parallel links between the terminals merge in one step."""
    thetas = [0.2, 0.4, 0.6]
    net = Network((0, 1), tuple(Edge(0, 1, t) for t in thetas), frozenset({0}), frozenset({1}))
    value, trace = reduce_sp_traced(net, system)
    assert value == pytest.approx(parallel(system, [system.from_theta(t) for t in thetas]), abs=1e-14)
    assert [s.kind for s in trace.steps] == ["parallel"]


def test_disconnected_terminals_reduce_to_zero():
    """No s-t path gives 0 under both systems."""
    net = Network((0, 1, 2), (Edge(0, 2, 0.5),), frozenset({0}), frozenset({1}))
    assert reduce_sp(net, "classical") == 0.0
    assert reduce_sp(net, "concurrence") == 0.0


def test_dead_ends_and_loops_are_pruned():
    """Dangling trees and self-loops are recorded as pruned, not as steps."""
    edges = (Edge(0, 2, 0.5), Edge(2, 1, 0.5), Edge(2, 3, 0.4), Edge(3, 4, 0.4), Edge(2, 2, 0.3))
    net = Network((0, 1, 2, 3, 4), edges, frozenset({0}), frozenset({1}))
    value, trace = reduce_sp_traced(net, "classical")
    p = 2 * math.sin(0.5) ** 2
    assert value == pytest.approx(p * p)
    assert sorted(trace.pruned) == [2, 3, 4]


def test_st_block_excludes_side_branches():
    """Only nodes on some s-t path belong to the block."""
    edges = (Edge(0, 2, 0.5), Edge(2, 1, 0.5), Edge(2, 3, 0.4), Edge(3, 5, 0.4), Edge(5, 2, 0.4))
    net = Network((0, 1, 2, 3, 5), edges, frozenset({0}), frozenset({1}))
    assert st_block_nodes(net) == {0, 1, 2}


# === Test: recognition ===

def test_bridge_is_not_series_parallel(bridge):
    """The demonstration lattice contains a Wheatstone bridge."""
    ok, trace = is_series_parallel(bridge)
    assert not ok and trace is None
    with pytest.raises(NotSeriesParallelError) as exc:
        reduce_sp(bridge, "classical")
    assert exc.value.blocking_node in (3, 4)


def test_is_series_parallel_needs_single_terminals():
    """Multi-node terminal sets must be contracted first."""
    with pytest.raises(ParameterError):
        is_series_parallel(build_lattice("square", 2))


def test_square_lattice_n3_is_not_series_parallel():
    """Contracted 3 x 3 square lattice is not series-parallel."""
    with pytest.raises(NotSeriesParallelError):
        sp_trace(build_lattice("square", 3))


def test_random_order_gives_the_same_verdict(sp_networks):
    """Random worklist order reduces the same networks."""
    rng = np.random.default_rng(3)
    for net in sp_networks[:30]:
        ok, trace = is_series_parallel(net, rng=rng)
        assert ok


# === Test: agreement with the brute-force oracle ===

def test_reduce_sp_matches_oracle(sp_networks):
    """Classical reduction equals configuration enumeration on random series-parallel networks."""
    for net in sp_networks:
        assert reduce_sp(net, "classical") == pytest.approx(exact_classical_sc(net), abs=1e-10)


# === Test: trace replay ===

def test_replay_on_arrays_matches_scalar_replays(sp_networks):
    """One vectorised replay equals replays of each grid point."""
    net = sp_networks[7]
    two_terminal, trace = sp_trace(net)
    grid = np.linspace(0.0, QUARTER_PI, 9)
    system = RuleSystem.CONCURRENCE
    values = [system.from_theta(grid) for _ in range(trace.n_edges)]
    vector = trace.replay(system, values)
    scalar = [trace.replay(system, [system.from_theta(t)] * trace.n_edges) for t in grid]
    assert np.allclose(vector, scalar, atol=1e-14)


def test_replay_checks_edge_count():
    """A trace replays only on its own edge count."""
    _, trace = sp_trace(_chain([0.1, 0.2]))
    with pytest.raises(ParameterError):
        trace.replay("classical", [0.5])


def test_annotated_trace_serialises():
    """Annotated steps carry before and after values."""
    _, trace = reduce_sp_traced(_chain([0.3, 0.3]), "classical")
    doc = trace.to_dict()
    assert doc["steps"][0]["kind"] == "series"
    assert len(doc["steps"][0]["before"]) == 2
    assert doc["final_edge"] is not None


# === Test: sweeps ===

def test_sweep_sp_is_monotone_and_ends_at_one():
    """Sweeping theta to pi/4 on a connected network reaches 1."""
    net = build_bethe(3, 3)
    curve = sweep_sp(net, "concurrence", np.linspace(0.0, QUARTER_PI, 21))
    assert np.all(np.diff(curve.values) >= -1e-12)
    assert curve.values[0] == 0.0
    assert curve.values[-1] == pytest.approx(1.0)


# === Test: Bethe closed recursion ===

@pytest.mark.parametrize("system", list(RuleSystem))
@pytest.mark.parametrize("k,L", [(3, 1), (3, 4), (4, 3), (2, 6)])
def test_bethe_recursion_matches_reduction(system, k, L):
    """O(L) recursion equals the full reduction of the generated tree."""
    theta = 0.55
    value = system.from_theta(theta)
    assert bethe_sponge_crossing(k, L, value, system) == pytest.approx(reduce_sp(build_bethe(k, L, theta), system),
                                                                       abs=1e-12)


def test_bethe_sweep_matches_tree_sweep():
    """sweep_bethe and sweep_sp agree on the generated tree."""
    grid = np.linspace(0.0, QUARTER_PI, 15)
    a = sweep_bethe(3, 5, "classical", grid)
    b = sweep_sp(build_bethe(3, 5), "classical", grid)
    assert np.allclose(a.values, b.values, atol=1e-12)


def test_bethe_layer_profile_shape():
    """One row per depth, broadcast over the value grid."""
    out = bethe_layer_profile(3, 12, np.linspace(0.1, 0.9, 5), "concurrence")
    assert out.shape == (12, 5)
    assert np.allclose(out[0], [parallel("concurrence", [v] * 3) for v in np.linspace(0.1, 0.9, 5)])


@pytest.mark.parametrize("c", [0.839, 0.9, 1.0])
def test_concurrence_saturates_above_c_sat(c):
    """Above the saturation concurrence every depth gives exactly 1."""
    assert c > bethe_saturation(3)
    assert np.all(bethe_layer_profile(3, 12, c, "concurrence") == 1.0)
    theta = LinkWeight.from_c(c).theta
    for L in (1, 3, 6):
        assert reduce_sp(build_bethe(3, L, theta), "concurrence") == 1.0
