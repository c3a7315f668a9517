import numpy as np
import pytest
from scipy.optimize import root
from unittest.mock import MagicMock, patch

from qperc.errors import NumericalError, ParameterError, SizeLimitError
from qperc.exactsc import exact_classical_sc
from qperc.netcore import Edge, LinkWeight, Network, build_bethe
from qperc.rules import RuleSystem, parallel, series
from qperc.spreduce import is_series_parallel, reduce_sp
from qperc.starmesh import (mesh_pair_connectivity, mesh_pair_matrix, order_sensitivity, reduce_full, solve_star,
                            star_mesh_transform, sweep_star_mesh)


def _star(values, system):
    thetas = [float(system.to_theta(v)) for v in values]
    edges = tuple(Edge(0, i + 1, t) for i, t in enumerate(thetas))
    return Network(tuple(range(len(values) + 1)), edges, frozenset({1}), frozenset({2}), "star")


# === Test: complete-graph pair values ===

def test_triangle_pair_closed_form():
    """On three nodes the pair value is the direct link in parallel with the detour."""
    w = np.array([[0, 0.3, 0.4], [0.3, 0, 0.5], [0.4, 0.5, 0]])
    expected = parallel("classical", [0.3, series("classical", [0.4, 0.5])])
    assert mesh_pair_connectivity(w, 0, 1, "classical") == pytest.approx(expected)
    assert mesh_pair_matrix(w, "classical")[1, 0] == pytest.approx(expected)


def test_pair_matrix_is_symmetric_and_matches_pairwise_calls(settings):
    """The matrix form agrees with single-pair calls on K4."""
    rng = np.random.default_rng(1)
    w = rng.uniform(0.1, 0.6, (4, 4))
    w = np.triu(w, 1) + np.triu(w, 1).T
    m = mesh_pair_matrix(w, "concurrence", settings)
    assert np.allclose(m, m.T)
    for i, j in ((0, 1), (0, 3), (2, 3)):
        assert m[i, j] == pytest.approx(mesh_pair_connectivity(w, i, j, "concurrence", settings), abs=1e-9)


def test_k4_classical_pair_matches_oracle(settings):
    """A classical K4 pair value from nested star-mesh sits close to exact enumeration."""
    p = 0.4
    theta = LinkWeight.from_p(p).theta
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    net = Network((0, 1, 2, 3), tuple(Edge(u, v, theta) for u, v in pairs), frozenset({0}), frozenset({3}))
    w = np.full((4, 4), p)
    np.fill_diagonal(w, 0.0)
    assert mesh_pair_connectivity(w, 0, 3, "classical", settings) == pytest.approx(exact_classical_sc(net), abs=0.02)


def test_mesh_size_guard():
    """More than twelve nodes is refused."""
    with pytest.raises(SizeLimitError):
        mesh_pair_matrix(np.full((13, 13), 0.1), "classical")


def test_mesh_rejects_asymmetric_weights():
    """Weights must form a symmetric matrix."""
    with pytest.raises(ParameterError):
        mesh_pair_matrix(np.array([[0, 0.1, 0.2], [0.3, 0, 0.1], [0.2, 0.1, 0]]), "classical")


# === Test: star solves ===

@pytest.mark.parametrize("system", list(RuleSystem))
def test_three_star_reproduces_pairwise_values(system, settings):
    """Every leaf pair of the mesh carries the series value through the centre."""
    leaves = [0.8, 0.6, 0.7]
    sol = solve_star(leaves, system, settings)
    assert sol.residual <= 1e-8
    assert np.allclose(sol.mesh, sol.mesh.T)
    assert np.all((sol.mesh >= 0) & (sol.mesh <= 1))
    pairs = mesh_pair_matrix(sol.mesh, system, settings)
    for i in range(3):
        for j in range(i + 1, 3):
            assert pairs[i, j] == pytest.approx(series(system, [leaves[i], leaves[j]]), abs=1e-8)


def test_four_star_converges(settings):
    """A four-leaf star needs nested solves and still meets tolerance."""
    sol = solve_star([0.5, 0.6, 0.7, 0.4], "classical", settings)
    assert sol.residual <= 1e-8
    assert sol.attempts >= 1


def test_zero_leaves_carry_no_mesh(settings):
    """A dead leaf is dropped; two live leaves are the series closed form."""
    sol = solve_star([0.0, 0.5, 0.6], "classical", settings)
    assert sol.mesh[0].sum() == 0.0
    assert sol.mesh[1, 2] == pytest.approx(0.3)
    assert sol.attempts == 0


def test_solver_failure_raises_numerical_error(settings):
    """A solver stuck at zero never meets tolerance and every restart is used."""
    stuck = MagicMock()
    stuck.x = np.zeros(3)
    stuck.message = "stuck"
    with patch("qperc.starmesh.root", return_value=stuck) as mock_root:
        with pytest.raises(NumericalError) as exc:
            solve_star([0.8, 0.6, 0.7], "classical", settings)
    assert mock_root.call_count == settings.solver_restarts + 1
    assert exc.value.residual > 1e-8


def _root_result(x):
    result = MagicMock()
    result.x = np.array(x)
    result.message = "ok"
    return result


def test_uniqueness_check_runs_every_restart(settings):
    """With the uniqueness check on, all restarts run and a unique solution has no alternatives."""
    with patch("qperc.starmesh.root", wraps=root) as mock_root:
        sol = solve_star([0.8, 0.6, 0.7], "classical", settings, check_uniqueness=True)
    assert mock_root.call_count == settings.solver_restarts + 1
    assert sol.attempts == settings.solver_restarts + 1
    assert sol.alternatives == []


def test_uniqueness_check_reports_differing_solutions(settings):
    """Converged restarts further than 1e-6 from the accepted solution come back as alternatives."""
    exact = solve_star([0.8, 0.6, 0.7], "classical", settings)
    x = exact.mesh[np.triu_indices(3, 1)]
    answers = [_root_result(x), _root_result(x + 1e-3)] + [_root_result(x)] * settings.solver_restarts
    with patch("qperc.starmesh.root", side_effect=answers):
        sol = solve_star([0.8, 0.6, 0.7], "classical", settings, check_uniqueness=True, tol=1e-2)
    assert len(sol.alternatives) == 1
    assert np.allclose(sol.alternatives[0] - sol.mesh, 1e-3 * (1 - np.eye(3)))
    with patch("qperc.starmesh.root", side_effect=answers[:1]):
        assert solve_star([0.8, 0.6, 0.7], "classical", settings, tol=1e-2).alternatives == []


def test_reduce_full_passes_the_uniqueness_flag(bridge, settings):
    """reduce_full forwards the flag and lists no alternatives on the bridge."""
    with patch("qperc.starmesh.solve_star", wraps=solve_star) as mock_solve:
        result = reduce_full(bridge, "classical", settings=settings, check_uniqueness=True)
    assert all(call.kwargs["check_uniqueness"] for call in mock_solve.call_args_list)
    assert mock_solve.call_count == len(result.order)
    assert result.to_dict()["alternatives"] == []


def test_failure_inside_reduce_full_reports_partial_order(bridge, settings):
    """reduce_full re-raises with the elimination order reached so far."""
    with patch("qperc.starmesh.solve_star", side_effect=NumericalError("no root", residual=0.5)):
        with pytest.raises(NumericalError) as exc:
            reduce_full(bridge, "classical", settings=settings)
    assert exc.value.partial_order == []
    assert exc.value.residual == 0.5


# === Test: network transform ===

def test_transform_preserves_terminal_value(settings):
    """Meshing the centre of a star keeps the s-t value of the star."""
    system = RuleSystem.CONCURRENCE
    net = _star([0.8, 0.6, 0.7], system)
    meshed = star_mesh_transform(net, 0, system, settings)
    assert 0 not in meshed.nodes
    assert reduce_sp(meshed, system) == pytest.approx(series(system, [0.8, 0.6]), abs=1e-8)


def test_transform_rejects_terminals_and_low_degree(bridge, settings):
    """Terminals and degree-2 nodes are left to other reductions."""
    with pytest.raises(ParameterError):
        star_mesh_transform(bridge, 1, "classical", settings)
    with pytest.raises(ParameterError):
        star_mesh_transform(bridge, 2, "classical", settings)


# === Test: full reduction ===

def test_bridge_star_mesh_close_to_exact(bridge, settings):
    """One star-mesh step on the bridge lands within 0.01 of the exact theta."""
    exact = exact_classical_sc(bridge)
    result = reduce_full(bridge, "classical", settings=settings)
    assert len(result.order) == 1 and result.order[0] in (3, 4)
    assert max(result.residuals) <= 1e-8
    exact_units = RuleSystem.CLASSICAL.to_units(exact)
    assert abs(result.theta_units - exact_units) <= 0.01
    assert result.theta_units == pytest.approx(0.25, abs=0.01)


def test_reduce_full_on_series_parallel_network_needs_no_star_mesh(settings):
    """Series-parallel networks reduce without elimination steps."""
    net = build_bethe(3, 3, 0.5)
    result = reduce_full(net, "concurrence", settings=settings)
    assert result.order == []
    assert result.value == pytest.approx(reduce_sp(net, "concurrence"), abs=1e-14)


def test_order_sensitivity_on_symmetric_bridge(bridge, settings):
    """Eliminating either bridge end gives the same value."""
    out = order_sensitivity(bridge, "classical", ["min-degree", "max-id"], settings)
    assert set(out["values"]) == {"min-degree", "max-id"}
    assert out["spread"] <= 1e-7


def test_unknown_order_policy(bridge, settings):
    """Only the listed policies exist."""
    with pytest.raises(ParameterError):
        reduce_full(bridge, "classical", "smallest-first", settings)


def test_star_mesh_sweep_runs_over_a_grid(bridge, settings):
    """A star-mesh sweep has one value per theta and stays monotone."""
    grid = np.linspace(0.05, 0.75, 6)
    curve = sweep_star_mesh(bridge, "classical", grid, settings=settings)
    assert curve.values.shape == grid.shape
    assert np.all(np.diff(curve.values) >= -1e-8)


@pytest.mark.slow
def test_non_series_parallel_graphs_close_to_oracle(settings):
    """Median star-mesh error over random non-series-parallel graphs stays within 0.02."""
    rng = np.random.default_rng(99)
    errors = []
    while len(errors) < 50:
        n = int(rng.integers(5, 8))
        pairs = set()
        size = min(int(rng.integers(n + 2, 13)), n * (n - 1) // 2)
        while len(pairs) < size:
            u, v = sorted(rng.choice(n, 2, replace=False).tolist())
            pairs.add((u, v))
        thetas = rng.uniform(0.1, 0.75, len(pairs))
        net = Network(tuple(range(n)), tuple(Edge(u, v, float(t)) for (u, v), t in zip(sorted(pairs), thetas)),
                      frozenset({0}), frozenset({n - 1}))
        if is_series_parallel(net)[0] or exact_classical_sc(net) == 0.0:
            continue
        try:
            value = reduce_full(net, "classical", settings=settings).value
        except NumericalError:
            continue
        errors.append(abs(value - exact_classical_sc(net)))
    assert float(np.median(errors)) <= 0.02
