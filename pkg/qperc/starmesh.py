"""
Star-mesh transform for networks that series and parallel merges cannot reduce.

Eliminating an interior node with N leaves replaces its star by a complete
graph on the leaves whose N(N-1)/2 link values reproduce every pairwise
two-terminal value of the star: series(v_i, v_j) = pair(i, j) of the mesh.
Pair values of a complete graph are themselves computed by eliminating a
vertex and recursing, so the residual of an N-star solve nests smaller solves.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import root

from qperc.config import Settings, load_settings
from qperc.curves import SweepCurve
from qperc.errors import NumericalError, ParameterError, SizeLimitError
from qperc.logger import init_logger
from qperc.netcore import Edge, Network, contract_terminals
from qperc.rules import RuleSystem, check_unit, parallel, series
from qperc.spreduce import WorkingGraph
from qperc.workers import parallel_map

logger = init_logger(name="StarMesh", component="qperc")

MAX_MESH_NODES = 12
BOUNDARY_RESIDUAL = 1e-8
NESTED_TOL = 1e-12
RELAXED_FACTOR = 100.0
DISTINCT_SOLUTION = 1e-6
ORDER_POLICIES = ("min-degree", "max-degree", "max-id", "random")


@dataclass
class StarMeshSolution:
    leaf_values: np.ndarray
    mesh: np.ndarray
    residual: float
    attempts: int
    alternatives: List[np.ndarray] = field(default_factory=list)


def _symmetric(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ParameterError(f"complete-graph weights must be a square matrix, got shape {w.shape}")
    if w.shape[0] > MAX_MESH_NODES:
        raise SizeLimitError(f"mesh recursion is limited to {MAX_MESH_NODES} nodes, got {w.shape[0]}")
    if not np.allclose(w, w.T, atol=1e-12):
        raise ParameterError("complete-graph weights must be symmetric")
    w = check_unit(w, "mesh weight").copy()
    np.fill_diagonal(w, 0.0)
    return w


def _triangle_pair(w: np.ndarray, i: int, j: int, k: int, system: RuleSystem) -> float:
    return parallel(system, [w[i, j], series(system, [w[i, k], w[k, j]])])


def _eliminate(w: np.ndarray, vertex: int, system: RuleSystem, settings: Settings) -> Tuple[np.ndarray, List[int]]:
    """Star-mesh `vertex` out of the complete graph and merge the mesh into the remaining links."""
    keep = [i for i in range(w.shape[0]) if i != vertex]
    sol = solve_star(w[vertex, keep], system, settings, tol=NESTED_TOL)
    reduced = np.asarray(parallel(system, [w[np.ix_(keep, keep)], sol.mesh]))
    np.fill_diagonal(reduced, 0.0)
    return reduced, keep


def mesh_pair_connectivity(weights, i: int, j: int, system, settings: Optional[Settings] = None) -> float:
    """
    Two-terminal value between i and j of a complete graph.

    N = 2 is the link itself, N = 3 is the series-parallel closed form; larger
    graphs eliminate the last vertex other than i and j and recurse.
    """
    system = RuleSystem.parse(system)
    w = _symmetric(weights)
    n = w.shape[0]
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ParameterError(f"pair ({i}, {j}) is not a pair of distinct vertices of a {n}-node graph")
    if n == 2:
        return float(w[i, j])
    if n == 3:
        return float(_triangle_pair(w, i, j, 3 - i - j, system))
    settings = settings or load_settings()
    vertex = max(x for x in range(n) if x not in (i, j))
    reduced, keep = _eliminate(w, vertex, system, settings)
    return mesh_pair_connectivity(reduced, keep.index(i), keep.index(j), system, settings)


def mesh_pair_matrix(weights, system, settings: Optional[Settings] = None) -> np.ndarray:
    """All pairwise two-terminal values of a complete graph as a symmetric matrix."""
    system = RuleSystem.parse(system)
    w = _symmetric(weights)
    n = w.shape[0]
    out = np.zeros((n, n))
    if n == 2:
        out[0, 1] = w[0, 1]
    elif n == 3:
        for i, j in ((0, 1), (0, 2), (1, 2)):
            out[i, j] = _triangle_pair(w, i, j, 3 - i - j, system)
    elif n > 3:
        settings = settings or load_settings()
        # drop the last vertex: every pair among 0..n-2
        reduced, keep = _eliminate(w, n - 1, system, settings)
        out[np.ix_(keep, keep)] = mesh_pair_matrix(reduced, system, settings)
        # drop vertex 0: pairs (i, n-1) with i >= 1
        reduced, keep = _eliminate(w, 0, system, settings)
        inner = mesh_pair_matrix(reduced, system, settings)
        out[keep, n - 1] = inner[:, -1]
        out[0, n - 1] = mesh_pair_connectivity(w, 0, n - 1, system, settings)
    out = np.triu(out, 1)
    return out + out.T


def _root_options(method: str, maxiter: int, unknowns: int, tol: float) -> dict:
    if method == "hybr":
        return {"xtol": 1e-14, "maxfev": maxiter * (unknowns + 1)}
    if method == "lm":
        return {"xtol": 1e-14, "ftol": 1e-15, "maxiter": maxiter * (unknowns + 1)}
    if method == "df-sane":
        return {"maxfev": maxiter * (unknowns + 1), "fatol": tol}
    return {"maxiter": maxiter, "fatol": tol}


def solve_star(leaf_values: Sequence[float], system, settings: Optional[Settings] = None,
               rng: Optional[np.random.Generator] = None, check_uniqueness: bool = False,
               tol: Optional[float] = None) -> StarMeshSolution:
    """
    Mesh values for a star with the given leaf values.

    Leaves of value 0 carry no link and get no mesh links. Up to two live leaves
    the answer is closed-form; otherwise a scipy root solver starts from
    series(v_i, v_j) and retries from perturbed guesses. Iterates are clipped
    to [0, 1]. With check_uniqueness every restart runs and converged solutions
    differing from the accepted one are returned as alternatives.
    """
    system = RuleSystem.parse(system)
    settings = settings or load_settings()
    tol = settings.solver_tol if tol is None else tol
    v = check_unit(np.atleast_1d(np.asarray(leaf_values, dtype=float)), "leaf value")
    n_leaves = v.shape[0]
    mesh = np.zeros((n_leaves, n_leaves))

    live = [i for i in range(n_leaves) if v[i] > 0.0]
    if len(live) + 1 > MAX_MESH_NODES:
        raise SizeLimitError(f"star-mesh is limited to {MAX_MESH_NODES - 1} leaves, got {len(live)}")
    if len(live) <= 1:
        return StarMeshSolution(v, mesh, 0.0, 0)
    if len(live) == 2:
        a, b = live
        mesh[a, b] = mesh[b, a] = series(system, [v[a], v[b]])
        return StarMeshSolution(v, mesh, 0.0, 0)

    n = len(live)
    iu = np.triu_indices(n, 1)
    lv = v[live]
    targets = np.array([series(system, [lv[i], lv[j]]) for i, j in zip(*iu)])

    def unpack(x: np.ndarray) -> np.ndarray:
        w = np.zeros((n, n))
        w[iu] = np.clip(x, 0.0, 1.0)
        return w + w.T

    def residual(x: np.ndarray) -> np.ndarray:
        return mesh_pair_matrix(unpack(x), system, settings)[iu] - targets

    rng = rng if rng is not None else np.random.default_rng(settings.seed)
    total = settings.solver_restarts + 1
    best_x, best_res = None, np.inf
    accepted = []

    for attempt in range(1, total + 1):
        if attempt == 1:
            x0 = targets.copy()
        else:
            x0 = np.clip(targets * (1.0 + 0.25 * rng.standard_normal(targets.size))
                         + 0.05 * rng.random(targets.size), 0.0, 1.0)
        logger.debug(f"[{attempt}/{total}] Solving {n}-star ({system.value}, {settings.solver_method})")
        try:
            sol = root(residual, x0, method=settings.solver_method,
                       options=_root_options(settings.solver_method, settings.solver_maxiter, targets.size, tol))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as e:
            logger.warning(f"[{attempt}/{total}] Star-mesh solver raised: {e}")
            continue

        x = np.clip(sol.x, 0.0, 1.0)
        res = float(np.max(np.abs(residual(x))))
        at_boundary = bool(np.any((x <= 1e-12) | (x >= 1.0 - 1e-12)))
        if res < best_res:
            best_x, best_res = x, res
        if res <= tol or (at_boundary and res <= BOUNDARY_RESIDUAL):
            accepted.append(x)
            if not check_uniqueness:
                break
        else:
            logger.debug(f"[{attempt}/{total}] Residual {res:.3g} above tolerance {tol:.1g}: {sol.message}")

    if accepted:
        chosen = accepted[0]
        res = float(np.max(np.abs(residual(chosen))))
    elif best_x is not None and best_res <= RELAXED_FACTOR * tol:
        logger.debug(f"Accepting {n}-star solution with residual {best_res:.3g} (tolerance {tol:.1g})")
        chosen, res = best_x, best_res
    else:
        logger.error(f"Star-mesh solve failed for {n}-star after {total} attempts, best residual {best_res:.3g}")
        raise NumericalError(f"star-mesh solver did not converge for a {n}-star "
                             f"(best residual {best_res:.3g}, tolerance {tol:.1g})", residual=best_res)

    alternatives = [alt for alt in accepted[1:] if np.max(np.abs(alt - chosen)) > DISTINCT_SOLUTION]
    if alternatives:
        logger.warning(f"{len(alternatives)} restart solutions of the {n}-star differ from the accepted one by more than {DISTINCT_SOLUTION}")

    w = unpack(chosen)
    mesh[np.ix_(live, live)] = w
    return StarMeshSolution(v, mesh, res, attempt,
                            [unpack(a) for a in alternatives])


def star_mesh_transform(net: Network, node: int, system, settings: Optional[Settings] = None) -> Network:
    """Replace the star of an interior node by its mesh, merging mesh links into existing parallel links."""
    system = RuleSystem.parse(system)
    if node in net.sources or node in net.targets:
        raise ParameterError(f"node {node} is a terminal and cannot be star-meshed")
    if node not in net.nodes:
        raise ParameterError(f"node {node} is not in the network")

    bundles: Dict[int, List[float]] = {}
    for e in net.edges:
        if e.is_loop or node not in (e.u, e.v):
            continue
        other = e.v if e.u == node else e.u
        bundles.setdefault(other, []).append(system.from_theta(e.theta))
    leaves = sorted(bundles)
    if len(leaves) < 3:
        raise ParameterError(f"node {node} has {len(leaves)} neighbours; series/parallel merges handle degree <= 2")

    sol = solve_star([parallel(system, bundles[u]) for u in leaves], system, settings)
    index = {u: i for i, u in enumerate(leaves)}

    kept, existing = [], {}
    for e in net.edges:
        if node in (e.u, e.v):
            continue
        if e.u in index and e.v in index and not e.is_loop:
            existing.setdefault(tuple(sorted((e.u, e.v))), []).append(system.from_theta(e.theta))
        else:
            kept.append(e)
    for a, b in combinations(leaves, 2):
        values = existing.get((a, b), [])
        m = sol.mesh[index[a], index[b]]
        if m > 0.0:
            values = values + [m]
        if values:
            kept.append(Edge(a, b, float(system.to_theta(parallel(system, values)))))

    logger.debug(f"Star-meshed node {node} ({len(leaves)} leaves), residual {sol.residual:.3g}")
    return Network(tuple(x for x in net.nodes if x != node), tuple(kept), net.sources, net.targets, net.name)


@dataclass
class FullReduction:
    value: float
    order: List[int]
    residuals: List[float]
    system: RuleSystem
    alternatives: List[dict] = field(default_factory=list)

    @property
    def theta_units(self) -> float:
        return float(self.system.to_units(self.value))

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "theta_out": self.theta_units,
            "system": self.system.value,
            "order": list(self.order),
            "residuals": list(self.residuals),
            "alternatives": list(self.alternatives),
        }


def _pick_node(wg: WorkingGraph, policy: str, rng: np.random.Generator) -> int:
    interior = wg.interior
    if policy == "min-degree":
        return min(interior, key=lambda n: (len(wg.adj[n]), n))
    if policy == "max-degree":
        return min(interior, key=lambda n: (-len(wg.adj[n]), n))
    if policy == "max-id":
        return max(interior)
    if policy == "random":
        return int(rng.choice(interior))
    raise ParameterError(f"unknown order policy {policy!r}; expected one of {ORDER_POLICIES}")


def reduce_full(net: Network, system, order_policy: str = "min-degree", settings: Optional[Settings] = None,
                seed: Optional[int] = None, check_uniqueness: bool = False) -> FullReduction:
    """
    Reduce any network to its terminal pair: exhaust series/parallel merges,
    star-mesh one interior node chosen by `order_policy`, repeat.

    With check_uniqueness every solver restart runs, and star solutions that
    differ from the accepted one are listed per eliminated node.
    """
    system = RuleSystem.parse(system)
    settings = settings or load_settings()
    if order_policy not in ORDER_POLICIES:
        raise ParameterError(f"unknown order policy {order_policy!r}; expected one of {ORDER_POLICIES}")
    rng = np.random.default_rng(settings.seed if seed is None else seed)

    wg = WorkingGraph.from_network(contract_terminals(net), system=system)
    order, residuals, alternatives = [], [], []
    while not wg.run():
        node = _pick_node(wg, order_policy, rng)
        leaves = sorted(wg.adj[node])
        values = [wg.values[wg.adj[node][u][0]] for u in leaves]
        try:
            sol = solve_star(values, system, settings, rng=rng, check_uniqueness=check_uniqueness)
        except NumericalError as e:
            raise NumericalError(f"{e} while eliminating node {node}", residual=e.residual, partial_order=order)
        wg.remove_node(node)
        for a, b in combinations(range(len(leaves)), 2):
            if sol.mesh[a, b] > 0.0:
                wg.add_edge(leaves[a], leaves[b], float(sol.mesh[a, b]))
        order.append(node)
        residuals.append(sol.residual)
        if sol.alternatives:
            alternatives.append({"node": node, "leaves": leaves,
                                 "meshes": [alt.tolist() for alt in sol.alternatives]})
        logger.debug(f"Eliminated node {node} with {len(leaves)} leaves, residual {sol.residual:.3g}")

    value = float(wg.final_value())
    logger.info(f"reduce_full {system.value} on {net.name or 'network'}: {len(order)} star-mesh steps, value {value:.10g}")
    return FullReduction(value, order, residuals, system, alternatives)


def _reduce_task(task) -> float:
    net, system, policy, settings, seed = task
    return reduce_full(net, system, policy, settings, seed).value


def order_sensitivity(net: Network, system, policies: Sequence[str] = ORDER_POLICIES,
                      settings: Optional[Settings] = None, seed: Optional[int] = None, jobs: int = 1) -> dict:
    """reduce_full under several elimination policies, with the spread of the results."""
    system = RuleSystem.parse(system)
    settings = settings or load_settings()
    values = parallel_map(_reduce_task, [(net, system, p, settings, seed) for p in policies], jobs=jobs)
    by_policy = dict(zip(policies, values))
    spread = max(values) - min(values) if values else 0.0
    logger.info(f"Order sensitivity on {net.name or 'network'}: spread {spread:.3g} over {len(values)} policies")
    return {"values": by_policy, "spread": spread}


def _sweep_task(task) -> float:
    net, system, theta, policy, settings, seed = task
    return reduce_full(net.with_uniform_theta(theta), system, policy, settings, seed).value


def sweep_star_mesh(net: Network, system, theta_grid, order_policy: str = "min-degree",
                    settings: Optional[Settings] = None, seed: Optional[int] = None, jobs: int = 1) -> SweepCurve:
    """reduce_full at every grid point with theta applied uniformly to all links."""
    system = RuleSystem.parse(system)
    settings = settings or load_settings()
    thetas = np.asarray(theta_grid, dtype=float)
    tasks = [(net, system, float(t), order_policy, settings, seed) for t in thetas]
    values = parallel_map(_sweep_task, tasks, jobs=jobs)
    return SweepCurve(thetas, values, "star-mesh", net.name, system)
