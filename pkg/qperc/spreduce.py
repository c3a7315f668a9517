"""
Series-parallel detection and exact two-terminal reduction.

The structural reduction is computed once as a ReductionTrace over edge ids;
replaying it on per-edge values (floats or numpy arrays) yields the two-terminal
value under either rule system. A sweep over a theta grid is one replay.
"""

import heapq
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from qperc.curves import SweepCurve
from qperc.errors import NotSeriesParallelError, ParameterError
from qperc.logger import init_logger
from qperc.netcore import Network, contract_terminals
from qperc.rules import RuleSystem, parallel, parallel_power, series

logger = init_logger(name="SPReduce", component="qperc")


@dataclass(frozen=True)
class ReductionStep:
    kind: str
    consumed: Tuple[int, ...]
    produced: int
    via: Optional[int] = None
    before: Tuple[float, ...] = ()
    after: Optional[float] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "consumed": list(self.consumed), "produced": self.produced}
        if self.via is not None:
            out["via"] = self.via
        if self.after is not None:
            out["before"] = list(self.before)
            out["after"] = self.after
        return out


@dataclass
class ReductionTrace:
    """
    Ordered series/parallel steps over edge ids. Ids 0..n_edges-1 are the
    links of the (contracted) input network, produced edges get fresh ids.
    """
    source: int
    target: int
    n_edges: int
    steps: List[ReductionStep] = field(default_factory=list)
    pruned: List[int] = field(default_factory=list)
    final_edge: Optional[int] = None

    @property
    def connected(self) -> bool:
        return self.final_edge is not None

    def replay(self, system, edge_values: Sequence):
        system = RuleSystem.parse(system)
        if len(edge_values) != self.n_edges:
            raise ParameterError(f"trace expects {self.n_edges} edge values, got {len(edge_values)}")
        values: Dict[int, object] = dict(enumerate(edge_values))
        for step in self.steps:
            inputs = [values.pop(i) for i in step.consumed]
            rule = series if step.kind == "series" else parallel
            values[step.produced] = rule(system, inputs)
        if self.final_edge is None:
            shape = np.shape(edge_values[0]) if len(edge_values) else ()
            return 0.0 if shape == () else np.zeros(shape)
        return values[self.final_edge]

    def annotated(self, system, edge_values: Sequence[float]) -> "ReductionTrace":
        """Copy of the trace with scalar before/after values on every step."""
        system = RuleSystem.parse(system)
        values = {i: float(v) for i, v in enumerate(edge_values)}
        steps = []
        for step in self.steps:
            before = tuple(values.pop(i) for i in step.consumed)
            rule = series if step.kind == "series" else parallel
            after = float(rule(system, before))
            values[step.produced] = after
            steps.append(replace(step, before=before, after=after))
        return replace(self, steps=steps)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "n_edges": self.n_edges,
            "final_edge": self.final_edge,
            "pruned": list(self.pruned),
            "steps": [s.to_dict() for s in self.steps],
        }


def st_block_nodes(net: Network) -> Optional[Set[int]]:
    """
    Nodes lying on at least one simple s-t path, None when s and t are disconnected.
    They form the biconnected block holding a virtual s-t link.
    """
    s, t = net.source, net.target
    graph = net.to_graph()
    if not nx.has_path(graph, s, t):
        return None
    graph.add_edge(s, t)
    for block in nx.biconnected_components(graph):
        if s in block and t in block:
            return set(block)
    return {s, t}


class WorkingGraph:
    """
    Mutable multigraph over edge ids, reduced in place by series/parallel steps.

    Nodes waiting for inspection sit in a heap (smallest id first) or, when an
    rng is given, are drawn at random. With `values` set, every merge also
    combines the edge values under `system`.
    """

    def __init__(self, source: int, target: int, n_edges: int, system: Optional[RuleSystem] = None,
                 rng: Optional[np.random.Generator] = None):
        self.source = source
        self.target = target
        self.system = system
        self.rng = rng
        self.adj: Dict[int, Dict[int, List[int]]] = {source: {}, target: {}}
        self.ends: Dict[int, Tuple[int, int]] = {}
        self.values: Optional[Dict[int, float]] = {} if system is not None else None
        self.trace = ReductionTrace(source, target, n_edges)
        self.next_id = n_edges
        self._queue: List[int] = []
        self._queued: Set[int] = set()

    @classmethod
    def from_network(cls, net: Network, system: Optional[RuleSystem] = None,
                     rng: Optional[np.random.Generator] = None) -> "WorkingGraph":
        """Load the s-t block of a two-terminal network; everything else is pruned up front."""
        block = st_block_nodes(net)
        wg = cls(net.source, net.target, len(net.edges), system, rng)
        for idx, e in enumerate(net.edges):
            if e.is_loop or block is None or e.u not in block or e.v not in block:
                wg.trace.pruned.append(idx)
                continue
            value = system.from_theta(e.theta) if system is not None else None
            wg._attach(idx, e.u, e.v, value)
        if wg.trace.pruned:
            logger.debug(f"Pruned {len(wg.trace.pruned)} links off the s-t block of {net.name or 'network'}")
        for node in sorted(wg.adj):
            wg.mark(node)
        return wg

    # --- low-level edits ---

    def _attach(self, eid: int, u: int, v: int, value=None):
        self.ends[eid] = (u, v)
        self.adj.setdefault(u, {}).setdefault(v, []).append(eid)
        self.adj.setdefault(v, {}).setdefault(u, []).append(eid)
        if self.values is not None:
            self.values[eid] = value

    def _detach(self, eid: int):
        u, v = self.ends.pop(eid)
        for a, b in ((u, v), (v, u)):
            bundle = self.adj[a][b]
            bundle.remove(eid)
            if not bundle:
                del self.adj[a][b]
        return self.values.pop(eid) if self.values is not None else None

    def mark(self, node: int):
        if node in self._queued:
            return
        self._queued.add(node)
        if self.rng is None:
            heapq.heappush(self._queue, node)
        else:
            self._queue.append(node)

    def _pop(self) -> int:
        if self.rng is None:
            node = heapq.heappop(self._queue)
        else:
            i = int(self.rng.integers(len(self._queue)))
            self._queue[i], self._queue[-1] = self._queue[-1], self._queue[i]
            node = self._queue.pop()
        self._queued.discard(node)
        return node

    def add_edge(self, u: int, v: int, value=None) -> int:
        eid = self.next_id
        self.next_id += 1
        self._attach(eid, u, v, value)
        self.mark(u)
        self.mark(v)
        return eid

    def remove_node(self, node: int) -> List[int]:
        removed = []
        for nb in list(self.adj.get(node, {})):
            for eid in list(self.adj[node][nb]):
                self._detach(eid)
                removed.append(eid)
            self.mark(nb)
        self.adj.pop(node, None)
        return removed

    # --- reductions ---

    def _merge_parallel(self, u: int, v: int):
        consumed = tuple(sorted(self.adj[u][v]))
        olds = [self._detach(eid) for eid in consumed]
        value = parallel(self.system, olds) if self.values is not None else None
        produced = self.add_edge(u, v, value)
        self.trace.steps.append(ReductionStep("parallel", consumed, produced))

    def _merge_series(self, node: int):
        a, b = sorted(self.adj[node])
        e1, e2 = self.adj[node][a][0], self.adj[node][b][0]
        olds = [self._detach(e1), self._detach(e2)]
        del self.adj[node]
        value = series(self.system, olds) if self.values is not None else None
        produced = self.add_edge(a, b, value)
        self.trace.steps.append(ReductionStep("series", (e1, e2), produced, via=node))

    def _prune(self, node: int):
        for eid in self.remove_node(node):
            self.trace.pruned.append(eid)

    def run(self) -> bool:
        """Apply series/parallel reductions until none applies. True when fully reduced."""
        while self._queue:
            node = self._pop()
            if node not in self.adj:
                continue
            for nb in sorted(self.adj[node]):
                if nb in self.adj[node] and len(self.adj[node][nb]) >= 2:
                    self._merge_parallel(node, nb)
            if node in (self.source, self.target):
                continue
            degree = len(self.adj[node])
            if degree == 0:
                del self.adj[node]
            elif degree == 1:
                self._prune(node)
            elif degree == 2:
                self._merge_series(node)
        return self.is_reduced

    @property
    def interior(self) -> List[int]:
        return sorted(n for n in self.adj if n not in (self.source, self.target))

    @property
    def is_reduced(self) -> bool:
        return not self.interior

    def final_edge(self) -> Optional[int]:
        bundle = self.adj[self.source].get(self.target, [])
        return bundle[0] if len(bundle) == 1 else None

    def final_value(self):
        eid = self.final_edge()
        if eid is None:
            return 0.0
        return self.values[eid]

    def finish(self) -> ReductionTrace:
        self.trace.final_edge = self.final_edge()
        return self.trace


def _two_terminal(net: Network) -> Network:
    if not net.has_terminals:
        raise ParameterError("network has no terminal sets")
    return contract_terminals(net)


def is_series_parallel(net: Network, rng: Optional[np.random.Generator] = None) -> Tuple[bool, Optional[ReductionTrace]]:
    """
    True with the reduction trace when series and parallel merges alone reduce
    the network to a single s-t link (or to nothing, for disconnected terminals).
    """
    if not net.is_two_terminal:
        raise ParameterError("is_series_parallel needs single-node terminals; apply contract_terminals first")
    wg = WorkingGraph.from_network(net, rng=rng)
    if not wg.run():
        logger.debug(f"{net.name or 'network'} is not series-parallel, remaining interior {wg.interior}")
        return False, None
    return True, wg.finish()


def sp_trace(net: Network, rng: Optional[np.random.Generator] = None) -> Tuple[Network, ReductionTrace]:
    """Contract the terminals and reduce; raises NotSeriesParallelError naming a blocking node."""
    two_terminal = _two_terminal(net)
    wg = WorkingGraph.from_network(two_terminal, rng=rng)
    if not wg.run():
        blocking = wg.interior[0]
        raise NotSeriesParallelError(blocking, f"{net.name or 'network'} is not series-parallel: node {blocking} "
                                               f"cannot be removed by series or parallel merges")
    return two_terminal, wg.finish()


def reduce_sp(net: Network, system) -> float:
    """Exact P_SC (classical) or C_SC (concurrence) of a series-parallel network."""
    system = RuleSystem.parse(system)
    two_terminal, trace = sp_trace(net)
    value = trace.replay(system, [system.from_theta(e.theta) for e in two_terminal.edges])
    logger.debug(f"reduce_sp {system.value} on {net.name or 'network'}: {len(trace.steps)} steps, value {value:.12g}")
    return float(value)


def reduce_sp_traced(net: Network, system) -> Tuple[float, ReductionTrace]:
    system = RuleSystem.parse(system)
    two_terminal, trace = sp_trace(net)
    edge_values = [system.from_theta(e.theta) for e in two_terminal.edges]
    return float(trace.replay(system, edge_values)), trace.annotated(system, edge_values)


def sweep_sp(net: Network, system, theta_grid) -> SweepCurve:
    """Exact curve with the grid's theta applied uniformly to all links, one vectorised replay."""
    system = RuleSystem.parse(system)
    _, trace = sp_trace(net)
    thetas = np.asarray(theta_grid, dtype=float)

    def evaluator(theta):
        value = system.from_theta(theta)
        return trace.replay(system, [value] * trace.n_edges)

    return SweepCurve(thetas, evaluator(thetas), "exact-sp", net.name, system, evaluator)


# === Bethe lattice in closed recursion ===

def bethe_layer_profile(k: int, L: int, value, system) -> np.ndarray:
    """
    Exact sponge-crossing value of contracted Bethe trees of every depth 1..L at once.

    x_0 = 1, x_{j+1} = parallel_{k-1}(w x_j); depth-l value = parallel_k(w x_{l-1}).
    Returns an array of shape (L,) + shape(value).
    """
    system = RuleSystem.parse(system)
    if k < 2 or L < 1:
        raise ParameterError(f"Bethe recursion needs k >= 2 and L >= 1, got k={k}, L={L}")
    w = np.asarray(value, dtype=float)
    x = np.ones_like(w)
    out = np.empty((L,) + w.shape)
    for depth in range(L):
        out[depth] = parallel_power(system, w * x, k)
        x = parallel_power(system, w * x, k - 1)
    return out


def bethe_sponge_crossing(k: int, L: int, value, system):
    """Same value reduce_sp gives on build_bethe(k, L), in O(L) time."""
    out = bethe_layer_profile(k, L, value, system)[-1]
    return float(out) if np.ndim(out) == 0 else out


def sweep_bethe(k: int, L: int, system, theta_grid) -> SweepCurve:
    system = RuleSystem.parse(system)
    thetas = np.asarray(theta_grid, dtype=float)

    def evaluator(theta):
        return bethe_sponge_crossing(k, L, system.from_theta(theta), system)

    return SweepCurve(thetas, evaluator(thetas), "exact-sp", f"bethe-k{k}-L{L}", system, evaluator)
