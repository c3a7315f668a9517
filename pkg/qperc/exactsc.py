"""
Brute-force oracles for small networks.

- exact_classical_sc: sponge-crossing probability by enumerating all 2^E link configurations
- enumerate_paths: exhaustive self-avoiding path counts between the terminal sets
- path_union_probability: the same probability by inclusion-exclusion over s-t paths

There is no brute-force oracle for concurrence; it is defined only through its rules.
"""

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
from networkx.utils import UnionFind

from qperc.errors import ParameterError, SizeLimitError
from qperc.logger import init_logger
from qperc.netcore import Network, contract_terminals, weight_views
from qperc.workers import parallel_map

logger = init_logger(name="ExactSC", component="qperc")

MAX_ORACLE_EDGES = 25
MAX_INCLUSION_EXCLUSION_EDGES = 12
MAX_INCLUSION_EXCLUSION_PATHS = 20


@dataclass
class PathEnsemble:
    """
    Path counts N_l keyed by length l.

    `order` is the approximation order m that produced the ensemble, None for
    an exhaustive count. `truncated` is set when a path or length cap cut the
    enumeration short.
    """
    counts: Dict[int, int] = field(default_factory=dict)
    order: Optional[int] = None
    provenance: str = ""
    truncated: bool = False

    def __post_init__(self):
        clean = {}
        for length, n in self.counts.items():
            length, n = int(length), int(n)
            if length < 1:
                raise ParameterError(f"path length must be >= 1, got {length}")
            if n < 0:
                raise ParameterError(f"path count must be >= 0, got {n} for length {length}")
            if n > 0:
                clean[length] = n
        self.counts = dict(sorted(clean.items()))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def lengths(self) -> List[int]:
        return list(self.counts)

    def restrict(self, m: int) -> "PathEnsemble":
        """Keep the m shortest length classes."""
        keep = self.lengths[:m]
        return PathEnsemble({l: self.counts[l] for l in keep}, m, self.provenance, self.truncated)

    def merged(self, other: "PathEnsemble") -> "PathEnsemble":
        counts = Counter(self.counts)
        counts.update(other.counts)
        order = self.order if self.order == other.order else None
        return PathEnsemble(dict(counts), order, self.provenance or other.provenance,
                            self.truncated or other.truncated)

    def to_dict(self) -> dict:
        return {
            "counts": {str(l): n for l, n in self.counts.items()},
            "order": self.order,
            "provenance": self.provenance,
            "truncated": self.truncated,
        }


# === Configuration enumeration ===

def _link_list(net: Network) -> Tuple[int, int, List[Tuple[int, int]], List[float]]:
    contracted = contract_terminals(net)
    links = [(e.u, e.v) for e in contracted.edges if not e.is_loop]
    probs = [weight_views(e.theta)[0] for e in contracted.edges if not e.is_loop]
    return contracted.source, contracted.target, links, probs


def _enumerate_chunk(task) -> float:
    source, target, links, probs, prefix = task
    fixed = len(prefix)
    terms = []
    for tail in itertools.product((False, True), repeat=len(links) - fixed):
        state = prefix + tail
        weight = 1.0
        uf = UnionFind()
        for present, (u, v), p in zip(state, links, probs):
            if present:
                weight *= p
                uf.union(u, v)
            else:
                weight *= 1.0 - p
            if weight == 0.0:
                break
        if weight != 0.0 and uf[source] == uf[target]:
            terms.append(weight)
    return math.fsum(terms)


def exact_classical_sc(net: Network, jobs: int = 1, max_edges: int = MAX_ORACLE_EDGES) -> float:
    """
    Exact P_SC: sum over all link subsets of prod p (present) * prod (1-p) (absent),
    restricted to subsets joining S and T. Self-loops are ignored.
    """
    source, target, links, probs = _link_list(net)
    if len(links) > max_edges:
        raise SizeLimitError(f"configuration enumeration is limited to {max_edges} links, network has {len(links)}")
    if not links:
        return 0.0

    # 2^prefix_bits independent chunks
    prefix_bits = min(len(links), 6) if jobs > 1 else 0
    tasks = [(source, target, links, probs, prefix)
             for prefix in itertools.product((False, True), repeat=prefix_bits)]
    value = math.fsum(parallel_map(_enumerate_chunk, tasks, jobs=jobs))
    logger.debug(f"Enumerated 2^{len(links)} configurations of {net.name or 'network'}: P_SC={value:.12g}")
    return min(1.0, max(0.0, value))


# === Path enumeration ===

@dataclass
class PathCount:
    counts: Counter
    capped: bool = False
    length_limited: bool = False


def count_simple_paths(graph: nx.MultiGraph, source: int, target: int, cap_length: int,
                       path_cap: Optional[int] = None,
                       dist_to_target: Optional[Dict[int, int]] = None) -> PathCount:
    """
    Count self-avoiding source-target paths of length <= cap_length by DFS.

    Branches that cannot reach the target within the remaining budget are cut
    using shortest-path distances to the target. Parallel links multiply the count.
    `capped` reports that path_cap stopped the search, `length_limited` that
    some branch was cut by cap_length (longer paths may exist).
    """
    if source == target:
        raise ParameterError("source and target must differ")
    if dist_to_target is None:
        dist_to_target = nx.single_source_shortest_path_length(graph, target)
    result = PathCount(Counter())
    if source not in dist_to_target:
        return result
    if dist_to_target[source] > cap_length:
        result.length_limited = True
        return result

    visited = {source}
    found = 0

    def dfs(node: int, depth: int, multiplicity: int):
        nonlocal found
        for nb, links in graph.adj[node].items():
            if result.capped:
                return
            if nb in visited:
                continue
            weight = multiplicity * len(links)
            if nb == target:
                result.counts[depth + 1] += weight
                found += weight
                if path_cap is not None and found >= path_cap:
                    result.capped = True
                continue
            remaining = dist_to_target.get(nb)
            if remaining is None:
                continue
            if depth + 1 + remaining > cap_length:
                result.length_limited = True
                continue
            visited.add(nb)
            dfs(nb, depth + 1, weight)
            visited.discard(nb)

    dfs(source, 0, 1)
    return result


def enumerate_paths(net: Network, cap_length: int, path_cap: Optional[int] = None) -> PathEnsemble:
    """Exhaustive self-avoiding path counts summed over all pairs s in S, t in T, lengths <= cap_length."""
    if not net.has_terminals:
        raise ParameterError("enumerate_paths needs terminal sets S and T")
    if cap_length < 1:
        raise ParameterError(f"cap_length must be >= 1, got {cap_length}")
    graph = net.to_multigraph()
    total = Counter()
    truncated = False
    for t in sorted(net.targets):
        dist = nx.single_source_shortest_path_length(graph, t)
        for s in sorted(net.sources):
            found = count_simple_paths(graph, s, t, cap_length, path_cap, dist)
            total.update(found.counts)
            truncated = truncated or found.capped
    if truncated:
        logger.warning(f"Path enumeration on {net.name or 'network'} hit the cap of {path_cap} paths per pair")
    return PathEnsemble(dict(total), None, f"{net.name or 'network'}:exhaustive<={cap_length}", truncated)


# === Inclusion-exclusion cross-check ===

def _path_edge_sets(net: Network) -> Tuple[List[int], List[float]]:
    """Edge-id bitmasks of every simple s-t path of the contracted network."""
    contracted = contract_terminals(net)
    s, t = contracted.source, contracted.target
    probs = [weight_views(e.theta)[0] for e in contracted.edges]
    incident = {n: [] for n in contracted.nodes}
    for idx, e in enumerate(contracted.edges):
        if not e.is_loop:
            incident[e.u].append((idx, e.v))
            incident[e.v].append((idx, e.u))

    masks = []
    visited = {s}

    def dfs(node: int, mask: int):
        for idx, nb in incident[node]:
            if nb in visited:
                continue
            if nb == t:
                masks.append(mask | (1 << idx))
                if len(masks) > MAX_INCLUSION_EXCLUSION_PATHS:
                    raise SizeLimitError(f"inclusion-exclusion is limited to {MAX_INCLUSION_EXCLUSION_PATHS} paths")
                continue
            visited.add(nb)
            dfs(nb, mask | (1 << idx))
            visited.discard(nb)

    dfs(s, 0)
    return masks, probs


def path_union_probability(net: Network, max_edges: int = MAX_INCLUSION_EXCLUSION_EDGES) -> float:
    """P(at least one s-t path fully open) by inclusion-exclusion over the path events."""
    links = sum(1 for e in net.edges if not e.is_loop)
    if links > max_edges:
        raise SizeLimitError(f"inclusion-exclusion is limited to {max_edges} links, network has {links}")
    masks, probs = _path_edge_sets(net)

    def mask_probability(mask: int) -> float:
        out = 1.0
        idx = 0
        while mask:
            if mask & 1:
                out *= probs[idx]
            mask >>= 1
            idx += 1
        return out

    terms = []

    def expand(start: int, union: int, size: int):
        for i in range(start, len(masks)):
            merged = union | masks[i]
            sign = 1.0 if size % 2 == 0 else -1.0
            terms.append(sign * mask_probability(merged))
            expand(i + 1, merged, size + 1)

    expand(0, 0, 0)
    return math.fsum(terms)


def exact_classical_from_paths_check(net: Network, tol: float = 1e-10) -> bool:
    """Configuration enumeration and path inclusion-exclusion must agree."""
    by_config = exact_classical_sc(net, max_edges=MAX_INCLUSION_EXCLUSION_EDGES)
    by_paths = path_union_probability(net)
    agree = abs(by_config - by_paths) <= tol
    if not agree:
        logger.warning(f"Oracle mismatch on {net.name or 'network'}: configurations {by_config!r} vs paths {by_paths!r}")
    return agree
