"""
Network model shared by every qperc module.

- LinkWeight: canonical per-link angle theta in [0, pi/4], with the derived
  singlet conversion probability p = 2 sin^2(theta) and concurrence c = sin(2 theta)
- Network: immutable node/edge multigraph with terminal sets S and T
- Generators for Bethe trees, square/honeycomb/triangular lattices and ER/BA graphs
- Terminal contraction and the JSON network file format
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx
import orjson

from qperc.errors import NetworkFormatError, ParameterError
from qperc.logger import init_logger

logger = init_logger(name="NetCore", component="qperc")

QUARTER_PI = math.pi / 4
BOUNDARY_SLACK = 1e-15

# Reserved ids of the contracted terminals
MEGA_SOURCE = -1
MEGA_TARGET = -2

LATTICE_FAMILIES = ("square", "honeycomb", "triangular")
RANDOM_FAMILIES = ("er", "ba")
FAMILIES = ("bethe",) + LATTICE_FAMILIES + RANDOM_FAMILIES


def _clamp_unit(x: float, name: str, upper: float = 1.0) -> float:
    if x is None or math.isnan(x):
        raise ParameterError(f"{name} must be a number, got {x!r}")
    if -BOUNDARY_SLACK <= x < 0.0:
        return 0.0
    if upper < x <= upper + BOUNDARY_SLACK:
        return upper
    if not 0.0 <= x <= upper:
        raise ParameterError(f"{name}={x} is outside [0, {upper}]")
    return float(x)


def weight_views(theta: float) -> Tuple[float, float]:
    """Return (p, c) = (2 sin^2 theta, sin 2 theta) for theta in [0, pi/4]."""
    theta = _clamp_unit(theta, "theta", QUARTER_PI)
    return 2.0 * math.sin(theta) ** 2, math.sin(2.0 * theta)


def theta_from_p(p: float) -> float:
    p = _clamp_unit(p, "p")
    return math.asin(math.sqrt(p / 2.0))


def theta_from_c(c: float) -> float:
    c = _clamp_unit(c, "c")
    return 0.5 * math.asin(c)


@dataclass(frozen=True)
class LinkWeight:
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _clamp_unit(self.theta, "theta", QUARTER_PI))

    @property
    def p(self) -> float:
        return weight_views(self.theta)[0]

    @property
    def c(self) -> float:
        return weight_views(self.theta)[1]

    @property
    def units(self) -> float:
        """theta in units of pi/4, the convention of the printed threshold tables."""
        return self.theta / QUARTER_PI

    @classmethod
    def from_p(cls, p: float) -> "LinkWeight":
        return cls(theta_from_p(p))

    @classmethod
    def from_c(cls, c: float) -> "LinkWeight":
        return cls(theta_from_c(c))

    @classmethod
    def from_units(cls, units: float) -> "LinkWeight":
        return cls(_clamp_unit(units, "theta/(pi/4)") * QUARTER_PI)


def as_weight(theta) -> LinkWeight:
    return theta if isinstance(theta, LinkWeight) else LinkWeight(theta)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    theta: float

    @property
    def is_loop(self) -> bool:
        return self.u == self.v

    def key(self) -> Tuple[int, int, float]:
        a, b = (self.u, self.v) if self.u <= self.v else (self.v, self.u)
        return a, b, self.theta


@dataclass(frozen=True)
class Network:
    nodes: Tuple[int, ...]
    edges: Tuple[Edge, ...]
    sources: FrozenSet[int] = frozenset()
    targets: FrozenSet[int] = frozenset()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(self.nodes))))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "sources", frozenset(self.sources))
        object.__setattr__(self, "targets", frozenset(self.targets))

        node_set = set(self.nodes)
        for e in self.edges:
            if e.u not in node_set or e.v not in node_set:
                raise ParameterError(f"edge ({e.u}, {e.v}) references an unknown node")
            _clamp_unit(e.theta, f"theta of edge ({e.u}, {e.v})", QUARTER_PI)
        if self.sources or self.targets:
            if not self.sources or not self.targets:
                raise ParameterError("terminal sets S and T must both be nonempty")
            if self.sources & self.targets:
                raise ParameterError(f"S and T overlap: {sorted(self.sources & self.targets)}")
            missing = (self.sources | self.targets) - node_set
            if missing:
                raise ParameterError(f"terminals {sorted(missing)} are not nodes of the network")

    @property
    def has_terminals(self) -> bool:
        return bool(self.sources) and bool(self.targets)

    @property
    def is_two_terminal(self) -> bool:
        return len(self.sources) == 1 and len(self.targets) == 1

    @property
    def source(self) -> int:
        if len(self.sources) != 1:
            raise ParameterError("network has no single source; apply contract_terminals first")
        return next(iter(self.sources))

    @property
    def target(self) -> int:
        if len(self.targets) != 1:
            raise ParameterError("network has no single target; apply contract_terminals first")
        return next(iter(self.targets))

    def with_terminals(self, sources: Iterable[int], targets: Iterable[int]) -> "Network":
        return Network(self.nodes, self.edges, frozenset(sources), frozenset(targets), self.name)

    def with_uniform_theta(self, theta) -> "Network":
        t = as_weight(theta).theta
        return Network(self.nodes, tuple(Edge(e.u, e.v, t) for e in self.edges),
                       self.sources, self.targets, self.name)

    def with_edges(self, edges: Iterable[Edge]) -> "Network":
        return Network(self.nodes, tuple(edges), self.sources, self.targets, self.name)

    def canonical_edges(self) -> List[Tuple[int, int, float]]:
        return sorted(e.key() for e in self.edges)

    def degree(self, node: int) -> int:
        return sum((e.u == node) + (e.v == node) for e in self.edges if not e.is_loop)

    def to_multigraph(self) -> nx.MultiGraph:
        """networkx view without self-loops; edge attribute 'theta', key = edge index."""
        g = nx.MultiGraph()
        g.add_nodes_from(self.nodes)
        for idx, e in enumerate(self.edges):
            if not e.is_loop:
                g.add_edge(e.u, e.v, key=idx, theta=e.theta)
        return g

    def to_graph(self) -> nx.Graph:
        return nx.Graph(self.to_multigraph())

    def to_dict(self) -> dict:
        out = {
            "nodes": list(self.nodes),
            "edges": [{"u": e.u, "v": e.v, "theta": e.theta} for e in self.edges],
            "S": sorted(self.sources),
            "T": sorted(self.targets),
        }
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        try:
            nodes = [int(n) for n in data["nodes"]]
            edges = [Edge(int(e["u"]), int(e["v"]), float(e["theta"])) for e in data["edges"]]
            sources = frozenset(int(n) for n in data.get("S", []))
            targets = frozenset(int(n) for n in data.get("T", []))
        except (KeyError, TypeError, ValueError) as e:
            raise NetworkFormatError(f"malformed network document: {e}")
        try:
            return cls(tuple(nodes), tuple(edges), sources, targets, str(data.get("name", "")))
        except ParameterError as e:
            raise NetworkFormatError(str(e))


def save_network(net: Network, path, manifest: Optional[dict] = None) -> Path:
    doc = net.to_dict()
    if manifest is not None:
        doc["manifest"] = manifest
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(doc, option=orjson.OPT_INDENT_2))
    return path


def load_network(path) -> Network:
    path = Path(path)
    try:
        data = orjson.loads(path.read_bytes())
    except FileNotFoundError:
        raise NetworkFormatError(f"network file not found: {path}")
    except orjson.JSONDecodeError as e:
        raise NetworkFormatError(f"{path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise NetworkFormatError(f"{path} must hold a JSON object")
    net = Network.from_dict(data)
    logger.info(f"Loaded {path}: {len(net.nodes)} nodes, {len(net.edges)} edges")
    return net


# === Generators ===

@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    params: Dict[str, float] = field(default_factory=dict)
    theta: float = QUARTER_PI
    seed: Optional[int] = None

    def _require(self, *keys: str) -> Dict[str, float]:
        missing = [k for k in keys if self.params.get(k) is None]
        if missing:
            raise ParameterError(f"{self.family} generator needs parameter(s) {', '.join(map(repr, missing))}")
        return {k: self.params[k] for k in keys}

    def build(self) -> Network:
        family = self.family.lower()
        if family == "bethe":
            p = self._require("k", "L")
            return build_bethe(int(p["k"]), int(p["L"]), self.theta)
        if family in LATTICE_FAMILIES:
            return build_lattice(family, int(self._require("n")["n"]), self.theta)
        if family in RANDOM_FAMILIES:
            key = "kbar" if family == "er" else "z"
            p = self._require("N", key)
            seed = self.seed if self.seed is not None else int(self.params.get("seed", 0))
            return build_random(family, int(p["N"]), p[key], seed, self.theta)
        if family == "bridge":
            return build_bridge(self.theta)
        raise ParameterError(f"unknown network family {self.family!r}; expected one of {FAMILIES + ('bridge',)}")


def bethe_node_count(k: int, L: int) -> int:
    if k == 2:
        return 1 + 2 * L
    return 1 + k * ((k - 1) ** L - 1) // (k - 2)


def build_bethe(k: int, L: int, theta=QUARTER_PI) -> Network:
    """Cayley tree: root of degree k, interior nodes of degree k, L layers. S = root, T = layer-L leaves."""
    if k < 2:
        raise ParameterError(f"Bethe degree k must be >= 2, got {k}")
    if L < 1:
        raise ParameterError(f"Bethe layer count L must be >= 1, got {L}")
    t = as_weight(theta).theta

    edges = []
    layer = [0]
    next_id = 1
    for depth in range(L):
        children_per_node = k if depth == 0 else k - 1
        new_layer = []
        for parent in layer:
            for _ in range(children_per_node):
                edges.append(Edge(parent, next_id, t))
                new_layer.append(next_id)
                next_id += 1
        layer = new_layer

    net = Network(tuple(range(next_id)), tuple(edges), frozenset({0}), frozenset(layer), f"bethe-k{k}-L{L}")
    logger.info(f"Built Bethe lattice k={k}, L={L}: {len(net.nodes)} nodes, {len(net.edges)} edges")
    return net


def lattice_node_id(x: int, y: int, n: int) -> int:
    """Dense id of lattice site (x, y), 1-based; x runs from the left (S) to the right (T) boundary."""
    return (x - 1) * n + (y - 1)


def lattice_coords(node: int, n: int) -> Tuple[int, int]:
    return node // n + 1, node % n + 1


def build_lattice(family: str, n: int, theta=QUARTER_PI) -> Network:
    """
    n x n lattice with free boundaries. S = left column (x = 1), T = right column (x = n).

    square:     nearest neighbours
    triangular: square plus the (x, y)-(x+1, y+1) diagonal of every cell
    honeycomb:  brick wall, i.e. rows plus the vertical bond (x, y)-(x, y+1) when x + y is even
    """
    family = family.lower()
    if family not in LATTICE_FAMILIES:
        raise ParameterError(f"unknown lattice family {family!r}; expected one of {LATTICE_FAMILIES}")
    if n < 2:
        raise ParameterError(f"lattice side n must be >= 2, got {n}")
    t = as_weight(theta).theta
    nid = lambda x, y: lattice_node_id(x, y, n)

    edges = []
    for x in range(1, n + 1):
        for y in range(1, n + 1):
            if x < n:
                edges.append(Edge(nid(x, y), nid(x + 1, y), t))
            if y < n and (family != "honeycomb" or (x + y) % 2 == 0):
                edges.append(Edge(nid(x, y), nid(x, y + 1), t))
            if family == "triangular" and x < n and y < n:
                edges.append(Edge(nid(x, y), nid(x + 1, y + 1), t))

    sources = frozenset(nid(1, y) for y in range(1, n + 1))
    targets = frozenset(nid(n, y) for y in range(1, n + 1))
    net = Network(tuple(range(n * n)), tuple(edges), sources, targets, f"{family}-n{n}")
    logger.info(f"Built {family} lattice n={n}: {len(net.nodes)} nodes, {len(net.edges)} edges")
    return net


def select_diameter_terminals(graph: nx.Graph) -> Tuple[int, int]:
    """
    Pick s, t in the largest component with d(s, t) equal to its diameter.
    Ties go to the smallest ids so the choice is reproducible.
    """
    if graph.number_of_nodes() == 0:
        raise ParameterError("cannot select terminals in an empty graph")
    component = max(nx.connected_components(graph), key=lambda c: (len(c), -min(c)))
    if len(component) < 2:
        raise ParameterError("cannot select terminals: the largest component is a single node")
    core = graph.subgraph(component)
    periphery = nx.periphery(core, usebounds=True)
    s = min(periphery)
    dist = nx.single_source_shortest_path_length(core, s)
    diameter = max(dist.values())
    t = min(v for v, d in dist.items() if d == diameter)
    return s, t


def build_random(family: str, N: int, param: float, seed: int, theta=QUARTER_PI) -> Network:
    """
    ER G(N, kbar/(N-1)) or BA growth with `param` = z links per new node, seeded
    from a (z+1)-clique. Terminals are a diameter-realising pair of the largest component.
    """
    family = family.lower()
    if family not in RANDOM_FAMILIES:
        raise ParameterError(f"unknown random family {family!r}; expected one of {RANDOM_FAMILIES}")
    if N < 2:
        raise ParameterError(f"N must be >= 2, got {N}")
    t = as_weight(theta).theta

    if family == "er":
        if param < 0 or param > N - 1:
            raise ParameterError(f"ER mean degree must lie in [0, N-1], got {param}")
        graph = nx.gnp_random_graph(N, param / (N - 1), seed=seed)
    else:
        z = int(param)
        if z < 1 or z != param:
            raise ParameterError(f"BA attachment count z must be an integer >= 1, got {param}")
        if N < z + 1:
            raise ParameterError(f"BA needs N >= z + 1, got N={N}, z={z}")
        graph = nx.barabasi_albert_graph(N, z, seed=seed, initial_graph=nx.complete_graph(z + 1))

    s, tt = select_diameter_terminals(graph)
    edges = tuple(Edge(u, v, t) for u, v in sorted(tuple(sorted(e)) for e in graph.edges()))
    net = Network(tuple(range(N)), edges, frozenset({s}), frozenset({tt}), f"{family}-N{N}-{param}-seed{seed}")
    logger.info(f"Built {family} network N={N}, param={param}, seed={seed}: {len(edges)} edges, terminals {s}->{tt}")
    return net


def build_bridge(theta=QUARTER_PI) -> Network:
    """Six-node demonstration lattice: links 1-2, 2-4, 1-3, 3-4, 3-5, 5-6, 4-6; terminals 1 and 6."""
    t = as_weight(theta).theta
    pairs = [(1, 2), (2, 4), (1, 3), (3, 4), (3, 5), (5, 6), (4, 6)]
    return Network(tuple(range(1, 7)), tuple(Edge(u, v, t) for u, v in pairs),
                   frozenset({1}), frozenset({6}), "bridge")


def contract_terminals(net: Network) -> Network:
    """
    Merge S into MEGA_SOURCE and T into MEGA_TARGET. Links inside S (or inside T)
    disappear, links between the sets become parallel MEGA_SOURCE-MEGA_TARGET links.
    Single-node terminal sets are left untouched.
    """
    if not net.has_terminals:
        raise ParameterError("contract_terminals needs nonempty terminal sets S and T")
    if net.is_two_terminal:
        return net

    def mapped(node: int) -> int:
        if node in net.sources:
            return MEGA_SOURCE
        if node in net.targets:
            return MEGA_TARGET
        return node

    edges = []
    dropped = 0
    for e in net.edges:
        u, v = mapped(e.u), mapped(e.v)
        if u == v and u in (MEGA_SOURCE, MEGA_TARGET):
            dropped += 1
            continue
        edges.append(Edge(u, v, e.theta))
    interior = [n for n in net.nodes if n not in net.sources and n not in net.targets]
    logger.debug(f"Contracted {len(net.sources)} sources and {len(net.targets)} targets, dropped {dropped} internal links")
    return Network(tuple(interior) + (MEGA_SOURCE, MEGA_TARGET), tuple(edges),
                   frozenset({MEGA_SOURCE}), frozenset({MEGA_TARGET}), net.name)
