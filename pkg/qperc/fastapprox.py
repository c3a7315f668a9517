"""
Fast pipeline: treat every counted path as an independent parallel branch.

- parallel_approx: C'_SC (or P'_SC) of a PathEnsemble, accumulated in log space
- S_m path counting: closed form for Bethe trees, exact transfer counting on the
  square lattice for m <= 3, depth-limited DFS elsewhere
- threshold_halfpoint: theta where a curve crosses 1/2
"""

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from qperc.config import Settings, load_settings
from qperc.curves import SweepCurve, ThresholdEstimate
from qperc.errors import NumericalError, ParameterError
from qperc.exactsc import PathEnsemble, count_simple_paths
from qperc.logger import init_logger
from qperc.netcore import QUARTER_PI, Network, build_lattice, build_random
from qperc.rules import RuleSystem, check_unit
from qperc.workers import parallel_map

logger = init_logger(name="FastApprox", component="qperc")

LN4 = math.log(4.0)
LN2 = math.log(2.0)
SMALL_EXPONENT = -30.0
HALFPOINT_TOL = 1e-5
DEFAULT_GRID = np.linspace(0.0, QUARTER_PI, 201)


@dataclass(frozen=True)
class SmSpec:
    """S_m settings; m=None stands for the exhaustive (m = infinity) ensemble."""
    m: Optional[int]
    path_cap: int = 10 ** 6
    length_factor: int = 4

    def __post_init__(self):
        if self.m is not None and self.m < 1:
            raise ParameterError(f"approximation order m must be >= 1, got {self.m}")
        if self.path_cap < 1 or self.length_factor < 1:
            raise ParameterError("path_cap and length_factor must be >= 1")

    @property
    def label(self) -> str:
        return "inf" if self.m is None else str(self.m)

    def require_finite(self):
        if self.m is None:
            raise ParameterError("m = infinity is only available for Bethe lattices; give a finite m")

    def check_family(self, family: str):
        if family != "bethe":
            self.require_finite()

    @classmethod
    def from_settings(cls, m: Union[Optional[int], "SmSpec"], settings: Optional[Settings] = None,
                      path_cap: Optional[int] = None) -> "SmSpec":
        if isinstance(m, SmSpec):
            return m
        settings = settings or load_settings()
        return cls(m, settings.path_cap if path_cap is None else path_cap, settings.length_factor)


# === Parallel approximation ===

def _log_branch_loss(lengths: np.ndarray, log_v: np.ndarray, system: RuleSystem) -> np.ndarray:
    """
    log(-log h(v^l)) for every (length, value) pair, h = fidelity factor g for
    concurrence and 1 - x for classical.
    """
    lx = lengths[:, None] * log_v[None, :]
    if system is RuleSystem.CONCURRENCE:
        x2 = np.exp(2.0 * lx)
        exact = np.log(-np.log1p(-x2 / (2.0 * (1.0 + np.sqrt(1.0 - x2)))))
        return np.where(2.0 * lx < SMALL_EXPONENT, 2.0 * lx - LN4, exact)
    x = np.exp(lx)
    exact = np.log(-np.log1p(-x))
    return np.where(lx < SMALL_EXPONENT, lx, exact)


def parallel_approx(ensemble: PathEnsemble, value, system=RuleSystem.CONCURRENCE):
    """
    concurrence: F = max(1/2, prod_l g(c^l)^N_l), C' = 2 sqrt(F - F^2)
    classical:   P' = 1 - prod_l (1 - p^l)^N_l

    Broadcasts over `value`; -log of the product is summed with logsumexp so
    astronomically large N_l do not overflow.
    """
    system = RuleSystem.parse(system)
    v = check_unit(value, system.variable)
    flat = np.atleast_1d(v).ravel()
    if not ensemble.counts:
        out = np.zeros_like(flat)
    else:
        lengths = np.array(ensemble.lengths, dtype=float)
        log_n = np.array([math.log(n) for n in ensemble.counts.values()])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            log_loss = _log_branch_loss(lengths, np.log(flat), system)
            neg_log = np.exp(logsumexp(log_n[:, None] + log_loss, axis=0))
            if system is RuleSystem.CONCURRENCE:
                log_f = -neg_log
                f = np.exp(log_f)
                one_minus_f = -np.expm1(log_f)
                out = np.where(neg_log >= LN2, 1.0, 2.0 * np.sqrt(np.clip(f * one_minus_f, 0.0, 0.25)))
            else:
                out = -np.expm1(-neg_log)
        out = np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0)
    out = out.reshape(np.shape(v))
    return float(out) if out.ndim == 0 else out


def sweep_parallel_approx(ensemble: PathEnsemble, system, theta_grid=DEFAULT_GRID, network: str = "") -> SweepCurve:
    system = RuleSystem.parse(system)
    thetas = np.asarray(theta_grid, dtype=float)

    def evaluator(theta):
        return parallel_approx(ensemble, system.from_theta(theta), system)

    order = "inf" if ensemble.order is None else ensemble.order
    return SweepCurve(thetas, evaluator(thetas), f"parallel-approx(m={order})",
                      network or ensemble.provenance, system, evaluator)


# === Path counting ===

def count_paths_bethe(k: int, L: int) -> PathEnsemble:
    """Root to contracted leaf set: k (k-1)^(L-1) paths, all of length L."""
    if k < 2 or L < 1:
        raise ParameterError(f"Bethe path count needs k >= 2 and L >= 1, got k={k}, L={L}")
    return PathEnsemble({L: k * (k - 1) ** (L - 1)}, None, f"bethe-k{k}-L{L}")


# Directions +x, -x, +y, -y; NO_STEP pads the history at the start of a walk
_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))
_REVERSE = (1, 0, 3, 2)
NO_STEP = 4


def _history_transitions(window: int) -> Tuple[List[Tuple[int, ...]], List[np.ndarray]]:
    """
    One 0/1 matrix per direction mapping a step history of length `window` to the
    extended history. Immediate reversals are forbidden, and with window >= 3 so
    is closing a unit square.
    """
    states = list(itertools.product(range(NO_STEP + 1), repeat=window))
    index = {s: i for i, s in enumerate(states)}
    mats = []
    for d in range(4):
        t = np.zeros((len(states), len(states)), dtype=np.int64)
        for s in states:
            last = s[-1]
            if last != NO_STEP and d == _REVERSE[last]:
                continue
            if window >= 3 and NO_STEP not in s[-3:] and set(s[-3:] + (d,)) == {0, 1, 2, 3}:
                continue
            t[index[s], index[s[1:] + (d,)]] = 1
        mats.append(t)
    return states, mats


def _shift_add(dest: np.ndarray, src: np.ndarray, dx: int, dy: int):
    xs_dst = slice(1, None) if dx == 1 else slice(None, -1) if dx == -1 else slice(None)
    xs_src = slice(None, -1) if dx == 1 else slice(1, None) if dx == -1 else slice(None)
    ys_dst = slice(1, None) if dy == 1 else slice(None, -1) if dy == -1 else slice(None)
    ys_src = slice(None, -1) if dy == 1 else slice(1, None) if dy == -1 else slice(None)
    dest[xs_dst, ys_dst] += src[xs_src, ys_src]


def _square_pair_counts(n: int, m: int) -> Dict[int, int]:
    """
    Exact counts of the m shortest length classes over all left-right boundary
    pairs, m in {2, 3}. Walks of length l_1 + 2j can only self-intersect by
    closing a loop of length <= 2j, so a short step history makes them exact.
    """
    window = 1 if m == 2 else 3
    dtype = np.int64 if n <= 25 else np.float64
    states, mats = _history_transitions(window)
    mats = [t.astype(dtype) for t in mats]
    start = states.index((NO_STEP,) * window)
    max_len = 2 * (n - 1) + 2 * (m - 1)

    totals: Dict[int, int] = {}
    for ys in range(n):
        wanted = {}
        for yt in range(n):
            l1 = (n - 1) + abs(ys - yt)
            for j in range(m):
                wanted.setdefault(l1 + 2 * j, []).append(yt)
        state = np.zeros((n, n, len(states)), dtype=dtype)
        state[0, ys, start] = 1
        for step in range(1, max_len + 1):
            nxt = np.zeros_like(state)
            for d, (dx, dy) in enumerate(_STEPS):
                _shift_add(nxt, state @ mats[d], dx, dy)
            state = nxt
            for yt in wanted.get(step, []):
                count = int(round(float(state[n - 1, yt].sum()))) if dtype is np.float64 else int(state[n - 1, yt].sum())
                if count:
                    totals[step] = totals.get(step, 0) + count
    return totals


def count_paths_square(n: int, m: Union[int, SmSpec], settings: Optional[Settings] = None,
                       jobs: int = 1) -> PathEnsemble:
    """
    S_m ensemble of the n x n square lattice between its left and right boundaries.

    m = 1 uses monotone lattice-path binomials, m = 2, 3 exact transfer counting,
    larger m the generic DFS counter on the lattice.
    """
    if n < 2:
        raise ParameterError(f"lattice side n must be >= 2, got {n}")
    spec = SmSpec.from_settings(m, settings)
    spec.check_family("square")
    m = spec.m
    if m == 1:
        counts: Dict[int, int] = {}
        for ys in range(n):
            for yt in range(n):
                dy = abs(ys - yt)
                counts[n - 1 + dy] = counts.get(n - 1 + dy, 0) + math.comb(n - 1 + dy, dy)
        return PathEnsemble(counts, 1, f"square-n{n}")
    if m <= 3:
        return PathEnsemble(_square_pair_counts(n, m), m, f"square-n{n}")
    logger.info(f"Square lattice S_{m} has no closed form here; enumerating paths on n={n}")
    return ensemble_for_terminals(build_lattice("square", n), spec, settings, jobs)


def ksp_enumerate(net: Network, s: int, t: int, m: Union[int, SmSpec], path_cap: Optional[int] = None,
                  length_cap: Optional[int] = None, settings: Optional[Settings] = None) -> PathEnsemble:
    """
    Counts of the m shortest distinct length classes of simple s-t paths.

    Iterative deepening: start with length budget d(s,t) + m - 1 and grow it
    until m classes are found or length_cap (length_factor x distance) is hit.
    """
    spec = SmSpec.from_settings(m, settings, path_cap)
    spec.require_finite()
    m, path_cap = spec.m, spec.path_cap
    graph = net.to_multigraph()
    if s not in graph or t not in graph:
        raise ParameterError(f"terminals {s}, {t} must be nodes of the network")
    dist = nx.single_source_shortest_path_length(graph, t)
    if s not in dist:
        raise ParameterError(f"no path between {s} and {t}")
    d = dist[s]
    length_cap = spec.length_factor * d if length_cap is None else length_cap
    length_cap = max(length_cap, d)

    budget = min(d + m - 1, length_cap)
    while True:
        found = count_simple_paths(graph, s, t, budget, path_cap, dist)
        classes = sorted(found.counts)
        if len(classes) >= m or found.capped or budget >= length_cap or not found.length_limited:
            break
        budget = min(length_cap, budget + max(1, m - len(classes)))

    keep = classes[:m]
    truncated = found.capped or (len(classes) < m and found.length_limited)
    if truncated:
        logger.warning(f"Path ensemble {s}->{t} truncated (cap {path_cap} paths, length budget {budget})")
    return PathEnsemble({l: found.counts[l] for l in keep}, m, f"{s}->{t}", truncated)


def _pair_task(task) -> PathEnsemble:
    net, s, t, spec = task
    return ksp_enumerate(net, s, t, spec)


def ensemble_for_terminals(net: Network, m: Union[int, SmSpec], settings: Optional[Settings] = None,
                           jobs: int = 1) -> PathEnsemble:
    """S_m ensemble summed over every pair (s, t) in S x T, m classes per pair."""
    if not net.has_terminals:
        raise ParameterError("network has no terminal sets")
    spec = SmSpec.from_settings(m, settings)
    spec.require_finite()
    tasks = [(net, s, t, spec) for s in sorted(net.sources) for t in sorted(net.targets)]
    total = PathEnsemble({}, spec.m, net.name)
    for part in parallel_map(_pair_task, tasks, jobs=jobs):
        total = total.merged(part)
    total.order, total.provenance = spec.m, net.name
    logger.info(f"S_{spec.m} ensemble of {net.name or 'network'}: {len(tasks)} pairs, {total.total} paths, "
                f"lengths {total.lengths[:1]}..{total.lengths[-1:]}")
    return total


# === Thresholds ===

def threshold_halfpoint(curve: SweepCurve, tol: float = HALFPOINT_TOL) -> ThresholdEstimate:
    """Bracket the first crossing of 1/2 on the grid, then bisect on the curve's evaluator."""
    values, thetas = curve.values, curve.thetas
    above = np.nonzero(values >= 0.5)[0]
    if above.size == 0 or (above[0] == 0 and values[0] > 0.5):
        raise NumericalError(f"{curve.method} curve does not bracket 1/2: values range "
                             f"[{values.min():.4g}, {values.max():.4g}] on theta/(pi/4) in "
                             f"[{thetas[0] / QUARTER_PI:.4g}, {thetas[-1] / QUARTER_PI:.4g}]")
    i = int(above[0])
    if values[i] == 0.5 or i == 0:
        return ThresholdEstimate(float(thetas[i]), curve.method, curve.system)

    lo, hi = float(thetas[i - 1]), float(thetas[i])
    if curve.evaluator is None:
        v_lo, v_hi = float(values[i - 1]), float(values[i])
        theta = lo + (0.5 - v_lo) * (hi - lo) / (v_hi - v_lo)
        return ThresholdEstimate(theta, curve.method, curve.system)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(curve.evaluate(mid)) >= 0.5:
            hi = mid
        else:
            lo = mid
    return ThresholdEstimate(0.5 * (lo + hi), curve.method, curve.system)


def ensemble_threshold(ensemble: PathEnsemble, system=RuleSystem.CONCURRENCE, theta_grid=DEFAULT_GRID,
                       tol: float = HALFPOINT_TOL) -> ThresholdEstimate:
    return threshold_halfpoint(sweep_parallel_approx(ensemble, system, theta_grid), tol)


def bethe_parallel_threshold(k: int, L: int, system=RuleSystem.CONCURRENCE) -> ThresholdEstimate:
    est = ensemble_threshold(count_paths_bethe(k, L), system)
    logger.info(f"Bethe k={k}, L={L} parallel-approx threshold: {est.units:.4f} (pi/4)")
    return est


def _realization_threshold(task) -> float:
    family, N, param, seed, spec, system = task
    net = build_random(family, N, param, seed)
    ensemble = ksp_enumerate(net, net.source, net.target, spec)
    return ensemble_threshold(ensemble, system).theta_th


def random_network_threshold(family: str, N: int, param: float, m: Union[int, SmSpec], realizations: int = 100,
                             seed: Optional[int] = None, system=RuleSystem.CONCURRENCE,
                             settings: Optional[Settings] = None, jobs: int = 1) -> ThresholdEstimate:
    """Half-point threshold averaged over seeded realizations, with its standard error."""
    system = RuleSystem.parse(system)
    settings = settings or load_settings()
    spec = SmSpec.from_settings(m, settings)
    spec.check_family(family)
    if realizations < 1:
        raise ParameterError(f"realizations must be >= 1, got {realizations}")
    base = settings.seed if seed is None else seed
    tasks = [(family, N, param, base + i, spec, system) for i in range(realizations)]
    thetas = np.array(parallel_map(_realization_threshold, tasks, jobs=jobs))
    stderr = float(np.std(thetas, ddof=1) / math.sqrt(thetas.size)) if thetas.size > 1 else 0.0
    est = ThresholdEstimate(float(thetas.mean()), f"parallel-approx(m={spec.label})", system, stderr,
                            int(thetas.size))
    logger.info(f"{family} N={N} param={param} S_{spec.label}: threshold {est.units:.4f} "
                f"+- {stderr / QUARTER_PI:.4f} (pi/4) over {thetas.size} realizations")
    return est
