"""
Closed-form thresholds, saturation points, finite-size scaling fits, the
scale-free exponent table and interdependent-network critical points.

Thresholds are returned as theta in units of pi/4 unless stated otherwise.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

from qperc.curves import ScalingFit, ThresholdEstimate
from qperc.errors import NumericalError, ParameterError
from qperc.logger import init_logger
from qperc.netcore import QUARTER_PI, theta_from_p
from qperc.rules import RuleSystem
from qperc.spreduce import bethe_layer_profile, bethe_sponge_crossing

logger = init_logger(name="Analysis", component="qperc")

ROOT_RESIDUAL = 1e-12
FIXED_POINT_RESIDUAL = 1e-10

# |c - c_th| ranges for the Bethe cutoff fit: the default, and the window closer to threshold
CUTOFF_OFFSETS = (1e-5, 1e-3)
NEAR_CUTOFF_OFFSETS = (1e-6, 1e-4)

# Printed reference thresholds (theta / (pi/4)) for regular lattices
LATTICE_TABLE = {
    "square": {"cep": 0.670, "qep": 0.670, "qep_ghz": 0.584, "concurrence": 0.42},
    "honeycomb": {"cep": 0.777, "qep": 0.761, "qep_ghz": 0.745, "concurrence": 0.51},
    "triangular": {"cep": 0.545, "qep": 0.545, "qep_ghz": 0.481, "concurrence": 0.32},
}

# Exact bond-percolation thresholds
BOND_THRESHOLDS = {
    "square": 0.5,
    "honeycomb": 1.0 - 2.0 * math.sin(math.pi / 18.0),
    "triangular": 2.0 * math.sin(math.pi / 18.0),
}


def _units_from_p(p: float) -> float:
    return theta_from_p(p) / QUARTER_PI


def _require_k(k: int, minimum: int = 3):
    if int(k) != k or k < minimum:
        raise ParameterError(f"coordination number k must be an integer >= {minimum}, got {k}")


# === Bethe lattice closed forms ===

def bethe_thresholds(k: int) -> Dict[str, float]:
    """
    classical:   2 sin^2 theta = 1/(k-1)
    cep:         (4/pi) asin(1/sqrt(2(k-1)))
    concurrence: (2/pi) asin(1/sqrt(k-1))
    """
    _require_k(k)
    return {
        "classical": _units_from_p(1.0 / (k - 1)),
        "cep": (4.0 / math.pi) * math.asin(1.0 / math.sqrt(2.0 * (k - 1))),
        "concurrence": (2.0 / math.pi) * math.asin(1.0 / math.sqrt(k - 1)),
    }


def _first_bracketed_root(f: Callable[[float], float], lo: float, hi: float, name: str,
                          samples: int = 4000) -> float:
    grid = np.linspace(lo, hi, samples)
    vals = np.array([f(x) for x in grid])
    signs = np.sign(vals)
    for i in range(samples - 1):
        if signs[i] == 0:
            return float(grid[i])
        if signs[i] * signs[i + 1] < 0:
            x = brentq(f, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            if abs(f(x)) > ROOT_RESIDUAL:
                raise NumericalError(f"{name} root residual {abs(f(x)):.3g} above {ROOT_RESIDUAL}", residual=abs(f(x)))
            return float(x)
    raise NumericalError(f"{name} has no sign change in ({lo}, {hi})")


def qep_swap_polynomial(x: float, k: int) -> float:
    return 2.0 * x + x ** k * (k * x - x - k - 1.0) - (1.0 - x) / (k - 1.0)


def qep_swap_root(k: int) -> float:
    """Smallest root in (0, 1); x = 1 is always a root and is excluded."""
    _require_k(k)
    return _first_bracketed_root(lambda x: qep_swap_polynomial(x, k), 0.0, 1.0 - 1e-6, f"QEP swap equation (k={k})")


def qep_swap_threshold(k: int) -> float:
    x = qep_swap_root(k)
    return _units_from_p(2.0 * x - x * x)


def qep_ghz_equation(y: float, k: int) -> float:
    z = 2.0 * y - y * y
    total = sum(math.comb(2 * i, i) * 4.0 ** (-i) * z ** i for i in range(int(math.floor(k / 2.0 - 1.0)) + 1))
    return 1.0 - (1.0 - y) * total - 1.0 / (k - 1.0)


def qep_ghz_root(k: int) -> float:
    _require_k(k)
    return _first_bracketed_root(lambda y: qep_ghz_equation(y, k), 0.0, 1.0, f"QEP-GHZ equation (k={k})")


def qep_ghz_threshold(k: int) -> float:
    return _units_from_p(qep_ghz_root(k))


def bethe_saturation(k: int) -> float:
    """Per-link concurrence above which the contracted Bethe tree has C_SC = 1 exactly."""
    _require_k(k, minimum=2)
    num = 0.5 ** (1.0 / k) - 0.25 ** (1.0 / k)
    den = 0.5 ** ((k - 1.0) / k) - 0.25 ** ((k - 1.0) / k)
    return math.sqrt(num) / math.sqrt(den)


def bethe_parallel_threshold_estimates(k: int, L: int) -> Dict[str, float]:
    """
    Closed-form half point and saturation point of the parallel approximation on
    a depth-L Bethe tree (all paths of length L); both tend to 1/sqrt(k-1).
    """
    _require_k(k, minimum=2)
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    eps = -math.log((2.0 + math.sqrt(3.0)) / 4.0)
    scale = (k - 1.0) ** (-(L - 1.0) / (2.0 * L))
    return {
        "c_th": min(1.0, (4.0 * eps / k) ** (1.0 / (2.0 * L)) * scale),
        "c_sat": min(1.0, (4.0 * math.log(2.0) / k) ** (1.0 / (2.0 * L)) * scale),
        "limit": 1.0 / math.sqrt(k - 1.0),
    }


def lattice_thresholds(family: Optional[str] = None) -> Dict:
    """Reference table values plus CEP computed from the exact bond thresholds."""
    families = [family] if family else list(LATTICE_TABLE)
    out = {}
    for name in families:
        if name not in LATTICE_TABLE:
            raise ParameterError(f"no reference thresholds for lattice {name!r}")
        row = dict(LATTICE_TABLE[name])
        row["cep_from_bond"] = _units_from_p(BOND_THRESHOLDS[name])
        out[name] = row
    return out[family] if family else out


# === Finite-size thresholds ===

def finite_size_threshold(evaluator: Callable, bracket: Tuple[float, float], h: float = 1e-4,
                          tol: float = 1e-6, samples: int = 2000) -> float:
    """
    Turning point of a sigmoid-like curve: the first + to - sign change of the
    central second difference, scanned on a grid and refined by bisection.
    """
    lo, hi = bracket
    if not lo < hi:
        raise ParameterError(f"bracket must be increasing, got {bracket}")

    def second_difference(x):
        x = np.asarray(x, dtype=float)
        return (np.asarray(evaluator(x + h)) - 2.0 * np.asarray(evaluator(x)) + np.asarray(evaluator(x - h))) / (h * h)

    grid = np.linspace(lo + h, hi - h, samples)
    d2 = second_difference(grid)
    floor = max(1e-6, 1e-6 * float(np.max(np.abs(d2)))) if d2.size else 1e-6
    signs = np.where(np.abs(d2) <= floor, 0, np.sign(d2))
    live = np.nonzero(signs)[0]
    for a, b in zip(live[:-1], live[1:]):
        if signs[a] > 0 and signs[b] < 0:
            left, right = float(grid[a]), float(grid[b])
            while right - left > tol:
                mid = 0.5 * (left + right)
                if float(second_difference(mid)) > 0:
                    left = mid
                else:
                    right = mid
            return 0.5 * (left + right)
    raise NumericalError(f"no convex-to-concave turning point in [{lo}, {hi}]")


def bethe_critical_value(k: int, system) -> float:
    """c_th = 1/sqrt(k-1) for concurrence, p_th = 1/(k-1) for classical."""
    system = RuleSystem.parse(system)
    _require_k(k)
    return 1.0 / math.sqrt(k - 1.0) if system is RuleSystem.CONCURRENCE else 1.0 / (k - 1.0)


def bethe_finite_size_threshold(k: int, L: int, system, samples: int = 2000) -> ThresholdEstimate:
    """Turning point of the exact depth-L Bethe curve in the system's own variable."""
    system = RuleSystem.parse(system)
    _require_k(k)
    upper = bethe_saturation(k) if system is RuleSystem.CONCURRENCE else 0.999
    evaluator = lambda v: bethe_sponge_crossing(k, L, np.clip(v, 0.0, 1.0), system)
    lower = 0.01
    if evaluator(lower) < 1e-12 < evaluator(upper):
        lower = brentq(lambda v: evaluator(v) - 1e-12, lower, upper, xtol=1e-12)
    value = finite_size_threshold(evaluator, (lower, upper), samples=samples)
    est = ThresholdEstimate(float(system.to_theta(value)), f"exact-sp turning point (L={L})", system)
    logger.info(f"Bethe k={k}, L={L} {system.value} turning point: {system.variable}={value:.6f}, "
                f"theta={est.units:.4f} (pi/4)")
    return est


# === Scaling fits ===

def _regress(x: np.ndarray, y: np.ndarray):
    fit = linregress(x, y)
    stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    return fit.slope, fit.intercept, max(stderr, 1e-15), float(fit.rvalue ** 2)


def fit_cutoff_scaling(curves: Mapping[float, Tuple[Sequence[float], Sequence[float]]], c_th: float,
                       l_window: Tuple[float, float] = (1e3, 1e4), power: float = 0.5,
                       min_points: int = 5, min_decades: float = 2.0) -> ScalingFit:
    """
    C ~ l^(-power) exp(-l / l*) near threshold, l* ~ |c - c_th|^(-z nu).

    `curves` maps each value c to its (l, C) samples. For every c, l* comes from
    the slope of log(C l^power) against l inside l_window; z nu is minus the
    slope of log l* against log|c - c_th|.
    """
    offsets, cutoffs = [], []
    for c, (ls, values) in sorted(curves.items()):
        ls, values = np.asarray(ls, dtype=float), np.asarray(values, dtype=float)
        mask = (ls >= l_window[0]) & (ls <= l_window[1]) & (values > 0)
        if mask.sum() < 3:
            logger.warning(f"Skipping c={c}: only {int(mask.sum())} samples in the l window")
            continue
        slope, _, _, _ = _regress(ls[mask], np.log(values[mask] * ls[mask] ** power))
        if slope >= 0:
            logger.warning(f"Skipping c={c}: no exponential cutoff (slope {slope:.3g})")
            continue
        offsets.append(abs(c - c_th))
        cutoffs.append(-1.0 / slope)

    offsets, cutoffs = np.array(offsets), np.array(cutoffs)
    if offsets.size < min_points or np.any(offsets <= 0):
        raise ParameterError(f"cutoff scaling needs >= {min_points} distinct values off threshold, got {offsets.size}")
    decades = math.log10(offsets.max() / offsets.min())
    if decades < min_decades - 1e-9:
        raise ParameterError(f"|c - c_th| spans {decades:.2f} decades, at least {min_decades} required")

    slope, _, stderr, r2 = _regress(np.log(offsets), np.log(cutoffs))
    fit = ScalingFit("znu", -slope, stderr,
                     {"offset": [float(offsets.min()), float(offsets.max())], "l": list(l_window)},
                     r2, int(offsets.size), list(zip(offsets.tolist(), cutoffs.tolist())))
    logger.info(f"Cutoff scaling: znu = {fit.value:.4f} +- {fit.stderr:.4f} (R^2={r2:.5f}, {offsets.size} points)")
    return fit


def bethe_cutoff_scaling(k: int = 3, system=RuleSystem.CONCURRENCE, offsets: Optional[Sequence[float]] = None,
                         l_window: Tuple[float, float] = (1e3, 1e4)) -> ScalingFit:
    """
    z nu of the Bethe tree from below-threshold curves of the exact recursion.

    The default offsets [1e-5, 1e-3] sit where l* falls inside the l window;
    closer to threshold the window only sees the pre-asymptotic regime.
    """
    system = RuleSystem.parse(system)
    critical = bethe_critical_value(k, system)
    offsets = np.geomspace(*CUTOFF_OFFSETS, 7) if offsets is None else np.asarray(offsets, dtype=float)
    values = critical - offsets
    profile = bethe_layer_profile(k, int(l_window[1]), values, system)
    ls = np.arange(1, profile.shape[0] + 1, dtype=float)
    power = 0.5 if system is RuleSystem.CONCURRENCE else 1.0
    curves = {float(v): (ls, profile[:, i]) for i, v in enumerate(values)}
    return fit_cutoff_scaling(curves, critical, l_window, power)


def bethe_cutoff_scaling_windows(k: int = 3, system=RuleSystem.CONCURRENCE,
                                 l_window: Tuple[float, float] = (1e3, 1e4)) -> Dict[str, ScalingFit]:
    """The cutoff fit in both offset windows; the near-threshold one drifts upward at fixed l window."""
    return {
        "cutoff": bethe_cutoff_scaling(k, system, l_window=l_window),
        "cutoff_near_threshold": bethe_cutoff_scaling(k, system, np.geomspace(*NEAR_CUTOFF_OFFSETS, 7), l_window),
    }


def fit_threshold_shift(ls: Sequence[float], thresholds: Sequence[float], c_inf: float) -> ScalingFit:
    """1/(z nu) from |c_th - c_th(l)| ~ l^(-1/(z nu))."""
    ls, thresholds = np.asarray(ls, dtype=float), np.asarray(thresholds, dtype=float)
    shift = np.abs(c_inf - thresholds)
    if ls.size < 3 or np.any(shift <= 0):
        raise ParameterError("threshold-shift fit needs >= 3 sizes with nonzero shift")
    slope, _, stderr, r2 = _regress(np.log(ls), np.log(shift))
    return ScalingFit("1/znu", -slope, stderr, {"l": [float(ls.min()), float(ls.max())]}, r2, int(ls.size),
                      list(zip(ls.tolist(), thresholds.tolist())))


def bethe_threshold_shift(k: int = 3, system=RuleSystem.CONCURRENCE,
                          ls: Sequence[int] = (100, 200, 400, 800, 1600)) -> ScalingFit:
    system = RuleSystem.parse(system)
    critical = bethe_critical_value(k, system)
    values = []
    for L in ls:
        est = bethe_finite_size_threshold(k, int(L), system)
        values.append(est.c_th if system is RuleSystem.CONCURRENCE else est.p_th)
    return fit_threshold_shift(ls, values, critical)


# === Scale-free exponents ===

@dataclass(frozen=True)
class ExponentSet:
    lam: float
    beta: float
    gamma: float
    nu: float
    sigma: float
    tau: float
    d_f: Optional[float] = None

    def scaling_relations_hold(self, tol: float = 1e-12) -> bool:
        return (abs(self.beta - (self.tau - 2.0) / self.sigma) <= tol
                and abs(self.gamma - (3.0 - self.tau) / self.sigma) <= tol)

    def hyperscaling_holds(self, d: Optional[float], tol: float = 1e-12) -> bool:
        """d_f = d - beta/nu; vacuously true when d or d_f is undefined."""
        if d is None or self.d_f is None:
            return True
        return abs(self.d_f - (d - self.beta / self.nu)) <= tol

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "beta": self.beta, "gamma": self.gamma, "nu": self.nu,
                "sigma": self.sigma, "tau": self.tau, "d_f": self.d_f}


def scale_free_exponents(lam: float) -> ExponentSet:
    """Classical percolation exponents of scale-free networks with degree exponent lam."""
    if lam <= 2:
        raise ParameterError(f"degree exponent must exceed 2, got {lam}")
    tau = (2.0 * lam - 3.0) / (lam - 2.0)
    if lam < 3:
        return ExponentSet(lam, 1.0 / (3.0 - lam), -1.0, (lam - 1.0) / (3.0 - lam), (3.0 - lam) / (lam - 2.0), tau)
    if lam == 3:
        raise ParameterError("lambda = 3 is marginal (logarithmic corrections); no power-law exponents")
    if lam < 4:
        return ExponentSet(lam, 1.0 / (lam - 3.0), 1.0, (lam - 1.0) / (lam - 3.0), (lam - 3.0) / (lam - 2.0), tau,
                           2.0 * (lam - 2.0) / (lam - 3.0))
    return ExponentSet(lam, 1.0, 1.0, 3.0, 0.5, 2.5, 4.0)


# === Interdependent ER networks ===

@dataclass(frozen=True)
class InterdepSolution:
    n: int
    kbar: float
    w: float
    p_th: float
    P_th: float

    def to_dict(self) -> dict:
        return {"n": self.n, "kbar": self.kbar, "w": self.w, "p_th": self.p_th, "P_inf_at_threshold": self.P_th}


def _check_interdep(kbar: float, n: int):
    if kbar <= 0:
        raise ParameterError(f"mean degree must be positive, got {kbar}")
    if int(n) != n or n < 1:
        raise ParameterError(f"layer count n must be an integer >= 1, got {n}")


def interdep_residual(P: float, kbar: float, p: float, n: int) -> float:
    return p * (-math.expm1(-kbar * P)) ** n - P


def _bracket_fixed_point(kbar: float, p: float, n: int, start: float, grid_points: int = 400) -> float:
    """
    Fixed point the iteration from `start` is heading to, located by brentq.

    Below `start` the residual is negative down to the next root; above it,
    positive up to the next root. No sign change towards zero means P = 0.
    """
    g = lambda P: p * (-np.expm1(-kbar * P)) ** n - P
    start = min(max(start, 1e-12), p)
    if g(start) < 0.0:
        grid = np.geomspace(1e-12, start, grid_points)[::-1]
        positive = np.nonzero(g(grid) >= 0.0)[0]
        if not positive.size:
            return 0.0
        i = int(positive[0])
        if i == 0:
            return float(grid[0])
        lo, hi = float(grid[i]), float(grid[i - 1])
    else:
        grid = np.linspace(start, p, grid_points)
        i = int(np.nonzero(g(grid) <= 0.0)[0][0])
        if i == 0:
            return float(grid[0])
        lo, hi = float(grid[i - 1]), float(grid[i])
    return brentq(lambda P: interdep_residual(P, kbar, p, n), lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


def interdep_giant_component(kbar: float, p: float, n: int, damping: float = 0.5, start: float = 1.0,
                             tol: float = 1e-12, max_iter: int = 10 ** 4) -> float:
    """
    Largest fixed point of P = p (1 - exp(-kbar P))^n by damped iteration from `start`.

    Near a critical point the iteration slows down; after `max_iter` steps the
    fixed point is bracketed and solved with brentq instead.
    """
    _check_interdep(kbar, n)
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must lie in [0, 1], got {p}")
    if not 0.0 < damping <= 1.0:
        raise ParameterError(f"damping must lie in (0, 1], got {damping}")
    if p == 0.0:
        return 0.0

    P = start
    for _ in range(max_iter):
        target = p * (-math.expm1(-kbar * P)) ** n
        if abs(target - P) <= tol:
            P = target
            break
        P = (1.0 - damping) * P + damping * target
        if P < 1e-15:
            return 0.0
    else:
        logger.debug(f"Slow giant-component iteration (kbar={kbar}, p={p}, n={n}), bracketing from P={P:.3g}")
        P = _bracket_fixed_point(kbar, p, n, P)

    if P < 1e-10:
        return 0.0
    res = abs(interdep_residual(P, kbar, p, n))
    if res > FIXED_POINT_RESIDUAL:
        raise NumericalError(f"giant-component residual {res:.3g} above {FIXED_POINT_RESIDUAL}", residual=res)
    return P


def lambert_w_lower(x: float) -> float:
    """W_{-1}(x) for x in [-1/e, 0): the root of w e^w = x with w <= -1, bracketed and polished by brentq."""
    if not -math.exp(-1.0) - 1e-15 <= x < 0.0:
        raise ParameterError(f"lower Lambert branch needs x in [-1/e, 0), got {x}")
    f = lambda w: w * math.exp(w) - x
    if f(-1.0) >= 0.0:
        return -1.0
    lo = -2.0
    while f(lo) <= 0.0:
        lo *= 2.0
    w = brentq(f, lo, -1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(w)) > ROOT_RESIDUAL:
        raise NumericalError(f"Lambert W residual {abs(f(w)):.3g} above {ROOT_RESIDUAL}", residual=abs(f(w)))
    return w


def interdep_critical(kbar: float, n: int) -> InterdepSolution:
    """
    p_th = -w / (kbar (1 + 1/(n w))^(n-1)), P_inf = -(w + 1/n) / kbar
    with w = W_{-1}(-(1/n) e^(-1/n)).
    """
    _check_interdep(kbar, n)
    w = lambert_w_lower(-(1.0 / n) * math.exp(-1.0 / n))
    p_th = -w / (kbar * (1.0 + 1.0 / (n * w)) ** (n - 1))
    P_th = max(0.0, -(w + 1.0 / n) / kbar)
    logger.info(f"Interdependent ER n={n}, kbar={kbar}: p_th={p_th:.8f}, P_inf={P_th:.6f}")
    return InterdepSolution(n, kbar, w, p_th, P_th)


@dataclass
class InterdepSweep:
    p: np.ndarray
    P_down: np.ndarray
    P_up: np.ndarray
    p_jump: Optional[float]
    jump: float
    hysteresis: Optional[Tuple[float, float]] = None

    def to_rows(self):
        for p, down, up in zip(self.p.tolist(), self.P_down.tolist(), self.P_up.tolist()):
            yield {"p": p, "P_down": down, "P_up": up}


def interdep_sweep(kbar: float, n: int, p_grid: Optional[Sequence[float]] = None, seed_fraction: float = 1e-3,
                   tol: float = 1e-7) -> InterdepSweep:
    """
    Down-sweep continues the upper branch from P = 1, up-sweep starts from a
    small seed. The largest drop of the down-sweep is refined by bisection on p.
    """
    _check_interdep(kbar, n)
    p = np.linspace(0.0, 1.0, 201) if p_grid is None else np.sort(np.asarray(p_grid, dtype=float))

    down = np.zeros_like(p)
    P = 1.0
    for i in range(p.size - 1, -1, -1):
        P = interdep_giant_component(kbar, float(p[i]), n, start=max(P, seed_fraction))
        down[i] = P
    up = np.zeros_like(p)
    P = seed_fraction
    for i in range(p.size):
        P = interdep_giant_component(kbar, float(p[i]), n, start=max(P, seed_fraction))
        up[i] = P

    drops = np.diff(down)
    i = int(np.argmax(drops)) if drops.size else 0
    jump = float(drops[i]) if drops.size else 0.0
    p_jump = None
    if jump > 0:
        level = 0.5 * float(down[i + 1])
        lo, hi = float(p[i]), float(p[i + 1])
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if interdep_giant_component(kbar, mid, n) > level:
                hi = mid
            else:
                lo = mid
        p_jump = 0.5 * (lo + hi)

    gap = np.nonzero(down - up > 1e-6)[0]
    hysteresis = (float(p[gap[0]]), float(p[gap[-1]])) if gap.size else None
    logger.info(f"Interdependent sweep n={n}, kbar={kbar}: largest step {jump:.4f} at p={p_jump}")
    return InterdepSweep(p, down, up, p_jump, jump, hysteresis)
