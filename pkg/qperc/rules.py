"""
Series and parallel combination rules.

Classical percolation works on p (probabilities), concurrence percolation on c.
All functions broadcast over numpy arrays: `values` is a sequence of equally
shaped scalars/arrays, so a whole theta grid is combined in one call.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from qperc.errors import ParameterError
from qperc.netcore import BOUNDARY_SLACK, QUARTER_PI

ArrayLike = Union[float, np.ndarray]

SQRT_HALF = math.sqrt(0.5)


class RuleSystem(str, Enum):
    CLASSICAL = "classical"
    CONCURRENCE = "concurrence"

    @property
    def variable(self) -> str:
        return "p" if self is RuleSystem.CLASSICAL else "c"

    def from_theta(self, theta: ArrayLike) -> ArrayLike:
        theta = np.asarray(theta, dtype=float)
        if self is RuleSystem.CLASSICAL:
            out = 2.0 * np.sin(theta) ** 2
        else:
            out = np.sin(2.0 * theta)
        return _scalar(np.clip(out, 0.0, 1.0))

    def to_theta(self, value: ArrayLike) -> ArrayLike:
        value = check_unit(value, self.variable)
        if self is RuleSystem.CLASSICAL:
            out = np.arcsin(np.sqrt(value / 2.0))
        else:
            out = 0.5 * np.arcsin(value)
        return _scalar(out)

    def to_units(self, value: ArrayLike) -> ArrayLike:
        """theta of `value` in units of pi/4."""
        return _scalar(np.asarray(self.to_theta(value)) / QUARTER_PI)

    @classmethod
    def parse(cls, name) -> "RuleSystem":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ParameterError(f"unknown rule system {name!r}; expected 'classical' or 'concurrence'")


def _scalar(arr: np.ndarray) -> ArrayLike:
    return float(arr) if np.ndim(arr) == 0 else arr


def check_unit(values, name: str = "value") -> np.ndarray:
    """Validate values in [0, 1], clamping round-off within BOUNDARY_SLACK."""
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ParameterError(f"{name} contains NaN")
    if (arr < -BOUNDARY_SLACK).any() or (arr > 1.0 + BOUNDARY_SLACK).any():
        raise ParameterError(f"{name} must lie in [0, 1], got range [{arr.min()}, {arr.max()}]")
    return np.clip(arr, 0.0, 1.0)


def _stack(values: Sequence[ArrayLike], name: str) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.ndim >= 1:
        arr = values
    else:
        values = list(values)
        if not values:
            return np.empty((0,))
        arr = np.stack([np.asarray(v, dtype=float) for v in np.broadcast_arrays(*values)])
    return check_unit(arr, name)


def _fidelity_factor(c: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.sqrt(np.clip(1.0 - c * c, 0.0, 1.0)))


def _concurrence_from_fidelity(f: np.ndarray) -> np.ndarray:
    f = np.maximum(0.5, f)
    return np.clip(2.0 * np.sqrt(np.clip(f * (1.0 - f), 0.0, 0.25)), 0.0, 1.0)


def series(system, values: Sequence[ArrayLike]) -> ArrayLike:
    """Product of the branch values under either system. Empty input gives 1."""
    system = RuleSystem.parse(system)
    arr = _stack(values, system.variable)
    if arr.shape[0] == 0:
        return 1.0
    return _scalar(np.prod(arr, axis=0))


def parallel(system, values: Sequence[ArrayLike]) -> ArrayLike:
    """
    classical:   1 - prod(1 - p_i)
    concurrence: F = max(1/2, prod((1 + sqrt(1 - c_i^2)) / 2)), result 2 sqrt(F - F^2)

    Empty input gives 0.
    """
    system = RuleSystem.parse(system)
    arr = _stack(values, system.variable)
    if arr.shape[0] == 0:
        return 0.0
    if system is RuleSystem.CLASSICAL:
        return _scalar(np.clip(1.0 - np.prod(1.0 - arr, axis=0), 0.0, 1.0))
    return _scalar(_concurrence_from_fidelity(np.prod(_fidelity_factor(arr), axis=0)))


def series_power(system, value: ArrayLike, n: int) -> ArrayLike:
    """Series combination of n identical branches."""
    RuleSystem.parse(system)
    return _scalar(check_unit(value) ** n)


def parallel_power(system, value: ArrayLike, n: int) -> ArrayLike:
    """Parallel combination of n identical branches, O(1) in n."""
    system = RuleSystem.parse(system)
    arr = check_unit(value, system.variable)
    if n == 0:
        return _scalar(np.zeros_like(arr))
    if system is RuleSystem.CLASSICAL:
        return _scalar(np.clip(1.0 - (1.0 - arr) ** n, 0.0, 1.0))
    return _scalar(_concurrence_from_fidelity(_fidelity_factor(arr) ** n))


# === Angle-form rules used for the DET/CEP comparison ===

def _angles(thetas: Sequence[float]) -> np.ndarray:
    arr = np.asarray(list(thetas), dtype=float)
    if arr.size == 0:
        raise ParameterError("at least one angle is required")
    if np.isnan(arr).any() or (arr < -BOUNDARY_SLACK).any() or (arr > QUARTER_PI + BOUNDARY_SLACK).any():
        raise ParameterError(f"angles must lie in [0, pi/4], got {arr.tolist()}")
    return np.clip(arr, 0.0, QUARTER_PI)


def det_series_theta(thetas: Sequence[float]) -> float:
    """Deterministic entanglement transmission in series: sin 2theta multiplies."""
    prod = float(np.prod(np.sin(2.0 * _angles(thetas))))
    return 0.5 * math.asin(min(1.0, prod))


def det_parallel_theta(thetas: Sequence[float]) -> float:
    """Deterministic parallel: cos theta = max(sqrt(1/2), prod cos theta_i)."""
    prod = float(np.prod(np.cos(_angles(thetas))))
    return math.acos(max(SQRT_HALF, min(1.0, prod)))


def cep_series_theta(thetas: Sequence[float]) -> float:
    """Classical entanglement percolation in series: 2 sin^2 theta multiplies."""
    prod = float(np.prod(2.0 * np.sin(_angles(thetas)) ** 2))
    return math.asin(math.sqrt(min(1.0, prod) / 2.0))


def cep_parallel_theta(thetas: Sequence[float]) -> float:
    """Classical parallel: cos 2theta multiplies."""
    prod = float(np.prod(np.cos(2.0 * _angles(thetas))))
    return 0.5 * math.acos(max(0.0, min(1.0, prod)))


@dataclass(frozen=True)
class DominanceResult:
    mode: str
    theta_det: float
    theta_cep: float

    @property
    def det_ge_cep(self) -> bool:
        return self.theta_det >= self.theta_cep - 1e-12


def dominance_check(thetas: Sequence[float], mode: str = "series") -> DominanceResult:
    """Compare DET and CEP for one series or one parallel bundle."""
    if mode == "series":
        return DominanceResult(mode, det_series_theta(thetas), cep_series_theta(thetas))
    if mode == "parallel":
        return DominanceResult(mode, det_parallel_theta(thetas), cep_parallel_theta(thetas))
    raise ParameterError(f"mode must be 'series' or 'parallel', got {mode!r}")
