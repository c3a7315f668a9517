"""Result containers shared by the reduction, approximation and analysis modules."""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from qperc.errors import ParameterError
from qperc.logger import init_logger
from qperc.netcore import QUARTER_PI, weight_views
from qperc.rules import RuleSystem

logger = init_logger(name="Curves", component="qperc")

MONOTONE_SLACK = 1e-9


@dataclass
class SweepCurve:
    """
    Sampled (theta, value) pairs of P_SC or C_SC.

    `evaluator` maps theta (scalar or array, radians) to the value and lets
    threshold estimators refine beyond the sampled grid.
    """
    thetas: np.ndarray
    values: np.ndarray
    method: str
    network: str = ""
    system: RuleSystem = RuleSystem.CONCURRENCE
    evaluator: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.thetas = np.atleast_1d(np.asarray(self.thetas, dtype=float))
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if self.thetas.shape != self.values.shape:
            raise ParameterError("thetas and values must have the same length")
        if self.thetas.size > 1 and not np.all(np.diff(self.thetas) > 0):
            raise ParameterError("sweep thetas must be strictly increasing")
        if (self.values < -MONOTONE_SLACK).any() or (self.values > 1 + MONOTONE_SLACK).any():
            raise ParameterError(f"sweep values must lie in [0, 1] ({self.method})")
        self.values = np.clip(self.values, 0.0, 1.0)
        drops = np.diff(self.values)
        if drops.size and drops.min() < -MONOTONE_SLACK:
            logger.warning(f"{self.method} curve on {self.network or 'network'} decreases by {-drops.min():.3g}")

    @property
    def samples(self) -> List[Tuple[float, float]]:
        return list(zip(self.thetas.tolist(), self.values.tolist()))

    def evaluate(self, theta):
        if self.evaluator is not None:
            return self.evaluator(theta)
        return np.interp(theta, self.thetas, self.values)

    def rows(self):
        """CSV rows: theta in pi/4 units, value, method, and the value mapped back to theta."""
        for theta, value in self.samples:
            yield {
                "theta": theta / QUARTER_PI,
                "value": value,
                "method": self.method,
                "theta_out": float(self.system.to_units(value)),
            }


@dataclass
class ThresholdEstimate:
    theta_th: float
    method: str
    system: RuleSystem = RuleSystem.CONCURRENCE
    uncertainty: Optional[float] = None
    realizations: Optional[int] = None

    @property
    def c_th(self) -> float:
        return weight_views(self.theta_th)[1]

    @property
    def p_th(self) -> float:
        return weight_views(self.theta_th)[0]

    @property
    def units(self) -> float:
        return self.theta_th / QUARTER_PI

    def to_dict(self) -> dict:
        out = {
            "theta_th": self.units,
            "theta_th_rad": self.theta_th,
            "c_th": self.c_th,
            "p_th": self.p_th,
            "method": self.method,
            "system": self.system.value,
            "stderr": None if self.uncertainty is None else self.uncertainty / QUARTER_PI,
            "realizations": self.realizations,
        }
        return out


@dataclass
class ScalingFit:
    name: str
    value: float
    stderr: float
    window: dict
    r_squared: float
    n_points: int
    points: List[Tuple[float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ParameterError(f"fitted {self.name} is not finite")

    def to_dict(self) -> dict:
        return {
            "exponent": self.name,
            "value": self.value,
            "stderr": self.stderr,
            "window": self.window,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
        }
