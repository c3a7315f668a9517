import os
from dataclasses import dataclass, replace

from dotenv import load_dotenv
load_dotenv()

from qperc.errors import ParameterError


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{name} must be an integer, got {raw!r}")


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ParameterError(f"{name} must be a number, got {raw!r}")


@dataclass(frozen=True)
class Settings:
    seed: int = 12345
    jobs: int = 1
    solver_method: str = "hybr"
    solver_tol: float = 1e-10
    solver_maxiter: int = 200
    solver_restarts: int = 5
    path_cap: int = 10 ** 6
    length_factor: int = 4

    def with_overrides(self, **overrides) -> "Settings":
        """Return a copy where every non-None override replaces the stored value."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_settings() -> Settings:
    """Build Settings from QPERC_* environment variables (a .env file is honoured)."""
    return Settings(
        seed=_env_int("QPERC_SEED", 12345),
        jobs=max(1, _env_int("QPERC_JOBS", os.cpu_count() or 1)),
        solver_method=os.getenv("QPERC_SOLVER_METHOD", "hybr"),
        solver_tol=_env_float("QPERC_SOLVER_TOL", 1e-10),
        solver_maxiter=_env_int("QPERC_SOLVER_MAXITER", 200),
        solver_restarts=_env_int("QPERC_SOLVER_RESTARTS", 5),
        path_cap=_env_int("QPERC_PATH_CAP", 10 ** 6),
        length_factor=_env_int("QPERC_LENGTH_FACTOR", 4),
    )
