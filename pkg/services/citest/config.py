"""
Configuration models and environment defaults.

Environment variables (a .env file is honoured by the CLI through python-dotenv):
    CITEST_SEED       default seed (falls back to DEFAULT_SEED)
    CITEST_THREADS    default worker count (falls back to 1)
    CITEST_LOG_LEVEL  log level for the CLI (falls back to INFO)
"""
import os
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from services.citest.errors import ConfigError
from services.citest.process import DEFAULT_CONTINUOUS_RESOLUTION, DEFAULT_DISCRETE_RESOLUTION
from services.citest.stats import Functional
from services.citest.transform import DEFAULT_EPSILON_P, Bandwidth, KernelName
from services.citest.weights import BetaKind

DEFAULT_SEED = 20090601
DEFAULT_BOOTSTRAP = 2000
DESK_BOOTSTRAP = 200
DESK_REPLICATIONS = 500


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got '{raw}'")


def default_seed() -> int:
    return _env_int("CITEST_SEED", DEFAULT_SEED)


def default_threads() -> int:
    return _env_int("CITEST_THREADS", 1)


def default_log_level() -> str:
    return os.getenv("CITEST_LOG_LEVEL", "INFO")


class TestConfig(BaseModel):
    """Everything that determines a single test run besides the data and the index."""
    __test__ = False
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: BetaKind = Field(BetaKind.EXPONENTIAL, description="Weight family for the index axis")
    functional: Functional = Field(Functional.KS2, description="Functional applied to the process")
    kernel: KernelName = Field(KernelName.QUARTIC, description="Smoothing kernel")
    h_z: Bandwidth = Field(default_factory=Bandwidth,
                           description="Bandwidth for Z_hat, or for the propensities when Z is discrete")
    h_y: Bandwidth = Field(default_factory=Bandwidth, description="Bandwidth for Y_hat")
    grid: Optional[int] = Field(None, ge=1, description="Points per grid axis; 10 continuous / 20 discrete when omitted")
    bootstrap: int = Field(DEFAULT_BOOTSTRAP, ge=1, description="Number of bootstrap draws B")
    alpha: float = Field(0.05, gt=0, lt=1, description="Nominal level")
    seed: int = Field(default_factory=default_seed, ge=0, description="Seed of the multiplier streams")
    epsilon_p: float = Field(DEFAULT_EPSILON_P, gt=0, lt=0.5, description="Propensity clamp")

    def grid_resolution(self, discrete: bool) -> int:
        if self.grid is not None:
            return self.grid
        return DEFAULT_DISCRETE_RESOLUTION if discrete else DEFAULT_CONTINUOUS_RESOLUTION
