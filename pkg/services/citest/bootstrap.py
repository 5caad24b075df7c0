"""
Wild-bootstrap calibration and the end-to-end test.

The transforms are computed once; each bootstrap draw only re-weights the
per-observation summands of the process by an independent multiplier row
(Mammen's two-point law). Row b of the multiplier matrix comes from its own
keyed substream, so any subset of rows can be regenerated in isolation and
the split of rows over worker threads cannot change a result.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.citest.config import TestConfig
from services.citest.errors import CITestError, InvalidInputError
from services.citest.index import IndexSpec, eval_index, resolve_theta
from services.citest.observability import log_context, metrics, timed_operation
from services.citest.process import EvalGrid, ProcessValues, contract, observation_terms
from services.citest.random_streams import MULTIPLIER_STREAM, stream
from services.citest.stats import Functional, functional_values
from services.citest.transform import Sample, TransformedSample, get_kernel, rosenblatt_transform
from services.citest.weights import BetaFamily

logger = logging.getLogger(__name__)

_SQRT5 = math.sqrt(5.0)
MAMMEN_LOW = -(_SQRT5 - 1.0) / 2.0
MAMMEN_HIGH = (_SQRT5 + 1.0) / 2.0
MAMMEN_P_LOW = (_SQRT5 + 1.0) / (2.0 * _SQRT5)

# Bootstrap rows contracted per task.
CHUNK_ROWS = 64


@dataclass(frozen=True)
class MultiplierDraws:
    omega: np.ndarray
    seed: int
    law: str = "mammen"

    @property
    def B(self) -> int:
        return self.omega.shape[0]


def multiplier_row(n: int, seed: int, b: int) -> np.ndarray:
    """Row b of the multiplier matrix for ``seed``."""
    uniforms = stream(seed, MULTIPLIER_STREAM, b).random(n)
    return np.where(uniforms < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def draw_multipliers(n: int, B: int, seed: int) -> MultiplierDraws:
    if n < 1 or B < 1:
        raise InvalidInputError(f"need n >= 1 and B >= 1, got n={n}, B={B}")
    omega = np.vstack([multiplier_row(n, seed, b) for b in range(B)])
    omega.setflags(write=False)
    metrics.increment_counter("bootstrap_draws_total", value=B)
    return MultiplierDraws(omega=omega, seed=seed)


def bootstrap_process(ts: TransformedSample, family: BetaFamily, grid: EvalGrid,
                      omega_row: Sequence[float]) -> ProcessValues:
    omega_row = np.asarray(omega_row, dtype=float).ravel()
    if omega_row.shape[0] != ts.n:
        raise InvalidInputError(f"multiplier row has length {omega_row.shape[0]}, expected {ts.n}")
    terms = observation_terms(ts, family, grid)
    values = contract(omega_row[None, :], terms)[0].reshape(grid.shape)
    return ProcessValues(values=values, grid=grid, n=ts.n)


def critical_value(bootstrap_stats: Sequence[float], alpha: float) -> float:
    """inf{t : B^-1 #{T*_b <= t} >= 1 - alpha}, i.e. the ceil(B(1 - alpha))-th order statistic."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    ordered = np.sort(np.asarray(bootstrap_stats, dtype=float))
    B = ordered.shape[0]
    if B < 1:
        raise InvalidInputError("critical_value needs at least one bootstrap statistic")
    # rounding keeps e.g. 100 * (1 - 0.05) from landing a hair above 95
    rank = max(1, math.ceil(round(B * (1.0 - alpha), 9)))
    return float(ordered[rank - 1])


def p_value(statistic: float, bootstrap_stats: Sequence[float]) -> float:
    """(1 + #{b : T*_b >= T}) / (B + 1)."""
    bootstrap_stats = np.asarray(bootstrap_stats, dtype=float)
    if bootstrap_stats.shape[0] < 1:
        raise InvalidInputError("p_value needs at least one bootstrap statistic")
    exceed = int(np.count_nonzero(bootstrap_stats >= statistic))
    return (1.0 + exceed) / (bootstrap_stats.shape[0] + 1.0)


@dataclass(frozen=True)
class CalibratedStatistic:
    functional: Functional
    statistic: float
    bootstrap_stats: np.ndarray


def compute_statistics(ts: TransformedSample, family: BetaFamily, grid: EvalGrid,
                       functionals: Sequence[Functional], draws: MultiplierDraws,
                       threads: int = 1) -> Dict[Functional, CalibratedStatistic]:
    """Sample statistic and its B bootstrap replicates for every requested functional."""
    if draws.omega.shape[1] != ts.n:
        raise InvalidInputError(f"multipliers have {draws.omega.shape[1]} columns, expected {ts.n}")
    functionals = [Functional(f) for f in functionals]
    terms = observation_terms(ts, family, grid)
    volume = grid.cell_volume

    def evaluate(rows: np.ndarray) -> List[np.ndarray]:
        values = contract(rows, terms)
        return [functional_values(values, f, volume) for f in functionals]

    observed = evaluate(np.ones((1, ts.n)))
    chunks = [draws.omega[start:start + CHUNK_ROWS] for start in range(0, draws.B, CHUNK_ROWS)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_chunk = list(pool.map(evaluate, chunks))
    else:
        per_chunk = [evaluate(chunk) for chunk in chunks]

    result = {}
    for k, f in enumerate(functionals):
        replicates = np.concatenate([chunk[k] for chunk in per_chunk])
        replicates.setflags(write=False)
        result[f] = CalibratedStatistic(functional=f, statistic=float(observed[k][0]), bootstrap_stats=replicates)
    return result


class TestResult(BaseModel):
    """Outcome of one bootstrap test."""
    __test__ = False
    model_config = ConfigDict(frozen=True)

    statistic: float
    critical_value: float
    p_value: float = Field(..., ge=0, le=1)
    reject: bool
    alpha: float
    bootstrap: int
    functional: Functional
    n: int
    theta: List[float] = Field(..., description="Index parameter used (estimated or known)")
    h_y: float = Field(..., description="Resolved bandwidth for Y_hat")
    h_z: float = Field(..., description="Resolved bandwidth for Z_hat or the propensities")
    grid: int = Field(..., description="Points per grid axis")
    config: TestConfig
    warnings: List[str] = Field(default_factory=list)


def decide(calibrated: CalibratedStatistic, alpha: float) -> tuple:
    """(critical value, p-value, reject) for one calibrated statistic."""
    cv = critical_value(calibrated.bootstrap_stats, alpha)
    return cv, p_value(calibrated.statistic, calibrated.bootstrap_stats), bool(calibrated.statistic > cv)


@timed_operation("run_test", expected=(CITestError,))
def run_test(sample: Sample, index_spec: IndexSpec, config: TestConfig, threads: int = 1) -> TestResult:
    """Index -> Rosenblatt transforms -> process -> statistic -> bootstrap decision."""
    with log_context(n=sample.n, functional=config.functional.value, beta=config.beta.value):
        theta = resolve_theta(index_spec, sample.z, sample.x)
        index_values = eval_index(index_spec.model, theta, sample.x)
        ts = rosenblatt_transform(sample, index_values, config.h_y, config.h_z,
                                  kernel=get_kernel(config.kernel), epsilon_p=config.epsilon_p)
        resolution = config.grid_resolution(sample.is_discrete)
        grid = (EvalGrid.for_support(sample.z_kind.support, resolution) if sample.is_discrete
                else EvalGrid.continuous(resolution))
        draws = draw_multipliers(sample.n, config.bootstrap, config.seed)
        calibrated = compute_statistics(ts, BetaFamily.from_name(config.beta), grid, [config.functional],
                                        draws, threads=threads)[config.functional]
        cv, pv, reject = decide(calibrated, config.alpha)
        logger.info("test decided", extra={'statistic': calibrated.statistic, 'critical_value': cv,
                                           'p_value': pv, 'reject': reject})
        return TestResult(
            statistic=calibrated.statistic,
            critical_value=cv,
            p_value=pv,
            reject=reject,
            alpha=config.alpha,
            bootstrap=config.bootstrap,
            functional=config.functional,
            n=sample.n,
            theta=[float(v) for v in theta],
            h_y=config.h_y.resolve(sample.n),
            h_z=config.h_z.resolve(sample.n),
            grid=resolution,
            config=config,
            warnings=list(ts.warnings),
        )
