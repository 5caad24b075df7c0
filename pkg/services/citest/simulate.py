"""
Data-generating designs and the Monte Carlo rejection-rate harness.

Continuous designs (A1, A2 under the null; B1-B4 under the alternative):
    X ~ U[0,1], eta ~ U[0,1], Z = aX + (1 - a) eta, eps ~ N(0,1)
Binary designs (C under the null; D1, D2 under the alternative):
    X1 ~ U[0,1] + 0.2, X2 ~ U[0,1] - 0.2, lambda = 0.5 (X1 + X2),
    Z = 1{lambda > eta}, eta ~ N(0,1), s = Z (1 + |X1| + |X2|)

Replication r of design d draws its data and its multipliers from a seed keyed
by (master_seed, d, r); every bandwidth/beta cell of the design reuses them.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import ndtr

from services.citest.bootstrap import compute_statistics, decide, draw_multipliers
from services.citest.errors import CITestError, InvalidInputError
from services.citest.index import IndexModel, IndexSpec, KnownTheta, ProbitMleSpec, eval_index, resolve_theta
from services.citest.observability import log_context, metrics, timed_operation
from services.citest.process import DEFAULT_CONTINUOUS_RESOLUTION, DEFAULT_DISCRETE_RESOLUTION, EvalGrid
from services.citest.random_streams import DATA_STREAM, ORACLE_STREAM, REPLICATION_STREAM, derive_seed, stream
from services.citest.stats import Functional
from services.citest.transform import (
    DEFAULT_EPSILON_P,
    Bandwidth,
    ContinuousZ,
    DiscreteZ,
    KernelName,
    Sample,
    get_kernel,
    oracle_transformed_sample,
    rosenblatt_transform,
)
from services.citest.weights import BetaFamily, BetaKind

logger = logging.getLogger(__name__)

BINARY_SUPPORT = (0.0, 1.0)
BINARY_THETA0 = (0.0, 1.0, 1.0)
BINARY_INDEX_SCALE = 0.5
NOISE_VARIANCE = 0.2

DEFAULT_LEVELS = (0.01, 0.05, 0.10)
DEFAULT_BANDWIDTH_CONSTANTS = (0.25, 0.5, 1.0, 2.0)


class DgpName(str, Enum):
    A1 = "A1"
    A2 = "A2"
    B1 = "B1"
    B2 = "B2"
    B3 = "B3"
    B4 = "B4"
    C = "C"
    D1 = "D1"
    D2 = "D2"

    @property
    def binary(self) -> bool:
        return self in (DgpName.C, DgpName.D1, DgpName.D2)

    @property
    def null(self) -> bool:
        return self in (DgpName.A1, DgpName.A2, DgpName.C)


_KAPPA_DESIGNS = (DgpName.D1, DgpName.D2)


class DgpSpec(BaseModel):
    """One simulation design; ``a`` for continuous designs, ``kappa`` for D1/D2."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: DgpName = Field(..., description="Design name")
    a: Optional[float] = Field(None, ge=0, le=1, description="Weight of X in Z (continuous designs)")
    kappa: Optional[float] = Field(None, description="Strength of the deviation term (D designs)")
    n: int = Field(100, ge=2, description="Sample size")

    @model_validator(mode="after")
    def _check_parameters(self) -> "DgpSpec":
        if self.name.binary:
            if self.a is not None:
                raise ValueError(f"design {self.name.value} takes no 'a'")
        elif self.a is None:
            raise ValueError(f"design {self.name.value} needs 'a'")
        if (self.name in _KAPPA_DESIGNS) != (self.kappa is not None):
            raise ValueError(f"'kappa' is used by D1/D2 only and is required there (design {self.name.value})")
        return self

    @property
    def label(self) -> str:
        if self.a is not None:
            return f"{self.name.value} a={self.a}"
        if self.kappa is not None:
            return f"{self.name.value} kappa={self.kappa}"
        return self.name.value

    def index_spec(self) -> IndexSpec:
        """Identity index with known theta for continuous designs, probit MLE for binary ones."""
        if self.name.binary:
            return IndexSpec(IndexModel.linear(BINARY_INDEX_SCALE), ProbitMleSpec())
        return IndexSpec(IndexModel.linear(1.0), KnownTheta(values=(0.0, 1.0)))


def _smooth_step(v: np.ndarray) -> np.ndarray:
    return ndtr((v - 0.5) / math.sqrt(NOISE_VARIANCE))


def generate(dgp: DgpSpec, seed: int) -> Sample:
    """Draw one sample of size dgp.n; deterministic given ``seed``."""
    rng = stream(seed, DATA_STREAM)
    n = dgp.n
    name = dgp.name
    if not name.binary:
        x = rng.random(n)
        eta = rng.random(n)
        eps = rng.standard_normal(n)
        z = dgp.a * x + (1.0 - dgp.a) * eta
        if name is DgpName.A1:
            y = _smooth_step(x) + eps
        elif name is DgpName.A2:
            y = np.sin(5.0 * x) + eps
        elif name is DgpName.B1:
            y = _smooth_step(x) + _smooth_step(z) + eps
        elif name is DgpName.B2:
            y = _smooth_step(x) + np.sin(5.0 * z) + eps
        elif name is DgpName.B3:
            y = np.sin(5.0 * x) + _smooth_step(z) + eps
        else:
            y = _smooth_step(x) * np.sin(5.0 * z) + eps
        return Sample(y=y, z=z, x=x.reshape(-1, 1), z_kind=ContinuousZ())

    x1 = rng.random(n) + 0.2
    x2 = rng.random(n) - 0.2
    eta = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    x = np.column_stack([x1, x2])
    lam = eval_index(IndexModel.linear(BINARY_INDEX_SCALE), BINARY_THETA0, x)
    z = (lam > eta).astype(float)
    deviation = z * (1.0 + np.abs(x1) + np.abs(x2))
    if name is DgpName.C:
        y = 2.0 * ndtr(lam / math.sqrt(NOISE_VARIANCE)) + eps
    elif name is DgpName.D1:
        y = 0.5 * lam + dgp.kappa * deviation + eps
    else:
        y = 2.0 * ndtr((lam + dgp.kappa * deviation) / math.sqrt(NOISE_VARIANCE)) + eps
    return Sample(y=y, z=z, x=x, z_kind=DiscreteZ(BINARY_SUPPORT))


class SweepGrid(BaseModel):
    """Test settings swept inside every design.

    Each bandwidth pair is (h_z constant, h_y constant); for binary designs the
    first entry is the propensity bandwidth.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    bandwidths: Tuple[Tuple[float, float], ...] = Field(
        tuple((c, c) for c in DEFAULT_BANDWIDTH_CONSTANTS), min_length=1,
        description="(h_z, h_y) bandwidth constants")
    betas: Tuple[BetaKind, ...] = Field((BetaKind.EXPONENTIAL, BetaKind.INDICATOR), min_length=1)
    levels: Tuple[float, ...] = Field(DEFAULT_LEVELS, min_length=1, description="Nominal levels")
    functionals: Tuple[Functional, ...] = Field((Functional.KS2, Functional.CM2), min_length=1)
    exponent: float = Field(0.2, gt=0, description="Bandwidth rate: h = c * n^(-exponent)")
    grid: Optional[int] = Field(None, ge=1, description="Points per grid axis; 10 continuous / 20 discrete")
    kernel: KernelName = KernelName.QUARTIC
    epsilon_p: float = Field(DEFAULT_EPSILON_P, gt=0, lt=0.5)
    oracle: bool = Field(False, description="Replace the estimated transforms by their null limit")

    @model_validator(mode="after")
    def _check_values(self) -> "SweepGrid":
        if any(c <= 0 for pair in self.bandwidths for c in pair):
            raise ValueError("bandwidth constants must be positive")
        if any(not 0 < level < 1 for level in self.levels):
            raise ValueError("levels must lie in (0, 1)")
        return self

    def resolution(self, binary: bool) -> int:
        if self.grid is not None:
            return self.grid
        return DEFAULT_DISCRETE_RESOLUTION if binary else DEFAULT_CONTINUOUS_RESOLUTION


class LevelRate(BaseModel):
    model_config = ConfigDict(frozen=True)

    functional: Functional
    alpha: float
    rejections: int
    rate: Optional[float] = Field(None, ge=0, le=1, description="None when no replication completed")
    mc_se: Optional[float] = Field(None, description="sqrt(rate (1 - rate) / completed)")


class SimCell(BaseModel):
    model_config = ConfigDict(frozen=True)

    design: DgpSpec
    h_z: float = Field(..., description="Bandwidth constant for Z_hat or the propensities")
    h_y: float = Field(..., description="Bandwidth constant for Y_hat")
    beta: BetaKind
    completed: int
    failures: int
    rates: List[LevelRate]

    def rate(self, functional: Functional, alpha: float) -> Optional[float]:
        for entry in self.rates:
            if entry.functional == Functional(functional) and math.isclose(entry.alpha, alpha):
                return entry.rate
        raise KeyError(f"no rate for {functional} at level {alpha}")


class SimReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    cells: List[SimCell]
    reps: int
    bootstrap: int
    master_seed: int
    sweep: SweepGrid


class SimulateConfig(BaseModel):
    """A complete simulation run; echoed in reports so it can be replayed."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    preset: Optional[str] = None
    designs: Tuple[DgpSpec, ...] = Field(..., min_length=1)
    sweep: SweepGrid = Field(default_factory=SweepGrid)
    reps: int = Field(..., ge=1, description="Monte Carlo replications per design")
    bootstrap: int = Field(..., ge=1, description="Bootstrap draws per replication")
    master_seed: int = Field(..., ge=0)


def mc_standard_error(rate: float, completed: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / completed)


def _replication_decisions(design_index: int, dgp: DgpSpec, r: int, sweep: SweepGrid,
                           bootstrap: int, master_seed: int) -> List[Optional[np.ndarray]]:
    """Reject flags per cell of one replication, shape (functionals, levels); None on failure."""
    n_cells = len(sweep.bandwidths) * len(sweep.betas)
    seed = derive_seed(master_seed, REPLICATION_STREAM, design_index, r)
    binary = dgp.name.binary
    grid = (EvalGrid.for_support(BINARY_SUPPORT, sweep.resolution(True)) if binary
            else EvalGrid.continuous(sweep.resolution(False)))
    kernel = get_kernel(sweep.kernel)

    with log_context(design=dgp.label, replication=r):
        try:
            draws = draw_multipliers(dgp.n, bootstrap, seed)
            if sweep.oracle:
                oracle = oracle_transformed_sample(dgp.n, stream(seed, ORACLE_STREAM),
                                                   support=BINARY_SUPPORT if binary else None,
                                                   epsilon_p=sweep.epsilon_p)
            else:
                sample = generate(dgp, seed)
                spec = dgp.index_spec()
                index_values = eval_index(spec.model, resolve_theta(spec, sample.z, sample.x), sample.x)
        except CITestError as exc:
            logger.warning("replication failed", extra={'error': str(exc), 'error_type': exc.__class__.__name__})
            metrics.increment_counter("replication_failures_total", {'design': dgp.name.value}, value=n_cells)
            return [None] * n_cells

        decisions: List[Optional[np.ndarray]] = []
        for h_z, h_y in sweep.bandwidths:
            try:
                ts = oracle if sweep.oracle else rosenblatt_transform(
                    sample, index_values,
                    Bandwidth(constant=h_y, exponent=sweep.exponent),
                    Bandwidth(constant=h_z, exponent=sweep.exponent),
                    kernel=kernel, epsilon_p=sweep.epsilon_p)
            except CITestError as exc:
                logger.warning("transform failed", extra={'error': str(exc), 'h_z': h_z, 'h_y': h_y})
                metrics.increment_counter("replication_failures_total", {'design': dgp.name.value},
                                          value=len(sweep.betas))
                decisions.extend([None] * len(sweep.betas))
                continue
            for beta in sweep.betas:
                calibrated = compute_statistics(ts, BetaFamily.from_name(beta), grid, sweep.functionals, draws)
                flags = np.array([[decide(calibrated[f], level)[2] for level in sweep.levels]
                                  for f in sweep.functionals])
                decisions.append(flags)
        return decisions


@timed_operation("rejection_table", expected=(CITestError,))
def rejection_table(designs: Sequence[DgpSpec], sweep: SweepGrid, reps: int, bootstrap: int,
                    master_seed: int, threads: int = 1) -> SimReport:
    """Rejection rates for every (design, bandwidth pair, beta) cell.

    Rejections are summed over replications, so the result does not depend on
    ``threads`` or on the order replications finish in.
    """
    if reps < 1 or bootstrap < 1:
        raise InvalidInputError(f"reps and bootstrap must be at least 1, got {reps} and {bootstrap}")
    cells: List[SimCell] = []
    shape = (len(sweep.functionals), len(sweep.levels))
    for d, dgp in enumerate(designs):
        n_cells = len(sweep.bandwidths) * len(sweep.betas)

        def run(r: int, d=d, dgp=dgp) -> List[Optional[np.ndarray]]:
            return _replication_decisions(d, dgp, r, sweep, bootstrap, master_seed)

        if threads > 1 and reps > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(run, range(reps)))
        else:
            outcomes = [run(r) for r in range(reps)]

        counts = [np.zeros(shape, dtype=int) for _ in range(n_cells)]
        completed = [0] * n_cells
        for outcome in outcomes:
            for k, flags in enumerate(outcome):
                if flags is not None:
                    counts[k] += flags
                    completed[k] += 1

        pairs = [(h, b) for h in sweep.bandwidths for b in sweep.betas]
        for k, ((h_z, h_y), beta) in enumerate(pairs):
            rates = []
            for i, functional in enumerate(sweep.functionals):
                for j, level in enumerate(sweep.levels):
                    rejections = int(counts[k][i, j])
                    rate = rejections / completed[k] if completed[k] else None
                    rates.append(LevelRate(
                        functional=functional, alpha=level, rejections=rejections, rate=rate,
                        mc_se=mc_standard_error(rate, completed[k]) if rate is not None else None))
            cells.append(SimCell(design=dgp, h_z=h_z, h_y=h_y, beta=beta, completed=completed[k],
                                 failures=reps - completed[k], rates=rates))
        logger.info("design finished", extra={'design': dgp.label, 'cells': n_cells,
                                              'failures': sum(reps - c for c in completed)})
    return SimReport(cells=cells, reps=reps, bootstrap=bootstrap, master_seed=master_seed, sweep=sweep)


def run_simulation(config: SimulateConfig, threads: int = 1) -> SimReport:
    return rejection_table(config.designs, config.sweep, config.reps, config.bootstrap,
                           config.master_seed, threads=threads)


def rates_by_cell(report: SimReport, functional: Functional, alpha: float) -> Dict[Tuple[str, float, float, str], Optional[float]]:
    """Flat {(design label, h_z, h_y, beta): rate} view of one functional and level."""
    return {(cell.design.label, cell.h_z, cell.h_y, cell.beta.value): cell.rate(functional, alpha)
            for cell in report.cells}
