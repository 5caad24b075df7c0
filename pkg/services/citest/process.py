"""
Feasible empirical processes on a rectangular grid.

Continuous Z:
    nu_hat(u, y, z) = n^{-1/2} sum_i beta_u(U_i) gamma_perp_z(Z_i) gamma_perp_y(Y_i)
Discrete Z:
    nu_bar(u, y, z) = n^{-1/2} sum_i beta_u(U_i) (1{Z_i = z} - p_z,i) gamma_perp_y(Y_i) / sqrt(p_z,i - p_z,i^2)

Both are linear in per-observation terms, so the process is built from
per-axis factor tables and a single contraction over observations. The same
contraction with multiplier rows gives the wild-bootstrap processes.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from services.citest.errors import InvalidInputError, InvariantViolationError
from services.citest.transform import TransformedSample
from services.citest.weights import BetaFamily, gamma_perp

logger = logging.getLogger(__name__)

DEFAULT_CONTINUOUS_RESOLUTION = 10
DEFAULT_DISCRETE_RESOLUTION = 20


def midpoints(resolution: int) -> np.ndarray:
    """(2k - 1) / (2G), k = 1..G."""
    if resolution < 1:
        raise InvalidInputError(f"grid resolution must be at least 1, got {resolution}")
    return (2.0 * np.arange(1, resolution + 1) - 1.0) / (2.0 * resolution)


def _axis(points: Sequence[float], label: str, unit_interval: bool = True) -> np.ndarray:
    points = np.array(points, dtype=float).ravel()
    if points.size == 0:
        raise InvalidInputError(f"grid axis '{label}' is empty")
    if np.any(np.diff(points) <= 0):
        raise InvalidInputError(f"grid axis '{label}' must be strictly increasing")
    if unit_interval and (points[0] < 0.0 or points[-1] > 1.0):
        raise InvalidInputError(f"grid axis '{label}' must lie in [0, 1]")
    points.setflags(write=False)
    return points


@dataclass(frozen=True)
class EvalGrid:
    """Grid of (u, y, z) points; for discrete Z the z axis is the support."""
    u_points: np.ndarray
    y_points: np.ndarray
    z_points: np.ndarray
    discrete: bool = False

    def __post_init__(self):
        object.__setattr__(self, "u_points", _axis(self.u_points, "u"))
        object.__setattr__(self, "y_points", _axis(self.y_points, "y"))
        object.__setattr__(self, "z_points", _axis(self.z_points, "z", unit_interval=not self.discrete))

    @classmethod
    def continuous(cls, resolution: int = DEFAULT_CONTINUOUS_RESOLUTION) -> "EvalGrid":
        axis = midpoints(resolution)
        return cls(axis, axis, axis)

    @classmethod
    def for_support(cls, support: Sequence[float], resolution: int = DEFAULT_DISCRETE_RESOLUTION) -> "EvalGrid":
        axis = midpoints(resolution)
        return cls(axis, axis, np.asarray(support, dtype=float), discrete=True)

    @property
    def shape(self) -> tuple:
        return (self.u_points.size, self.y_points.size, self.z_points.size)

    @property
    def cell_volume(self) -> float:
        """Midpoint-rule weight of one (u, y[, z]) cell; z is summed, not integrated, when discrete."""
        volume = 1.0 / (self.u_points.size * self.y_points.size)
        return volume if self.discrete else volume / self.z_points.size


@dataclass(frozen=True)
class ProcessValues:
    """Process evaluated on a grid; values are indexed [u, y, z]."""
    values: np.ndarray
    grid: EvalGrid
    n: int

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise InvalidInputError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")


def standardized_residuals(ts: TransformedSample, z_codes: Optional[np.ndarray] = None) -> np.ndarray:
    """(1{Z_i = z} - p_z,i) / sqrt(p_z,i - p_z,i^2), an n x |support| table."""
    z_codes = ts.z_codes if z_codes is None else np.asarray(z_codes, dtype=float)
    if z_codes.shape[0] != ts.n:
        raise InvalidInputError(f"expected {ts.n} z codes, got {z_codes.shape[0]}")
    p = ts.p_hat
    if not np.all((p > 0.0) & (p < 1.0)):
        raise InvariantViolationError("propensity estimates must lie strictly inside (0, 1)")
    indicators = (z_codes[:, None] == np.asarray(ts.support)[None, :]).astype(float)
    return (indicators - p) / np.sqrt(p - p * p)


def observation_terms(ts: TransformedSample, family: BetaFamily, grid: EvalGrid,
                      z_codes: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-observation summands on the grid, shape (n, G_u * G_y * G_z)."""
    if grid.discrete != ts.is_discrete:
        raise InvalidInputError("grid kind (continuous/discrete) does not match the transformed sample")
    beta = family.eval(ts.u_hat[:, None], grid.u_points[None, :])
    gamma_y = gamma_perp(grid.y_points[None, :], ts.y_hat[:, None])
    if ts.is_discrete:
        if tuple(grid.z_points) != tuple(ts.support):
            raise InvalidInputError("discrete grid z axis must equal the support")
        third = standardized_residuals(ts, z_codes)
    else:
        third = gamma_perp(grid.z_points[None, :], ts.z_hat[:, None])
    terms = beta[:, :, None, None] * gamma_y[:, None, :, None] * third[:, None, None, :]
    return terms.reshape(ts.n, -1)


def contract(multipliers: np.ndarray, terms: np.ndarray) -> np.ndarray:
    """n^{-1/2} * multipliers @ terms, summed over observations in ascending order.

    Each output entry depends only on its own multiplier row, so splitting the
    rows across workers cannot change any value.
    """
    multipliers = np.atleast_2d(np.asarray(multipliers, dtype=float))
    if multipliers.shape[1] != terms.shape[0]:
        raise InvalidInputError(
            f"multiplier rows have length {multipliers.shape[1]}, expected {terms.shape[0]}")
    summed = np.einsum('bi,ik->bk', multipliers, terms, optimize=False)
    return summed / np.sqrt(terms.shape[0])


def feasible_process(ts: TransformedSample, family: BetaFamily, grid: EvalGrid) -> ProcessValues:
    if ts.is_discrete:
        raise InvalidInputError("feasible_process needs a continuous-Z transformed sample")
    terms = observation_terms(ts, family, grid)
    values = contract(np.ones((1, ts.n)), terms)[0].reshape(grid.shape)
    return ProcessValues(values=values, grid=grid, n=ts.n)


def discrete_process(ts: TransformedSample, z_codes: Optional[np.ndarray], family: BetaFamily,
                     grid: EvalGrid) -> ProcessValues:
    if not ts.is_discrete:
        raise InvalidInputError("discrete_process needs a discrete-Z transformed sample")
    terms = observation_terms(ts, family, grid, z_codes)
    values = contract(np.ones((1, ts.n)), terms)[0].reshape(grid.shape)
    return ProcessValues(values=values, grid=grid, n=ts.n)
