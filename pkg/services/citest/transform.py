"""
Empirical Rosenblatt transforms.

Turns observed (Y, Z, X) rows plus fitted single-index values into the
per-observation quantities the test statistics are built from:

* U_hat: leave-one-out empirical CDF of the index values,
* Y_hat / Z_hat: leave-one-out kernel estimates of F(Y_i | U_hat_i) and F(Z_i | U_hat_i),
* p_hat: leave-one-out kernel propensities P(Z = z | U_hat_i) for discrete Z.
"""
import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.citest.errors import DegenerateKernelWarning, InvalidInputError
from services.citest.observability import metrics

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_P = 1e-3


# --- Kernels ---
def quartic_kernel(u):
    """(15/16)(1 - u^2)^2 on |u| <= 1, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, 15.0 / 16.0 * (1.0 - u ** 2) ** 2, 0.0)
    return float(out) if out.ndim == 0 else out


def triweight_kernel(u):
    """(35/32)(1 - u^2)^3 on |u| <= 1, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, 35.0 / 32.0 * (1.0 - u ** 2) ** 3, 0.0)
    return float(out) if out.ndim == 0 else out


class KernelName(str, Enum):
    QUARTIC = "quartic"
    TRIWEIGHT = "triweight"


@dataclass(frozen=True)
class Kernel:
    """Symmetric, nonnegative smoothing kernel supported on [-radius, radius]."""
    name: KernelName
    eval: Callable
    support_radius: float = 1.0

    def __call__(self, u):
        return self.eval(u)


KERNELS = {
    KernelName.QUARTIC: Kernel(KernelName.QUARTIC, quartic_kernel),
    KernelName.TRIWEIGHT: Kernel(KernelName.TRIWEIGHT, triweight_kernel),
}
QUARTIC = KERNELS[KernelName.QUARTIC]


def get_kernel(name: Union[str, KernelName]) -> Kernel:
    try:
        return KERNELS[KernelName(name)]
    except ValueError:
        raise InvalidInputError(f"Unknown kernel '{name}'. Expected one of {[k.value for k in KernelName]}")


class Bandwidth(BaseModel):
    """Bandwidth rule h = constant * n^(-exponent)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    constant: float = Field(1.0, gt=0, description="Multiplicative constant c")
    exponent: float = Field(0.2, gt=0, description="Rate exponent s")

    def resolve(self, n: int) -> float:
        return self.constant * float(n) ** (-self.exponent)


# --- Samples ---
@dataclass(frozen=True)
class ContinuousZ:
    pass


@dataclass(frozen=True)
class DiscreteZ:
    support: Tuple[float, ...]

    def __post_init__(self):
        support = tuple(float(s) for s in self.support)
        if len(support) < 2:
            raise InvalidInputError("a discrete Z support needs at least two values")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise InvalidInputError(f"support must be strictly increasing, got {support}")
        object.__setattr__(self, "support", support)


ZKind = Union[ContinuousZ, DiscreteZ]


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Sample:
    """Observed (Y_i, Z_i, X_i) rows."""
    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    z_kind: ZKind = field(default_factory=ContinuousZ)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        z = np.array(self.z, dtype=float).ravel()
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if n < 2:
            raise InvalidInputError(f"a sample needs at least 2 observations, got {n}")
        if z.shape[0] != n or x.ndim != 2 or x.shape[0] != n:
            raise InvalidInputError(
                f"y, z and x must have the same number of rows, got {n}, {z.shape[0]}, {x.shape[0]}")
        for label, values in (("y", y), ("z", z), ("x", x)):
            if not np.all(np.isfinite(values)):
                raise InvalidInputError(f"{label} contains non-finite values")
        if isinstance(self.z_kind, DiscreteZ):
            outside = ~np.isin(z, np.asarray(self.z_kind.support))
            if outside.any():
                first = int(np.flatnonzero(outside)[0])
                raise InvalidInputError(f"z[{first}]={z[first]} is not in the support {self.z_kind.support}")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "x", _frozen(x))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.z_kind, DiscreteZ)


@dataclass(frozen=True)
class TransformedSample:
    """Per-observation transforms; read-only once built."""
    u_hat: np.ndarray
    y_hat: np.ndarray
    z_hat: Optional[np.ndarray] = None
    p_hat: Optional[np.ndarray] = None
    z_codes: Optional[np.ndarray] = None
    support: Optional[Tuple[float, ...]] = None
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("u_hat", "y_hat", "z_hat", "p_hat", "z_codes"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(np.array(value, dtype=float)))
        n = self.u_hat.shape[0]
        if self.y_hat.shape[0] != n:
            raise InvalidInputError("u_hat and y_hat lengths differ")
        if self.is_discrete:
            if self.p_hat is None or self.z_codes is None:
                raise InvalidInputError("a discrete transformed sample needs p_hat and z_codes")
            if self.p_hat.shape != (n, len(self.support)) or self.z_codes.shape[0] != n:
                raise InvalidInputError("p_hat must be n x |support| and z_codes length n")
        elif self.z_hat is None or self.z_hat.shape[0] != n:
            raise InvalidInputError("a continuous transformed sample needs z_hat of length n")

    @property
    def n(self) -> int:
        return self.u_hat.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.support is not None


# --- Empirical CDF ---
def ecdf_leave_one_out(values: Sequence[float], i: int) -> float:
    """#{j != i : values[j] <= values[i]} / (n - 1)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise InvalidInputError(f"leave-one-out ECDF needs n >= 2, got {n}")
    if not 0 <= i < n:
        raise InvalidInputError(f"index {i} out of range for n={n}")
    others = np.delete(values, i)
    return float(np.count_nonzero(others <= values[i])) / (n - 1)


def ecdf_leave_one_out_all(values: Sequence[float]) -> np.ndarray:
    """ecdf_leave_one_out for every i at once."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise InvalidInputError(f"leave-one-out ECDF needs n >= 2, got {n}")
    at_or_below = np.searchsorted(np.sort(values), values, side="right")
    # the observation itself is always counted by <=
    return (at_or_below - 1).astype(float) / (n - 1)


# --- Kernel smoothing ---
def _point_weights(u_hat: np.ndarray, at: float, h: float, kernel: Kernel,
                   leave_out: Optional[int]) -> Tuple[np.ndarray, bool]:
    if h <= 0:
        raise InvalidInputError(f"bandwidth must be positive, got {h}")
    weights = kernel((u_hat - at) / h) / h
    keep = np.ones(u_hat.shape[0], dtype=bool)
    if leave_out is not None:
        if not 0 <= leave_out < u_hat.shape[0]:
            raise InvalidInputError(f"leave_out index {leave_out} out of range")
        keep[leave_out] = False
    weights = np.where(keep, weights, 0.0)
    if weights.sum() > 0:
        return weights, False
    metrics.increment_counter("kernel_fallback_total", {"estimator": "pointwise"})
    warnings.warn(
        f"no kernel weight within h={h:.6g} of u={at:.6g}; using uniform leave-one-out weights",
        DegenerateKernelWarning,
        stacklevel=3,
    )
    return keep.astype(float), True


def kernel_conditional_cdf(y: float, u: float, responses: Sequence[float], u_hat: Sequence[float],
                           h: float, leave_out: Optional[int] = None, kernel: Kernel = QUARTIC) -> float:
    """Leave-one-out Nadaraya-Watson estimate of F(y | U = u)."""
    responses = np.asarray(responses, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if responses.shape != u_hat.shape:
        raise InvalidInputError("responses and u_hat must have equal length")
    weights, _ = _point_weights(u_hat, u, h, kernel, leave_out)
    numerator = float(np.sum(weights * (responses <= y)))
    return min(max(numerator / float(np.sum(weights)), 0.0), 1.0)


def kernel_propensity(z: float, u: float, z_codes: Sequence[float], u_hat: Sequence[float], h: float,
                      leave_out: Optional[int] = None, support: Optional[Sequence[float]] = None,
                      kernel: Kernel = QUARTIC, epsilon_p: float = DEFAULT_EPSILON_P) -> float:
    """Leave-one-out kernel estimate of P(Z = z | U = u), clamped into [eps, 1 - eps]."""
    z_codes = np.asarray(z_codes, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if z_codes.shape != u_hat.shape:
        raise InvalidInputError("z_codes and u_hat must have equal length")
    support = np.unique(z_codes) if support is None else np.asarray(support, dtype=float)
    if z not in support:
        raise InvalidInputError(f"z={z} is not in the support {tuple(support)}")
    weights, _ = _point_weights(u_hat, u, h, kernel, leave_out)
    p = float(np.sum(weights * (z_codes == z))) / float(np.sum(weights))
    return min(max(p, epsilon_p), 1.0 - epsilon_p)


def _leave_one_out_weights(u_hat: np.ndarray, h: float, kernel: Kernel, label: str) -> Tuple[np.ndarray, list]:
    """Row i holds K_h(u_hat_j - u_hat_i) for j != i; empty rows fall back to uniform."""
    if h <= 0:
        raise InvalidInputError(f"bandwidth must be positive, got {h}")
    n = u_hat.shape[0]
    weights = kernel((u_hat[None, :] - u_hat[:, None]) / h) / h
    np.fill_diagonal(weights, 0.0)
    empty = np.flatnonzero(weights.sum(axis=1) <= 0.0)
    notes = []
    if empty.size:
        weights[empty, :] = 1.0
        weights[empty, empty] = 0.0
        metrics.increment_counter("kernel_fallback_total", {"estimator": label}, value=int(empty.size))
        note = (f"{label}: {empty.size} of {n} observations had no kernel neighbour within h={h:.6g}; "
                f"uniform leave-one-out weights used")
        logger.warning(note, extra={'estimator': label, 'observations': int(empty.size)})
        notes.append(note)
    return weights, notes


def _smoothed_cdf_at_observations(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    below = (values[None, :] <= values[:, None]).astype(float)
    numerator = np.einsum('ij,ij->i', weights, below)
    denominator = np.einsum('ij->i', weights)
    return np.clip(numerator / denominator, 0.0, 1.0)


def rosenblatt_transform(sample: Sample, index_values: Sequence[float],
                         h_y: Union[float, Bandwidth], h_z: Union[float, Bandwidth],
                         kernel: Kernel = QUARTIC, epsilon_p: float = DEFAULT_EPSILON_P) -> TransformedSample:
    """Build (U_hat, Z_hat, Y_hat) or, for discrete Z, (U_hat, Y_hat, p_hat).

    For discrete Z, ``h_z`` is the propensity bandwidth.
    """
    index_values = np.asarray(index_values, dtype=float).ravel()
    n = sample.n
    if index_values.shape[0] != n:
        raise InvalidInputError(f"expected {n} index values, got {index_values.shape[0]}")
    if not np.all(np.isfinite(index_values)):
        raise InvalidInputError("index values contain non-finite entries")
    h_y = h_y.resolve(n) if isinstance(h_y, Bandwidth) else float(h_y)
    h_z = h_z.resolve(n) if isinstance(h_z, Bandwidth) else float(h_z)

    u_hat = ecdf_leave_one_out_all(index_values)
    weights_y, notes = _leave_one_out_weights(u_hat, h_y, kernel, "y_hat")
    y_hat = _smoothed_cdf_at_observations(sample.y, weights_y)

    if not sample.is_discrete:
        weights_z, notes_z = _leave_one_out_weights(u_hat, h_z, kernel, "z_hat")
        z_hat = _smoothed_cdf_at_observations(sample.z, weights_z)
        return TransformedSample(u_hat=u_hat, y_hat=y_hat, z_hat=z_hat, warnings=tuple(notes + notes_z))

    support = sample.z_kind.support
    weights_p, notes_p = _leave_one_out_weights(u_hat, h_z, kernel, "p_hat")
    indicators = (sample.z[:, None] == np.asarray(support)[None, :]).astype(float)
    p_hat = np.einsum('ij,jk->ik', weights_p, indicators) / np.einsum('ij->i', weights_p)[:, None]
    p_hat = np.clip(p_hat, epsilon_p, 1.0 - epsilon_p)
    return TransformedSample(u_hat=u_hat, y_hat=y_hat, p_hat=p_hat, z_codes=sample.z,
                             support=support, warnings=tuple(notes + notes_p))


# --- Population transforms ---
def population_transform(values: Sequence[float], conditioning: Sequence[float],
                         conditional_cdf: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a known conditional CDF: F(values_i | conditioning_i)."""
    return np.asarray(conditional_cdf(np.asarray(values, dtype=float), np.asarray(conditioning, dtype=float)),
                      dtype=float)


def oracle_transformed_sample(n: int, rng: np.random.Generator,
                              support: Optional[Sequence[float]] = None,
                              propensity: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                              epsilon_p: float = DEFAULT_EPSILON_P) -> TransformedSample:
    """Transforms at their null limit: independent uniforms, with true propensities for discrete Z.

    ``propensity`` maps U (length n) to an n x |support| matrix of probabilities;
    it defaults to equal probabilities over the support.
    """
    u_hat = rng.random(n)
    y_hat = rng.random(n)
    if support is None:
        return TransformedSample(u_hat=u_hat, y_hat=y_hat, z_hat=rng.random(n))
    support = tuple(float(s) for s in support)
    k = len(support)
    probs = np.full((n, k), 1.0 / k) if propensity is None else np.asarray(propensity(u_hat), dtype=float)
    if probs.shape != (n, k):
        raise InvalidInputError(f"propensity must return an array of shape {(n, k)}")
    draws = rng.random(n)
    codes = np.minimum((draws[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), k - 1)
    z_codes = np.asarray(support)[codes]
    p_hat = np.clip(probs, epsilon_p, 1.0 - epsilon_p)
    return TransformedSample(u_hat=u_hat, y_hat=y_hat, p_hat=p_hat, z_codes=z_codes, support=support)
