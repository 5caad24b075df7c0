"""
Single-index models lambda_theta(X) and estimation of theta.

The linear-scaled model computes scale * (theta_0 + theta_1 x_1 + ... + theta_d x_d);
theta always carries the intercept first and X never contains an intercept
column. theta is either supplied (known) or estimated by probit maximum
likelihood for a binary Z with P(Z = 1 | X) = Phi(lambda_theta(X)).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import log_ndtr

from services.citest.errors import (
    CITestError,
    DegenerateResponseError,
    InvalidInputError,
    NonConvergenceError,
)
from services.citest.observability import metrics, timed_operation

logger = logging.getLogger(__name__)

# Phi is kept inside [PHI_FLOOR, 1 - PHI_FLOOR] in the likelihood.
PHI_FLOOR = 1e-12
_LOG_PHI_FLOOR = float(np.log(PHI_FLOOR))
_MAX_HALVINGS = 50
# A step may lower the log-likelihood by this much (relative) and still be taken.
_LOGLIK_RTOL = 1e-12


class IndexKind(str, Enum):
    LINEAR_SCALED = "linear"
    CUSTOM = "custom"


@dataclass(frozen=True)
class IndexModel:
    kind: IndexKind = IndexKind.LINEAR_SCALED
    scale: float = 1.0
    fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    @classmethod
    def linear(cls, scale: float = 1.0) -> "IndexModel":
        return cls(IndexKind.LINEAR_SCALED, scale=scale)

    @classmethod
    def custom(cls, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "IndexModel":
        return cls(IndexKind.CUSTOM, fn=fn)


# --- theta specifications ---
class KnownTheta(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["known"] = "known"
    values: Tuple[float, ...] = Field(..., min_length=1, description="theta, intercept first")


class ProbitMleSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["probit"] = "probit"
    init: Optional[Tuple[float, ...]] = Field(None, description="Starting value; zeros when omitted")
    tol: float = Field(1e-8, gt=0, description="Sup-norm tolerance on the score")
    max_iter: int = Field(100, ge=1, description="Newton iteration cap")


ThetaSpec = Union[KnownTheta, ProbitMleSpec]


@dataclass(frozen=True)
class IndexSpec:
    """An index model together with how its theta is obtained."""
    model: IndexModel
    theta: ThetaSpec


def design_matrix(X) -> np.ndarray:
    """Prepend the intercept column to the covariates."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def eval_index(model: IndexModel, theta: Sequence[float], X) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if model.kind is IndexKind.CUSTOM:
        values = np.asarray(model.fn(theta, X), dtype=float).ravel()
        if values.shape[0] != X.shape[0]:
            raise InvalidInputError("custom index returned the wrong number of values")
        return values
    if theta.shape[0] != X.shape[1] + 1:
        raise InvalidInputError(
            f"theta has {theta.shape[0]} entries but X has {X.shape[1]} columns (expected {X.shape[1] + 1})")
    return model.scale * (design_matrix(X) @ theta)


# --- probit likelihood ---
def _check_binary(z: np.ndarray) -> None:
    if not np.all((z == 0.0) | (z == 1.0)):
        raise InvalidInputError("probit response must be coded 0/1")
    if z.min() == z.max():
        raise DegenerateResponseError(f"probit response is constant ({int(z[0])} for all observations)")


def _signed_index(z: np.ndarray, design: np.ndarray, scale: float, theta: np.ndarray) -> np.ndarray:
    return (2.0 * z - 1.0) * scale * (design @ theta)


def _log_phi(t: np.ndarray) -> np.ndarray:
    return np.maximum(log_ndtr(t), _LOG_PHI_FLOOR)


def _inverse_mills(t: np.ndarray) -> np.ndarray:
    """phi(t) / Phi(t), computed in logs."""
    return np.exp(-0.5 * t * t - 0.5 * np.log(2.0 * np.pi) - _log_phi(t))


def probit_log_likelihood(theta, z, X, model: IndexModel = IndexModel.linear()) -> float:
    z = np.asarray(z, dtype=float).ravel()
    t = _signed_index(z, design_matrix(X), model.scale, np.asarray(theta, dtype=float))
    return float(np.sum(_log_phi(t)))


def probit_score(theta, z, X, model: IndexModel = IndexModel.linear()) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    design = design_matrix(X)
    q = 2.0 * z - 1.0
    t = _signed_index(z, design, model.scale, np.asarray(theta, dtype=float))
    return model.scale * design.T @ (q * _inverse_mills(t))


def _information(theta: np.ndarray, z: np.ndarray, design: np.ndarray, scale: float) -> np.ndarray:
    t = _signed_index(z, design, scale, theta)
    lam = _inverse_mills(t)
    w = lam * (lam + t)
    return scale * scale * (design.T * w) @ design


@dataclass(frozen=True)
class ProbitFit:
    theta: np.ndarray
    log_likelihood: float
    iterations: int
    score_norm: float


@timed_operation("probit_mle", level=logging.DEBUG, expected=(CITestError,))
def probit_mle(z, X, model: IndexModel = IndexModel.linear(), opts: Optional[ProbitMleSpec] = None) -> ProbitFit:
    """Newton-Raphson probit MLE with step-halving on likelihood decrease.

    X holds covariates only; the intercept is added here.
    """
    if model.kind is not IndexKind.LINEAR_SCALED:
        raise InvalidInputError("probit MLE needs a linear-scaled index model")
    opts = opts or ProbitMleSpec()
    z = np.asarray(z, dtype=float).ravel()
    design = design_matrix(X)
    if design.shape[0] != z.shape[0]:
        raise InvalidInputError(f"z has {z.shape[0]} entries but X has {design.shape[0]} rows")
    _check_binary(z)

    p = design.shape[1]
    theta = np.zeros(p) if opts.init is None else np.asarray(opts.init, dtype=float)
    if theta.shape[0] != p:
        raise InvalidInputError(f"init has {theta.shape[0]} entries, expected {p}")

    loglik = probit_log_likelihood(theta, z, X, model)
    for iteration in range(opts.max_iter + 1):
        score = probit_score(theta, z, X, model)
        score_norm = float(np.max(np.abs(score)))
        if score_norm < opts.tol:
            metrics.increment_counter("probit_iterations_total", value=iteration)
            return ProbitFit(theta=theta, log_likelihood=loglik, iterations=iteration, score_norm=score_norm)
        if iteration == opts.max_iter:
            break
        try:
            step = np.linalg.solve(_information(theta, z, design, model.scale), score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(_information(theta, z, design, model.scale), score, rcond=None)[0]
        # Near the optimum a full Newton step moves the log-likelihood by less than
        # its rounding error; only a real decrease triggers halving.
        floor = loglik - _LOGLIK_RTOL * max(1.0, abs(loglik))
        for _ in range(_MAX_HALVINGS):
            candidate = theta + step
            candidate_loglik = probit_log_likelihood(candidate, z, X, model)
            if candidate_loglik >= floor:
                break
            step = step / 2.0
        else:
            logger.warning("step-halving exhausted", extra={'iteration': iteration, 'score_norm': score_norm})
            break
        theta, loglik = candidate, candidate_loglik

    raise NonConvergenceError(
        f"probit MLE did not reach score tolerance {opts.tol} after {opts.max_iter} iterations "
        f"(score sup-norm {score_norm:.3g})",
        last_iterate=theta,
        iterations=iteration,
    )


def resolve_theta(spec: IndexSpec, z, X) -> np.ndarray:
    """theta for ``spec``: the known values, or the probit MLE fitted to (z, X)."""
    if isinstance(spec.theta, KnownTheta):
        return np.asarray(spec.theta.values, dtype=float)
    return probit_mle(z, X, spec.model, spec.theta).theta
