"""
Weight functions of the test process and the covariance of its limit.

beta_u(U) weights the index axis; gamma_z(t) = z exp(t z) and its centred
version gamma_perp_z(t) = gamma_z(t) - (e^z - 1) weight the two transformed
variables. All inner products are on L2[0, 1] and have closed forms.

Only the indicator and exponential families are provided. Both satisfy the
completeness condition that makes the moment restriction equivalent to
conditional independence; that condition is a population property and is not
checked at runtime.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np


class BetaKind(str, Enum):
    INDICATOR = "ind"
    EXPONENTIAL = "exp"


@dataclass(frozen=True)
class BetaFamily:
    """beta_u(U) = scale * 1{U <= u} or scale * exp(U u)."""
    kind: BetaKind
    scale: float = 1.0

    @classmethod
    def from_name(cls, name: Union[str, BetaKind]) -> "BetaFamily":
        return cls(BetaKind(name))

    def eval(self, U, u):
        U = np.asarray(U, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind is BetaKind.INDICATOR:
            out = self.scale * (U <= u).astype(float)
        else:
            out = self.scale * np.exp(U * u)
        return float(out) if out.ndim == 0 else out

    def inner(self, u1: float, u2: float) -> float:
        """<beta_u1, beta_u2> on L2[0, 1]."""
        if self.kind is BetaKind.INDICATOR:
            base = min(u1, u2)
        else:
            s = u1 + u2
            base = 1.0 if s == 0.0 else float(np.expm1(s) / s)
        return self.scale * self.scale * base


INDICATOR = BetaFamily(BetaKind.INDICATOR)
EXPONENTIAL = BetaFamily(BetaKind.EXPONENTIAL)


def beta_eval(family: BetaFamily, U, u):
    return family.eval(U, u)


def gamma(z, t):
    """gamma_z(t) = z exp(t z)."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    out = z * np.exp(t * z)
    return float(out) if out.ndim == 0 else out


def gamma_perp(z, t):
    """gamma_z(t) - (e^z - 1); integrates to zero over t in [0, 1]."""
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float)
    out = z * np.exp(t * z) - np.expm1(z)
    return float(out) if out.ndim == 0 else out


def gamma_perp_inner(z1: float, z2: float) -> float:
    """<gamma_perp_z1, gamma_perp_z2> = z1 z2 (e^(z1+z2) - 1)/(z1+z2) - (e^z1 - 1)(e^z2 - 1)."""
    s = z1 + z2
    if s == 0.0:
        # only reachable with z1 = z2 = 0 on [0, 1]
        return 0.0
    return float(z1 * z2 * np.expm1(s) / s - np.expm1(z1) * np.expm1(z2))


def covariance_kernel(r1: Sequence[float], r2: Sequence[float], family: BetaFamily,
                      discrete: bool = False) -> float:
    """Covariance of the limit process at r1 = (u1, y1, z1) and r2 = (u2, y2, z2).

    With ``discrete=True`` the z coordinates are support labels and the kernel is
    <beta><gamma_perp_y> when they match, 0 otherwise.
    """
    u1, y1, z1 = (float(v) for v in r1)
    u2, y2, z2 = (float(v) for v in r2)
    if discrete:
        if z1 != z2:
            return 0.0
        return family.inner(u1, u2) * gamma_perp_inner(y1, y2)
    return family.inner(u1, u2) * gamma_perp_inner(z1, z2) * gamma_perp_inner(y1, y2)
