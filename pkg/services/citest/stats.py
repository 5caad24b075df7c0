"""
Scalar functionals of a process on a grid.

ks2 = max |v|, ks1 = max v, cm2 = (vol * sum v^2)^(1/2), cm1 = (vol * sum max(v, 0)^2)^(1/2),
with vol the midpoint-rule cell volume of the grid (the z axis is summed, not
integrated, for discrete Z).
"""
from enum import Enum
from typing import Union

import numpy as np

from services.citest.errors import InvalidInputError
from services.citest.process import ProcessValues


class Functional(str, Enum):
    KS2 = "ks2"
    CM2 = "cm2"
    KS1 = "ks1"
    CM1 = "cm1"


def functional_values(values: np.ndarray, functional: Union[str, Functional], cell_volume: float) -> np.ndarray:
    """Apply a functional over the trailing axes of ``values`` (B x cells or cells)."""
    functional = Functional(functional)
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidInputError("cannot apply a functional to an empty grid")
    flat = values.reshape(values.shape[0], -1) if values.ndim > 1 else values.reshape(1, -1)
    if functional is Functional.KS2:
        out = np.max(np.abs(flat), axis=1)
    elif functional is Functional.KS1:
        out = np.max(flat, axis=1)
    elif functional is Functional.CM2:
        out = np.sqrt(cell_volume * np.sum(flat * flat, axis=1))
    else:
        positive = np.maximum(flat, 0.0)
        out = np.sqrt(cell_volume * np.sum(positive * positive, axis=1))
    return out


def apply_functional(pv: ProcessValues, f: Union[str, Functional]) -> float:
    if pv.values.size == 0:
        raise InvalidInputError("cannot apply a functional to an empty grid")
    return float(functional_values(pv.values.reshape(1, -1), f, pv.grid.cell_volume)[0])
