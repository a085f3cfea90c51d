"""OSPA distance with localisation/cardinality split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgument


@dataclass(frozen=True)
class OspaParams:
    order: float = 1.0
    cutoff: float = 100.0

    def __post_init__(self):
        if self.order < 1:
            raise InvalidArgument("OSPA order must be >= 1")
        if self.cutoff <= 0:
            raise InvalidArgument("OSPA cutoff must be positive")


def _points(x, dim=None):
    a = np.asarray(x, dtype=float)
    if a.size == 0:
        return np.zeros((0, dim or 0))
    return a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(-1, 1)


def ospa(truth, est, params: OspaParams = OspaParams()):
    """Return ``(total, localization, cardinality)``.

    ``total**p == localization**p + cardinality**p``; the localisation term is the cut-off
    optimal assignment cost divided by ``max(m, n)``.
    """
    X, Y = _points(truth), _points(est)
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0, 0.0, 0.0
    if m and n and X.shape[1] != Y.shape[1]:
        raise InvalidArgument("point dimensions differ")
    c, p = float(params.cutoff), float(params.order)
    big = max(m, n)
    cost = 0.0
    if m and n:
        D = np.minimum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1), c) ** p
        rows, cols = linear_sum_assignment(D)
        cost = float(D[rows, cols].sum())
    loc = (cost / big) ** (1.0 / p)
    card = (c**p * abs(m - n) / big) ** (1.0 / p)
    total = ((cost + c**p * abs(m - n)) / big) ** (1.0 / p)
    return total, loc, card
