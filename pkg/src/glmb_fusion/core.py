"""Labeled random finite set types: labels, Gaussians, GLMB components and association arrays."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import InvalidArgument, InvalidState

_SYM_RTOL = 1e-9


class Label(NamedTuple):
    """Track label ``(birth_time, birth_index)``; tuple ordering is lexicographic."""

    birth_time: int
    birth_index: int

    def __str__(self):
        return f"{self.birth_time}.{self.birth_index}"


class Gaussian:
    """Single Gaussian density N(.; mean, cov).

    Instances are treated as immutable; the arrays are flagged read-only.
    """

    __slots__ = ("mean", "cov")

    def __init__(self, mean, cov, validate=True):
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        if cov.ndim == 0 and mean.size == 1:
            cov = cov.reshape(1, 1)
        if validate:
            _check_covariance(mean, cov)
        mean.flags.writeable = False
        cov.flags.writeable = False
        self.mean = mean
        self.cov = cov

    @classmethod
    def unchecked(cls, mean, cov):
        g = cls.__new__(cls)
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        g.mean = mean
        g.cov = cov
        return g

    @property
    def dim(self):
        return self.mean.size

    def __repr__(self):
        return f"Gaussian(mean={self.mean.tolist()}, cov=<{self.dim}x{self.dim}>)"


def _check_covariance(mean, cov):
    d = mean.size
    if cov.shape != (d, d):
        raise InvalidArgument(f"covariance shape {cov.shape} does not match mean dimension {d}")
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise InvalidArgument("non-finite Gaussian parameters")
    scale = max(np.max(np.abs(cov)), 1e-300)
    if np.max(np.abs(cov - cov.T)) > _SYM_RTOL * scale:
        raise InvalidArgument("covariance is not symmetric")
    if d and np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) <= 0.0:
        raise InvalidArgument("covariance is not positive definite")


@dataclass(frozen=True)
class LabeledGaussianTrack:
    label: Label
    density: Gaussian


def chain_key(*parts) -> int:
    """Deterministic 64-bit hash of a sequence of integers (and nested tuples of integers)."""
    h = hashlib.blake2b(digest_size=8)
    _feed(h, parts)
    return struct.unpack("<q", h.digest())[0]


def _feed(h, obj):
    if isinstance(obj, (tuple, list)):
        h.update(b"(")
        for o in obj:
            _feed(h, o)
        h.update(b")")
    else:
        h.update(struct.pack("<q", int(obj)))


def birth_track_key(label: Label) -> int:
    return chain_key(-7, label)


def component_lineage(track_keys: Mapping[Label, int]) -> int:
    """Lineage of a component: a hash over its sorted per-track association histories."""
    return chain_key(*sorted(track_keys.items()))


@dataclass
class GlmbComponent:
    """One term (I, xi, omega, p) of a GLMB density.

    ``track_keys`` holds, per label, a hash chain of that track's association rows; two
    components with equal label sets and equal track keys carry identical track densities.
    """

    label_set: tuple
    log_weight: float
    tracks: dict
    track_keys: dict
    lineage: int = field(default=None)

    def __post_init__(self):
        self.label_set = tuple(sorted(self.label_set))
        if set(self.tracks) != set(self.label_set) or set(self.track_keys) != set(self.label_set):
            raise InvalidState("track keys must equal the component label set")
        if len(set(self.label_set)) != len(self.label_set):
            raise InvalidState("duplicate labels within a component")
        if not np.isfinite(self.log_weight):
            raise InvalidState("component log-weight is not finite")
        if self.lineage is None:
            self.lineage = component_lineage(self.track_keys)

    @property
    def weight(self):
        return float(np.exp(self.log_weight))

    @property
    def identity(self):
        return (self.label_set, self.lineage)


def logsumexp(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return -np.inf
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.sum(np.exp(v - m))))


@dataclass
class GlmbDensity:
    components: list
    time: int = 0

    def __len__(self):
        return len(self.components)

    @property
    def log_weights(self):
        return np.array([c.log_weight for c in self.components], dtype=float)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def normalized(self) -> "GlmbDensity":
        if not self.components:
            raise InvalidState("cannot normalize an empty GLMB density")
        lw = self.log_weights
        total = logsumexp(lw)
        comps = [
            GlmbComponent(c.label_set, float(w - total), c.tracks, c.track_keys, c.lineage)
            for c, w in zip(self.components, lw)
        ]
        return GlmbDensity(comps, self.time)

    @classmethod
    def empty(cls, time=0) -> "GlmbDensity":
        """The density that is certain there are no objects."""
        return cls([GlmbComponent((), 0.0, {}, {})], time)


# --- association arrays -------------------------------------------------------------


def _as_rows(rows, sensor_sizes):
    a = np.asarray(rows, dtype=np.int64)
    sizes = np.asarray(sensor_sizes, dtype=np.int64).reshape(-1)
    if a.size == 0:
        a = a.reshape(0, sizes.size)
    if a.ndim != 2 or a.shape[1] != sizes.size:
        raise InvalidArgument(f"rows of shape {a.shape} do not match {sizes.size} sensors")
    if np.any(a < -1) or np.any(a > sizes[None, :]):
        raise InvalidArgument("entry outside {-1, ..., M(s)}")
    return a, sizes


def is_positive_one_one(rows, sensor_sizes) -> bool:
    """True iff every row is all -1 or non-negative, and no sensor reuses a positive index."""
    a, _ = _as_rows(rows, sensor_sizes)
    neg = a < 0
    if np.any(neg.any(axis=1) != neg.all(axis=1)):
        return False
    for s in range(a.shape[1]):
        pos = a[:, s][a[:, s] > 0]
        if pos.size != np.unique(pos).size:
            return False
    return True


def indicator_factorization_check(rows, sensor_sizes, n: int) -> int:
    """Right-hand side of the leave-one-row-out factorisation of the positive 1-1 indicator.

    ``n`` is a 0-based row index. Each row must satisfy the all-or-nothing -1 rule; rows that
    do not are outside the candidate space and yield 0.
    """
    a, sizes = _as_rows(rows, sensor_sizes)
    if not 0 <= n < a.shape[0]:
        raise InvalidArgument(f"row index {n} out of range")
    neg = a < 0
    if np.any(neg.any(axis=1) != neg.all(axis=1)):
        return 0
    others = np.delete(a, n, axis=0)
    value = 1 if is_positive_one_one(others, sizes) else 0
    for s in range(a.shape[1]):
        j = a[n, s]
        for i in range(others.shape[0]):
            value *= 1 - int(1 <= j <= sizes[s]) * int(others[i, s] == j)
    return value


@dataclass(frozen=True)
class AssociationArray:
    rows: tuple
    sensor_sizes: tuple

    def __post_init__(self):
        a, sizes = _as_rows(self.rows, self.sensor_sizes)
        if not is_positive_one_one(a, sizes):
            raise InvalidArgument("association array is not positive 1-1")
        object.__setattr__(self, "rows", tuple(tuple(int(v) for v in r) for r in a))
        object.__setattr__(self, "sensor_sizes", tuple(int(m) for m in sizes))

    @property
    def P(self):
        return len(self.rows)

    @property
    def S(self):
        return len(self.sensor_sizes)

    def as_array(self):
        return np.array(self.rows, dtype=np.int64).reshape(self.P, self.S)


def convert(array: AssociationArray, labels: Sequence[Label]):
    """Recover the surviving label set and association map encoded by ``array``."""
    if len(labels) != array.P:
        raise InvalidArgument("need one label per array row")
    theta = {lab: row for lab, row in zip(labels, array.rows) if row[0] >= 0}
    return frozenset(theta), theta


def build_array(label_set, theta: Mapping[Label, tuple], labels: Sequence[Label], sensor_sizes) -> AssociationArray:
    """Inverse of :func:`convert`."""
    S = len(sensor_sizes)
    rows = []
    for lab in labels:
        rows.append(tuple(theta[lab]) if lab in label_set else (-1,) * S)
    return AssociationArray(tuple(rows), tuple(sensor_sizes))
