"""Linear-Gaussian dynamic and observation models and the Kalman arithmetic behind them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Gaussian, Label
from .errors import InvalidArgument, InvalidModel, NumericFailure

LOG_2PI = float(np.log(2.0 * np.pi))


def _open_unit(name, p):
    p = float(p)
    if not 0.0 < p < 1.0:
        raise InvalidModel(f"{name} must lie in (0, 1), got {p}")
    return p


@dataclass(frozen=True)
class MotionModel:
    F: np.ndarray
    Q: np.ndarray
    survival_prob: float

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if F.shape[0] != F.shape[1] or Q.shape != F.shape:
            raise InvalidArgument("F and Q must be square and of equal size")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-9 * max(1.0, np.abs(Q).max())):
            raise InvalidModel("process noise must be symmetric")
        if Q.size and np.linalg.eigvalsh(Q).min() < -1e-9 * max(1.0, np.abs(Q).max()):
            raise InvalidModel("process noise must be positive semi-definite")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "survival_prob", _open_unit("survival probability", self.survival_prob))

    @property
    def dim(self):
        return self.F.shape[0]

    @classmethod
    def constant_velocity(cls, n_axes=3, period=1.0, sigma=5.0, survival_prob=0.99):
        """Nearly-constant-velocity model with state ordered (x, vx, y, vy, ...)."""
        T = float(period)
        F1 = np.array([[1.0, T], [0.0, 1.0]])
        G1 = np.array([[T**2 / 2.0], [T]])
        Q1 = sigma**2 * (G1 @ G1.T)
        eye = np.eye(n_axes)
        return cls(np.kron(eye, F1), np.kron(eye, Q1), survival_prob)


@dataclass(frozen=True)
class BirthEntry:
    index: int
    existence: float
    density: Gaussian

    def __post_init__(self):
        object.__setattr__(self, "existence", _open_unit("birth probability", self.existence))


@dataclass(frozen=True)
class BirthModel:
    """Labeled multi-Bernoulli birth; entry ``i`` born at time ``k`` gets label ``(k, i)``."""

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        idx = [e.index for e in self.entries]
        if len(set(idx)) != len(idx):
            raise InvalidModel("birth indices must be unique")

    def labels(self, time):
        return [Label(int(time), e.index) for e in sorted(self.entries, key=lambda e: e.index)]

    def entry(self, index) -> BirthEntry:
        for e in self.entries:
            if e.index == index:
                return e
        raise KeyError(index)


@dataclass(frozen=True)
class SensorModel:
    H: np.ndarray
    R: np.ndarray
    detect_prob: float
    clutter_rate: float
    region: tuple  # (lower corner, upper corner)

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (H.shape[0], H.shape[0]):
            raise InvalidArgument("R must be m x m for an m-row observation matrix")
        if not np.allclose(R, R.T, rtol=0, atol=1e-9 * np.abs(R).max()):
            raise InvalidModel("observation noise must be symmetric")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise InvalidModel("observation noise must be positive definite") from None
        lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in self.region)
        if lo.size != H.shape[0] or hi.size != H.shape[0] or np.any(hi <= lo):
            raise InvalidModel("region must be a non-degenerate box in measurement space")
        if self.clutter_rate < 0:
            raise InvalidModel("clutter rate must be non-negative")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "region", (lo, hi))
        object.__setattr__(self, "detect_prob", _open_unit("detection probability", self.detect_prob))
        object.__setattr__(self, "clutter_rate", float(self.clutter_rate))

    @property
    def meas_dim(self):
        return self.H.shape[0]

    @property
    def volume(self):
        lo, hi = self.region
        return float(np.prod(hi - lo))

    def inside(self, z):
        z = np.atleast_2d(z)
        lo, hi = self.region
        return np.all((z >= lo) & (z <= hi), axis=1)

    def clutter_intensity(self, z):
        """Homogeneous Poisson clutter intensity; zero outside the region."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return np.where(self.inside(z), self.clutter_rate / self.volume, 0.0)


@dataclass(frozen=True)
class MultiSensorSuite:
    sensors: tuple

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if len(self.sensors) < 1:
            raise InvalidModel("need at least one sensor")

    def __len__(self):
        return len(self.sensors)

    def __getitem__(self, s):
        return self.sensors[s]


@dataclass(frozen=True)
class SystemModel:
    """Everything the joint prediction/update needs besides the prior and the scan."""

    motion: MotionModel
    birth: BirthModel
    suite: MultiSensorSuite


@dataclass
class SensorScan:
    """Measurements of one sensor at one time, with their log clutter intensities."""

    Z: np.ndarray
    log_kappa: np.ndarray = field(default=None)

    @property
    def M(self):
        return self.Z.shape[0]


def prepare_scan(suite: MultiSensorSuite, Z) -> list:
    """Validate a per-sensor measurement list and attach clutter intensities."""
    if len(Z) != len(suite):
        raise InvalidArgument(f"expected measurements for {len(suite)} sensors, got {len(Z)}")
    out = []
    for sensor, Zs in zip(suite.sensors, Z):
        if isinstance(Zs, SensorScan):
            out.append(Zs)
            continue
        arr = np.asarray(Zs, dtype=float)
        arr = arr.reshape(-1, sensor.meas_dim) if arr.size else np.zeros((0, sensor.meas_dim))
        kappa = sensor.clutter_intensity(arr) if arr.shape[0] else np.zeros(0)
        if np.any(kappa <= 0.0):
            raise InvalidArgument("measurement with zero clutter intensity (outside region or no clutter)")
        out.append(SensorScan(arr, np.log(kappa)))
    return out


# --- Kalman arithmetic ----------------------------------------------------------------


def kalman_predict(g: Gaussian, mm: MotionModel) -> Gaussian:
    if g.dim != mm.dim:
        raise InvalidArgument(f"state dimension {g.dim} does not match motion model {mm.dim}")
    cov = mm.F @ g.cov @ mm.F.T + mm.Q
    return Gaussian.unchecked(mm.F @ g.mean, 0.5 * (cov + cov.T))


def _innovation(g, H, R):
    S = H @ g.cov @ H.T + R
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericFailure("innovation covariance is not positive definite") from None
    return S, L


def _joseph(P, K, H, R):
    A = np.eye(P.shape[0]) - K @ H
    C = A @ P @ A.T + K @ R @ K.T
    return 0.5 * (C + C.T)


def kalman_update(g: Gaussian, sm: SensorModel, z):
    """Kalman posterior and marginal likelihood N(z; H m, H P H' + R)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != sm.meas_dim:
        raise InvalidArgument(f"measurement dimension {z.size} != {sm.meas_dim}")
    S, L = _innovation(g, sm.H, sm.R)
    PHt = g.cov @ sm.H.T
    K = np.linalg.solve(S, PHt.T).T
    nu = z - sm.H @ g.mean
    w = np.linalg.solve(L, nu)
    logq = -0.5 * (z.size * LOG_2PI + w @ w) - np.sum(np.log(np.diag(L)))
    post = Gaussian.unchecked(g.mean + K @ nu, _joseph(g.cov, K, sm.H, sm.R))
    return post, float(np.exp(logq))


def psi_single(sm: SensorModel, g: Gaussian, j: int, Zs):
    """One-sensor factor: (updated Gaussian, q-bar) for measurement index ``j`` (0 = missed).

    ``j`` is 1-based into ``Zs``.
    """
    if j == 0:
        return g, 1.0 - sm.detect_prob
    Zs = np.atleast_2d(np.asarray(Zs, dtype=float))
    if not 1 <= j <= Zs.shape[0]:
        raise InvalidArgument(f"measurement index {j} out of range")
    z = Zs[j - 1]
    kappa = float(sm.clutter_intensity(z)[0])
    if kappa <= 0.0:
        raise InvalidArgument("clutter intensity is zero at the measurement")
    post, q = kalman_update(g, sm, z)
    return post, q * sm.detect_prob / kappa


def psi_bar_chain(g: Gaussian, suite: MultiSensorSuite, js: Sequence[int], Z):
    """Apply :func:`psi_single` for sensors 1..S in order; returns (final Gaussian, product of q-bar)."""
    if len(js) != len(suite):
        raise InvalidArgument("need one measurement index per sensor")
    total = 1.0
    for sensor, j, Zs in zip(suite.sensors, js, Z):
        if isinstance(Zs, SensorScan):
            Zs = Zs.Z
        g, q = psi_single(sensor, g, int(j), Zs)
        total *= q
    return g, total


def log_psi_bar_chain(g: Gaussian, suite: MultiSensorSuite, js, scans):
    """Log-space chain over prepared scans; avoids underflow of long products."""
    total = 0.0
    for sensor, j, scan in zip(suite.sensors, js, scans):
        j = int(j)
        if j == 0:
            total += np.log1p(-sensor.detect_prob)
            continue
        S, L = _innovation(g, sensor.H, sensor.R)
        K = np.linalg.solve(S, (g.cov @ sensor.H.T).T).T
        nu = scan.Z[j - 1] - sensor.H @ g.mean
        w = np.linalg.solve(L, nu)
        logq = -0.5 * (nu.size * LOG_2PI + w @ w) - np.sum(np.log(np.diag(L)))
        total += logq + np.log(sensor.detect_prob) - scan.log_kappa[j - 1]
        g = Gaussian.unchecked(g.mean + K @ nu, _joseph(g.cov, K, sensor.H, sensor.R))
    return g, float(total)


class SensorGain:
    """Per-(covariance, sensor) Kalman quantities shared by every measurement of that sensor."""

    __slots__ = ("K", "post_cov", "Linv", "log_norm", "H")

    def __init__(self, cov, sensor: SensorModel):
        g = Gaussian.unchecked(np.zeros(cov.shape[0]), cov)
        S, L = _innovation(g, sensor.H, sensor.R)
        self.H = sensor.H
        self.K = np.linalg.solve(S, (cov @ sensor.H.T).T).T
        self.post_cov = _joseph(cov, self.K, sensor.H, sensor.R)
        self.Linv = np.linalg.inv(L)
        self.log_norm = -0.5 * sensor.meas_dim * LOG_2PI - np.sum(np.log(np.diag(L)))


def log_detection_factors(means, gain: SensorGain, sensor: SensorModel, scan: SensorScan):
    """Vectorised log q-bar over all measurements of one sensor.

    ``means`` is (N, d); returns (log_qbar of shape (N, 1+M) with column 0 the missed
    detection, posterior means of shape (N, M, d)).
    """
    means = np.atleast_2d(means)
    N = means.shape[0]
    M = scan.M
    out = np.empty((N, 1 + M))
    out[:, 0] = np.log1p(-sensor.detect_prob)
    if M == 0:
        return out, np.zeros((N, 0, means.shape[1]))
    nu = scan.Z[None, :, :] - (means @ gain.H.T)[:, None, :]
    w = nu @ gain.Linv.T
    maha = np.einsum("nmk,nmk->nm", w, w)
    out[:, 1:] = gain.log_norm - 0.5 * maha + np.log(sensor.detect_prob) - scan.log_kappa[None, :]
    post_means = means[:, None, :] + nu @ gain.K.T
    return out, post_means
