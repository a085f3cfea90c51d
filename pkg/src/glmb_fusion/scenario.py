"""Scenario configuration, ground-truth simulation and the scan/truth CSV formats.

State vectors are ordered per axis as ``(x, vx, y, vy, z, vz)``; CSV outputs list positions
first and velocities second.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Gaussian, Label
from .errors import ConfigError, GlmbError, InputError
from .gibbs import GibbsConfig
from .glmb import FilterConfig
from .models import BirthEntry, BirthModel, MotionModel, MultiSensorSuite, SensorModel, SystemModel

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

AXES = "xyz"


@dataclass
class SensorSpec:
    noise_std: list
    detect_prob: float
    clutter_rate: float
    region: list  # [lower corner, upper corner]


@dataclass
class BirthSpec:
    mean: list
    std: list
    existence: float


@dataclass
class ScenarioConfig:
    duration: int = 50
    period: float = 1.0
    n_axes: int = 3
    sigma_v: float = 5.0
    survival_prob: float = 0.99
    max_objects: int = 4
    births: list = field(default_factory=list)
    sensors: list = field(default_factory=list)
    filter: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0

    @property
    def state_dim(self):
        return 2 * self.n_axes

    def position_index(self):
        return [2 * a for a in range(self.n_axes)]

    def system_model(self) -> SystemModel:
        try:
            motion = MotionModel.constant_velocity(self.n_axes, self.period, self.sigma_v, self.survival_prob)
            entries = [
                BirthEntry(i + 1, b.existence, Gaussian(b.mean, np.diag(np.square(b.std))))
                for i, b in enumerate(self.births)
            ]
            H = np.zeros((self.n_axes, self.state_dim))
            H[np.arange(self.n_axes), self.position_index()] = 1.0
            sensors = [
                SensorModel(H, np.diag(np.square(s.noise_std)), s.detect_prob, s.clutter_rate, tuple(s.region))
                for s in self.sensors
            ]
            return SystemModel(motion, BirthModel(entries), MultiSensorSuite(sensors))
        except (GlmbError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _require(table, key, where):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in {where}")
    return table[key]


def _vec(value, n, name):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != n:
        raise ConfigError(f"{name} must have {n} entries, got {arr.size}")
    return arr.tolist()


def parse_config(data: dict) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a parsed TOML mapping."""
    try:
        scen = data.get("scenario", {})
        motion = data.get("motion", {})
        n_axes = int(scen.get("axes", 3))
        d = 2 * n_axes
        births = [
            BirthSpec(_vec(_require(b, "mean", "birth"), d, "birth mean"), _vec(_require(b, "std", "birth"), d, "birth std"), float(_require(b, "existence", "birth")))
            for b in data.get("birth", [])
        ]
        sensors = []
        for s in data.get("sensor", []):
            region = _require(s, "region", "sensor")
            if len(region) != 2:
                raise ConfigError("sensor region must be [lower, upper]")
            sensors.append(SensorSpec(
                _vec(_require(s, "noise_std", "sensor"), n_axes, "noise_std"),
                float(_require(s, "detect_prob", "sensor")),
                float(_require(s, "clutter_rate", "sensor")),
                [_vec(region[0], n_axes, "region"), _vec(region[1], n_axes, "region")],
            ))
        if not sensors:
            raise ConfigError("at least one [[sensor]] section is required")
        f = data.get("filter", {})
        seed = int(data.get("seed", scen.get("seed", 0)))
        gibbs = GibbsConfig(
            iterations=int(f.get("iterations", 1000)),
            rng_seed=seed,
            temper_exponent=float(f.get("temper_exponent", len(sensors))),
            mode=str(f.get("mode", "markov")),
            markov_choice=str(f.get("markov_choice", "independent")),
        )
        fcfg = FilterConfig(
            h_max=int(f.get("h_max", 1000)),
            prune_threshold=float(f.get("prune_threshold", 1e-9)),
            estimator=str(f.get("estimator", "mme")),
            mb_threshold=float(f.get("mb_threshold", 0.5)),
            gibbs=gibbs,
        )
        cfg = ScenarioConfig(
            duration=int(scen.get("duration", 50)),
            period=float(scen.get("period", 1.0)),
            n_axes=n_axes,
            sigma_v=float(motion.get("sigma_v", 5.0)),
            survival_prob=float(motion.get("survival_prob", 0.99)),
            max_objects=int(scen.get("max_objects", 4)),
            births=births,
            sensors=sensors,
            filter=fcfg,
            seed=seed,
        )
    except ConfigError:
        raise
    except (GlmbError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.duration < 1:
        raise ConfigError("duration must be >= 1")
    cfg.system_model()
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data)


def default_config_path() -> Path:
    return Path(str(resources.files("glmb_fusion") / "data" / "desk_scale.toml"))


def default_config() -> ScenarioConfig:
    return load_config(default_config_path())


# --- simulation -----------------------------------------------------------------------


@dataclass
class ScanRecord:
    time: int
    measurements: list  # one (M_s, m) array per sensor
    truth: Optional[dict] = None  # Label -> state vector


def _in_view(model: SystemModel, x):
    return all(bool(s.inside(s.H @ x)[0]) for s in model.suite.sensors)


def generate_scenario(cfg: ScenarioConfig, seed: Optional[int] = None):
    """Simulate truth and per-sensor scans for times ``1..duration``.

    Returns ``(truth, scans)`` where ``truth`` maps each label to a list of ``(k, state)``.
    Objects that leave the sensors' common field of view are removed from the truth.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    model = cfg.system_model()
    F, Q = model.motion.F, model.motion.Q
    ps = model.motion.survival_prob
    alive = {}
    truth = {}
    scans = []
    for k in range(1, cfg.duration + 1):
        nxt = {}
        for lab in sorted(alive):
            if rng.random() >= ps:
                continue
            x = F @ alive[lab] + rng.multivariate_normal(np.zeros(F.shape[0]), Q)
            if _in_view(model, x):
                nxt[lab] = x
        for e in sorted(model.birth.entries, key=lambda e: e.index):
            born = rng.random() < e.existence
            x = rng.multivariate_normal(e.density.mean, e.density.cov)
            if born and len(nxt) < cfg.max_objects and _in_view(model, x):
                nxt[Label(k, e.index)] = x
        alive = nxt
        for lab, x in alive.items():
            truth.setdefault(lab, []).append((k, x.copy()))
        meas = []
        for sensor in model.suite.sensors:
            zs = []
            for lab in sorted(alive):
                if rng.random() < sensor.detect_prob:
                    z = sensor.H @ alive[lab] + rng.multivariate_normal(np.zeros(sensor.meas_dim), sensor.R)
                    if sensor.inside(z)[0]:
                        zs.append(z)
            lo, hi = sensor.region
            n_clutter = rng.poisson(sensor.clutter_rate)
            clutter = lo + (hi - lo) * rng.random((n_clutter, sensor.meas_dim))
            Z = np.vstack([np.array(zs).reshape(-1, sensor.meas_dim), clutter])
            meas.append(Z[rng.permutation(Z.shape[0])])
        scans.append(ScanRecord(k, meas, {lab: x.copy() for lab, x in alive.items()}))
    return truth, scans


# --- CSV formats ----------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def state_columns(n_axes):
    return [a for a in AXES[:n_axes]] + [f"v{a}" for a in AXES[:n_axes]]


def to_output_order(x, n_axes):
    x = np.asarray(x)
    return np.concatenate([x[0::2][:n_axes], x[1::2][:n_axes]])


def from_output_order(v, n_axes):
    v = np.asarray(v, dtype=float)
    x = np.empty(2 * n_axes)
    x[0::2] = v[:n_axes]
    x[1::2] = v[n_axes:]
    return x


def write_scans(path, scans, meas_dim):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "sensor"] + [f"z{i + 1}" for i in range(meas_dim)])
        for rec in scans:
            for s, Z in enumerate(rec.measurements):
                for z in Z:
                    w.writerow([rec.time, s] + [_fmt(v) for v in z])


def read_scans(path, model: SystemModel, duration: int):
    """Read a scan CSV; every time ``1..duration`` gets a record, possibly with no measurements."""
    S = len(model.suite)
    dims = [s.meas_dim for s in model.suite.sensors]
    buckets = {k: [[] for _ in range(S)] for k in range(1, duration + 1)}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read scans {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["k", "sensor"]:
            raise InputError("scan file must start with a 'k,sensor,z1,...' header", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                k, s = int(row[0]), int(row[1])
                z = np.array([float(v) for v in row[2:]])
            except (ValueError, IndexError):
                raise InputError(f"malformed row {row!r}", lineno) from None
            if k not in buckets:
                raise InputError(f"time {k} outside 1..{duration}", lineno)
            if not 0 <= s < S:
                raise InputError(f"sensor {s} outside 0..{S - 1}", lineno)
            if z.size != dims[s] or not np.all(np.isfinite(z)):
                raise InputError(f"expected {dims[s]} finite measurement values", lineno)
            if not model.suite.sensors[s].inside(z)[0]:
                raise InputError("measurement outside the sensor region", lineno)
            buckets[k][s].append(z)
    return [
        ScanRecord(k, [np.array(zs).reshape(-1, d) for zs, d in zip(buckets[k], dims)])
        for k in range(1, duration + 1)
    ]


def write_truth(path, scans, n_axes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "label"] + state_columns(n_axes))
        for rec in scans:
            for lab in sorted(rec.truth or {}):
                w.writerow([rec.time, str(lab)] + [_fmt(v) for v in to_output_order(rec.truth[lab], n_axes)])


def read_truth(path, n_axes, duration):
    truth = {k: {} for k in range(1, duration + 1)}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read truth {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["k", "label"] + state_columns(n_axes):
            raise InputError("unexpected truth header", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                k = int(row[0])
                t, i = row[1].split(".")
                vals = [float(v) for v in row[2:]]
            except ValueError:
                raise InputError(f"malformed row {row!r}", lineno) from None
            if k not in truth or len(vals) != 2 * n_axes:
                raise InputError("bad time index or state width", lineno)
            truth[k][Label(int(t), int(i))] = from_output_order(vals, n_axes)
    return truth


def attach_truth(scans, truth):
    for rec in scans:
        rec.truth = truth.get(rec.time, {})
    return scans

