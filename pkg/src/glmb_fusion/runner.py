"""End-to-end filter runs and their CSV/JSON artifacts."""

from __future__ import annotations

import csv
import json
import time as _time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Gaussian, GlmbComponent, GlmbDensity, Label, birth_track_key
from .glmb import GlmbFilter, joint_update
from .metrics import OspaParams, ospa
from .scenario import ScenarioConfig, ScanRecord, state_columns, to_output_order


@dataclass
class RunResult:
    estimates: list = field(default_factory=list)
    cardinality: list = field(default_factory=list)  # (k, truth_n, est_n, map_n, map_prob)
    ospa: list = field(default_factory=list)  # (k, total, loc, card)
    update_seconds: list = field(default_factory=list)
    component_counts: list = field(default_factory=list)
    mode: str = ""


def with_mode(cfg: ScenarioConfig, mode: Optional[str]) -> ScenarioConfig:
    if not mode:
        return cfg
    return replace(cfg, filter=replace(cfg.filter, gibbs=replace(cfg.filter.gibbs, mode=mode)))


def run(cfg: ScenarioConfig, scans: list, ospa_params: OspaParams = OspaParams(1.0, 100.0)) -> RunResult:
    model = cfg.system_model()
    filt = GlmbFilter(model, cfg.filter, time=0)
    pos = cfg.position_index()
    res = RunResult(mode=cfg.filter.gibbs.mode)
    for rec in scans:
        t0 = _time.perf_counter()
        est = filt.step(rec.measurements)
        res.update_seconds.append(_time.perf_counter() - t0)
        res.component_counts.append(len(filt.density))
        res.estimates.append(est)
        cdn = est.cardinality_dist
        n_map = int(np.argmax(cdn))
        truth_n = len(rec.truth) if rec.truth is not None else -1
        res.cardinality.append((rec.time, truth_n, len(est.tracks), n_map, float(cdn[n_map])))
        if rec.truth is not None:
            X = np.array([rec.truth[lab][pos] for lab in sorted(rec.truth)]).reshape(-1, len(pos))
            Y = np.array([m[pos] for _, m in est.tracks]).reshape(-1, len(pos))
            res.ospa.append((rec.time,) + ospa(X, Y, ospa_params))
    return res


def _g(v):
    return f"{v:.10g}"


def write_artifacts(res: RunResult, cfg: ScenarioConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_axes = cfg.n_axes
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "label"] + state_columns(n_axes))
        for est in res.estimates:
            for lab, m in est.tracks:
                w.writerow([est.time, str(lab)] + [_g(v) for v in to_output_order(m, n_axes)])
    with open(out / "cardinality.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "truth_n", "est_n", "map_n", "map_prob"])
        for k, tn, en, mn, mp in res.cardinality:
            w.writerow([k, tn if tn >= 0 else "", en, mn, _g(mp)])
    with open(out / "ospa.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "total", "loc", "card"])
        for k, tot, loc, card in res.ospa:
            w.writerow([k, _g(tot), _g(loc), _g(card)])
    summary = {
        "sampler_mode": res.mode,
        "steps": len(res.estimates),
        "mean_update_seconds": float(np.mean(res.update_seconds)) if res.update_seconds else 0.0,
        "update_seconds": [round(t, 6) for t in res.update_seconds],
        "component_counts": res.component_counts,
        "h_max": cfg.filter.h_max,
        "temper_exponent": cfg.filter.gibbs.temper_exponent,
    }
    if res.ospa:
        summary["mean_ospa"] = float(np.mean([o[1] for o in res.ospa]))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out


def time_update(prior, scan_measurements, model, fcfg, repeats=3):
    """Mean wall time of :func:`joint_update` on a fixed prior and scan."""
    times = []
    for _ in range(repeats):
        t0 = _time.perf_counter()
        joint_update(prior, scan_measurements, model, fcfg)
        times.append(_time.perf_counter() - t0)
    return float(np.mean(times))


def _scaling_prior(model, n_objects, rng, time=0):
    """Every subset of ``n_objects`` well-separated tracks, weighted by subset size."""
    dim = model.motion.dim
    H = model.suite.sensors[0].H
    lo, hi = model.suite.sensors[0].region
    labels = [Label(0, i + 1) for i in range(n_objects)]
    tracks = {}
    for lab in labels:
        x = np.zeros(dim)
        x[H.argmax(axis=1)] = rng.uniform(0.6 * lo, 0.6 * hi)
        tracks[lab] = Gaussian(x, np.eye(dim) * 25.0)
    comps = []
    for mask in range(2 ** n_objects):
        sub = [lab for i, lab in enumerate(labels) if mask >> i & 1]
        comps.append(GlmbComponent(tuple(sub), float(len(sub)), {l: tracks[l] for l in sub}, {l: birth_track_key(l) for l in sub}))
    return GlmbDensity(comps, time), tracks


def clutter_scaling(cfg: ScenarioConfig, rates, mode, sensors=None, n_scans=5, n_objects=4, seed=0, repeats=3):
    """Mean :func:`joint_update` wall time per clutter rate.

    The chosen sensors all get clutter rate ``rate``; the prior is fixed and each scan holds
    detections of the prior's tracks plus uniform clutter. Each scan is timed ``repeats`` times
    and the fastest run kept, which filters out scheduler noise. Returns ``[(rate, mean
    measurements per sensor, mean seconds)]``.
    """
    base = with_mode(cfg, mode)
    specs = [base.sensors[i] for i in (sensors if sensors is not None else range(len(base.sensors)))]
    out = []
    for rate in rates:
        scfg = replace(base, sensors=[replace(s, clutter_rate=float(rate)) for s in specs])
        model = scfg.system_model()
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(rate)]))
        prior, tracks = _scaling_prior(model, n_objects, rng)
        times, counts = [], []
        for _ in range(n_scans):
            Z = []
            for sensor in model.suite.sensors:
                lo, hi = sensor.region
                det = [sensor.H @ g.mean + rng.multivariate_normal(np.zeros(sensor.meas_dim), sensor.R) for g in tracks.values() if rng.random() < sensor.detect_prob]
                det = [z for z in det if sensor.inside(z)[0]]
                clutter = lo + (hi - lo) * rng.random((rng.poisson(rate), sensor.meas_dim))
                Z.append(np.vstack([np.array(det).reshape(-1, sensor.meas_dim), clutter]))
            counts.append(np.mean([z.shape[0] for z in Z]))
            best = np.inf
            for _ in range(repeats):
                t0 = _time.perf_counter()
                joint_update(prior, Z, model, scfg.filter)
                best = min(best, _time.perf_counter() - t0)
            times.append(best)
        out.append((float(rate), float(np.mean(counts)), float(np.mean(times))))
    return out


def linear_r2(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0


def cardinality_hits(res: RunResult, after=10, tol=1):
    rows = [r for r in res.cardinality if r[0] > after]
    hits = sum(1 for _, tn, _, mn, _ in rows if abs(mn - tn) <= tol)
    return hits / max(1, len(rows))


def mean_localization(res: RunResult, start=20, stop=50):
    vals = [loc for k, _, loc, _ in res.ospa if start <= k <= stop]
    return float(np.mean(vals)) if vals else 0.0


__all__ = ["RunResult", "clutter_scaling", "linear_r2", "run", "write_artifacts", "time_update", "with_mode", "ScanRecord"]
