"""Multi-sensor GLMB joint prediction and update with Gibbs-sampled truncation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import GlmbComponent, GlmbDensity, Label, chain_key, logsumexp
from .errors import InvalidArgument, InvalidState, NoSuchTrack
from .gibbs import GibbsConfig, build_eta, run_gibbs
from .models import SystemModel, prepare_scan
from .oracle import enumerate_gamma

ESTIMATORS = ("mme", "mb")


@dataclass(frozen=True)
class FilterConfig:
    """Filter settings.

    ``exhaustive`` replaces multinomial allocation and Gibbs sampling with full enumeration
    of the association space; it exists for verification on tiny instances.
    """

    h_max: int = 1000
    prune_threshold: float = 1e-9
    estimator: str = "mme"
    mb_threshold: float = 0.5
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    exhaustive: bool = False
    workers: Optional[int] = None

    def __post_init__(self):
        if int(self.h_max) < 1:
            raise InvalidArgument("h_max must be >= 1")
        if not 0.0 <= self.prune_threshold < 1.0:
            raise InvalidArgument("prune threshold must lie in [0, 1)")
        if self.estimator not in ESTIMATORS:
            raise InvalidArgument(f"unknown estimator {self.estimator!r}")


@dataclass
class StateEstimate:
    time: int
    tracks: list  # [(Label, mean)]
    cardinality_dist: np.ndarray

    @property
    def labels(self):
        return [lab for lab, _ in self.tracks]

    @property
    def map_cardinality(self):
        return int(np.argmax(self.cardinality_dist))


@dataclass
class GaussianMixture:
    weights: np.ndarray
    components: list

    def mean(self):
        return np.sum([w * g.mean for w, g in zip(self.weights, self.components)], axis=0)


def _workers(cfg):
    if cfg.workers is not None:
        return max(1, int(cfg.workers))
    env = os.environ.get("GLMB_THREADS")
    return max(1, int(env)) if env else 1


def _expand(comp, model, scans, time, cfg, row_cache, trials, rng):
    table = build_eta(comp, model, scans, time, cfg.gibbs.mode, cfg.gibbs.markov_choice, row_cache)
    if cfg.exhaustive:
        arrays = enumerate_gamma(table.P, table.sensor_sizes)
    else:
        init = table.initial_array()
        batch = run_gibbs(table, replace(cfg.gibbs, iterations=int(trials)), init, rng)
        arrays = list(dict.fromkeys([init] + batch.arrays))
    out = []
    for gamma in arrays:
        lw = comp.log_weight + table.log_weight(gamma)
        if not np.isfinite(lw):
            continue
        tracks, keys = {}, {}
        for row, js in zip(table.rows, gamma.rows):
            if js[0] < 0:
                continue
            tracks[row.label] = row.posterior(js)
            keys[row.label] = chain_key(row.parent_key, js)
        out.append((lw, tracks, keys))
    return out


def joint_update(prior: GlmbDensity, Z, model: SystemModel, cfg: FilterConfig) -> GlmbDensity:
    """One joint prediction/update step from ``prior.time`` to ``prior.time + 1``.

    ``Z`` holds one measurement array (or :class:`~glmb_fusion.models.SensorScan`) per sensor.
    """
    if not prior.components:
        raise InvalidState("prior GLMB density has no components")
    scans = prepare_scan(model.suite, Z)
    prior = prior.normalized()
    time = prior.time + 1
    seed = int(cfg.gibbs.rng_seed)
    H = len(prior.components)
    if cfg.exhaustive:
        trials = np.ones(H, dtype=np.int64)
    else:
        alloc_rng = np.random.default_rng(np.random.SeedSequence([seed, time]))
        w = prior.weights
        trials = alloc_rng.multinomial(int(cfg.h_max), w / w.sum())
    tasks = [h for h in range(H) if trials[h] > 0]
    row_cache = {}

    def work(h):
        rng = np.random.default_rng(np.random.SeedSequence([seed, time, h]))
        return _expand(prior.components[h], model, scans, time, cfg, row_cache, trials[h], rng)

    n_workers = _workers(cfg)
    if n_workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(h) for h in tasks]

    merged = {}
    for expansions in results:
        for lw, tracks, keys in expansions:
            ident = (tuple(sorted(tracks)), tuple(sorted(keys.items())))
            slot = merged.get(ident)
            if slot is None:
                merged[ident] = [[lw], tracks, keys]
            else:
                slot[0].append(lw)
    comps = [GlmbComponent(tuple(tracks), logsumexp(lws), tracks, keys) for lws, tracks, keys in merged.values()]
    return truncate(GlmbDensity(comps, time), cfg.prune_threshold, cfg.h_max)


def truncate(density: GlmbDensity, prune_threshold=0.0, cap=None) -> GlmbDensity:
    """Drop components below ``prune_threshold`` (after normalising), keep the ``cap`` largest, renormalise."""
    d = density.normalized()
    lw = d.log_weights
    order = np.argsort(-lw, kind="stable")
    keep = [i for i in order if lw[i] >= np.log(prune_threshold)] if prune_threshold > 0 else list(order)
    if not keep:
        keep = [order[0]]
    if cap is not None:
        keep = keep[: int(cap)]
    return GlmbDensity([d.components[i] for i in keep], d.time).normalized()


def cardinality_distribution(d: GlmbDensity) -> np.ndarray:
    sizes = np.array([len(c.label_set) for c in d.components], dtype=np.int64)
    w = d.weights
    out = np.zeros(int(sizes.max()) + 1 if sizes.size else 1)
    np.add.at(out, sizes, w)
    return out / out.sum()


def existence_and_track_density(d: GlmbDensity, label: Label):
    """Existence probability of ``label`` and its Gaussian-mixture track density."""
    w = d.weights / d.weights.sum()
    ws, gs = [], []
    for wi, c in zip(w, d.components):
        if label in c.tracks:
            ws.append(wi)
            gs.append(c.tracks[label])
    r = float(np.sum(ws))
    if r <= 0.0:
        raise NoSuchTrack(label)
    return r, GaussianMixture(np.array(ws) / r, gs)


def all_labels(d: GlmbDensity):
    return sorted({lab for c in d.components for lab in c.label_set})


def estimate(d: GlmbDensity, cfg: FilterConfig) -> StateEstimate:
    cdn = cardinality_distribution(d)
    if cfg.estimator == "mb":
        tracks = []
        for lab in all_labels(d):
            r, mix = existence_and_track_density(d, lab)
            if r > cfg.mb_threshold:
                tracks.append((lab, mix.mean()))
        return StateEstimate(d.time, tracks, cdn)
    n_star = int(np.argmax(cdn))
    cands = [c for c in d.components if len(c.label_set) == n_star]
    best = min(cands, key=lambda c: (-c.log_weight, c.label_set, c.lineage))
    return StateEstimate(d.time, [(lab, np.array(best.tracks[lab].mean)) for lab in best.label_set], cdn)


class GlmbFilter:
    """Recursive driver around :func:`joint_update`."""

    def __init__(self, model: SystemModel, cfg: FilterConfig, time=0):
        self.model = model
        self.cfg = cfg
        self.density = GlmbDensity.empty(time)

    def step(self, Z) -> StateEstimate:
        self.density = joint_update(self.density, Z, self.model, self.cfg)
        return estimate(self.density, self.cfg)
