"""Brute-force ground truth for tiny instances.

Everything here enumerates the full space of positive 1-1 association arrays and uses plain
probability arithmetic. Track densities are computed with a single stacked (batch) measurement
update rather than the sequential per-sensor chain used by the filter, so the two routes are
independent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag
from scipy.stats import multivariate_normal

from .core import AssociationArray, Gaussian, GlmbComponent, GlmbDensity, Label, birth_track_key, chain_key
from .errors import InvalidState, TooLarge
from .models import SystemModel

ENUMERATION_GUARD = 10**7


def row_candidates(sensor_sizes):
    S = len(sensor_sizes)
    return [(-1,) * S] + list(itertools.product(*(range(m + 1) for m in sensor_sizes)))


def enumerate_gamma(P, sensor_sizes):
    """All positive 1-1 arrays with ``P`` rows, in lexicographic row-candidate order."""
    sizes = tuple(int(m) for m in sensor_sizes)
    if math.prod((m + 2) ** P for m in sizes) > ENUMERATION_GUARD:
        raise TooLarge(f"enumeration of P={P}, M={sizes} exceeds the guard")
    cands = row_candidates(sizes)
    out = []

    def rec(prefix, used):
        if len(prefix) == P:
            out.append(AssociationArray(tuple(prefix), sizes))
            return
        for row in cands:
            if any(v > 0 and v in used[s] for s, v in enumerate(row)):
                continue
            new_used = [u | {v} if v > 0 else u for u, v in zip(used, row)]
            rec(prefix + [row], new_used)

    rec([], [frozenset()] * len(sizes))
    return out


@dataclass
class EnumeratedTarget:
    entries: list  # [(AssociationArray, probability)]
    normalizer: float

    def prob(self, array):
        for a, p in self.entries:
            if a == array:
                return p
        return 0.0

    def as_dict(self):
        return {a.rows: p for a, p in self.entries}


def exact_target(table, eta=None) -> EnumeratedTarget:
    """Exact pi(gamma) proportional to the product of row weights over Gamma.

    ``eta`` may be given as a list of per-row weight arrays indexed by category; otherwise the
    table's exact weights are used.
    """
    if eta is None:
        eta = [np.exp(table.dense_row(n)) for n in range(table.P)]
    arrays = enumerate_gamma(table.P, table.sensor_sizes)
    raw = []
    for a in arrays:
        w = np.longdouble(1.0)
        for n, r in enumerate(a.rows):
            w *= np.longdouble(eta[n][table.category(r)])
        raw.append(w)
    Z = math.fsum(float(w) for w in raw)
    return EnumeratedTarget([(a, float(w / np.longdouble(Z))) for a, w in zip(arrays, raw)], Z)


def exact_conditional(target: EnumeratedTarget, table, n, gamma):
    """Conditional of row ``n`` by summing the exact joint over matching slices."""
    others = [r for i, r in enumerate(gamma.rows) if i != n]
    probs = np.zeros(table.n_categories)
    for a, p in target.entries:
        if [r for i, r in enumerate(a.rows) if i != n] == others:
            probs[table.category(a.rows[n])] += p
    return probs / probs.sum()


# --- exact GLMB update --------------------------------------------------------------------


def _clutter(sensor, z):
    lo, hi = sensor.region
    inside = np.all((z >= lo) & (z <= hi))
    return sensor.clutter_rate / np.prod(hi - lo) if inside else 0.0


def batch_psi(mean, cov, suite, Z, js):
    """Joint likelihood factor and posterior for one joint index via a stacked update."""
    factor = 1.0
    Hs, Rs, zs = [], [], []
    for sensor, Zs, j in zip(suite.sensors, Z, js):
        if j == 0:
            factor *= 1.0 - sensor.detect_prob
            continue
        z = np.asarray(Zs[j - 1], dtype=float)
        factor *= sensor.detect_prob / _clutter(sensor, z)
        Hs.append(sensor.H)
        Rs.append(sensor.R)
        zs.append(z)
    if not Hs:
        return factor, mean, cov
    H = np.vstack(Hs)
    R = block_diag(*Rs)
    z = np.concatenate(zs)
    S = H @ cov @ H.T + R
    factor *= multivariate_normal(mean=H @ mean, cov=S).pdf(z)
    K = cov @ H.T @ np.linalg.inv(S)
    return factor, mean + K @ (z - H @ mean), cov - K @ S @ K.T


def exact_glmb_update(prior: GlmbDensity, Z, model: SystemModel) -> GlmbDensity:
    """Exact multi-sensor GLMB posterior: every prior component times every array in Gamma."""
    if not prior.components:
        raise InvalidState("empty prior")
    suite = model.suite
    Z = [np.asarray(z, dtype=float).reshape(-1, s.meas_dim) if np.size(z) else np.zeros((0, s.meas_dim)) for z, s in zip(Z, suite.sensors)]
    sizes = tuple(z.shape[0] for z in Z)
    time = prior.time + 1
    F, Q, ps = model.motion.F, model.motion.Q, model.motion.survival_prob
    births = sorted(model.birth.entries, key=lambda e: e.index)
    wsum = math.fsum(math.exp(c.log_weight) for c in prior.components)

    merged = {}
    order = []
    for comp in prior.components:
        w_prior = math.exp(comp.log_weight) / wsum
        rows = []  # (label, existence, mean, cov, parent key)
        for lab in comp.label_set:
            g = comp.tracks[lab]
            rows.append((lab, ps, F @ g.mean, F @ g.cov @ F.T + Q, comp.track_keys[lab]))
        for e in births:
            lab = Label(time, e.index)
            rows.append((lab, e.existence, np.asarray(e.density.mean), np.asarray(e.density.cov), birth_track_key(lab)))
        memo = {}
        for gamma in enumerate_gamma(len(rows), sizes):
            w = w_prior
            tracks, keys = {}, {}
            for n, (lab, r, m, P, pkey) in enumerate(rows):
                js = gamma.rows[n]
                if js[0] < 0:
                    w *= 1.0 - r
                    continue
                if (n, js) not in memo:
                    memo[(n, js)] = batch_psi(m, P, suite, Z, js)
                f, mpost, Ppost = memo[(n, js)]
                w *= r * f
                tracks[lab] = Gaussian.unchecked(mpost, Ppost)
                keys[lab] = chain_key(pkey, js)
            ident = (tuple(sorted(tracks)), tuple(sorted(keys.items())))
            if ident not in merged:
                merged[ident] = ([], tracks, keys)
                order.append(ident)
            merged[ident][0].append(w)
    sums = {i: math.fsum(merged[i][0]) for i in order}
    total = math.fsum(sums.values())
    comps = []
    for ident in order:
        _, tracks, keys = merged[ident]
        w = sums[ident]
        if w <= 0.0:
            continue
        comps.append(GlmbComponent(tuple(tracks), math.log(w / total), tracks, keys))
    return GlmbDensity(comps, time)
