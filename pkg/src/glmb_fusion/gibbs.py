"""Association weights (eta tables) and Gibbs samplers over positive 1-1 association arrays.

Three sampler flavours share one row model:

* ``dense``: each row's conditional is a categorical over all
  ``1 + prod(1 + M(s))`` joint assignments.
* ``factorized``: the same conditional sampled sensor by sensor through
  chain-rule factors and backward normalisers; the live categorical never
  exceeds ``2 + max M(s)`` entries.
* ``markov``: an alternative target in which per-sensor factors are taken
  from the predicted density independently (or pairwise), making the row
  normalisation linear in the measurement counts. Samples must be reweighted
  with the exact weights afterwards.

Categories of a row are indexed 0 for "does not exist" (all -1) and ``1 + c`` for the
``c``-th joint index ``(j1, ..., jS)`` in C order over ``{0..M(1)} x ... x {0..M(S)}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import AssociationArray, GlmbComponent, Label, birth_track_key
from .errors import InternalError, InvalidArgument, InvalidModel
from .models import (
    Gaussian,
    SensorGain,
    SystemModel,
    kalman_predict,
    log_detection_factors,
    log_psi_bar_chain,
)

MODES = ("dense", "factorized", "markov")
MARKOV_CHOICES = ("independent", "pairwise")


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 1000
    rng_seed: int = 0
    temper_exponent: float = 1.0
    mode: str = "markov"
    markov_choice: str = "independent"

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise InvalidArgument("Gibbs iterations must be >= 1")
        if not self.temper_exponent > 0:
            raise InvalidArgument("temper exponent must be positive")
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown sampler mode {self.mode!r}")
        if self.markov_choice not in MARKOV_CHOICES:
            raise InvalidArgument(f"unknown markov factor choice {self.markov_choice!r}")


@dataclass
class SampleBatch:
    samples: list  # [(AssociationArray, count)] in order of first appearance
    total: int
    max_categories: int = 0

    @property
    def arrays(self):
        return [a for a, _ in self.samples]


def _lse(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _draw(logw, u):
    """Inverse-CDF draw from unnormalised log weights with one uniform."""
    m = np.max(logw)
    if not np.isfinite(m):
        raise InternalError("categorical with zero total mass")
    cdf = np.cumsum(np.exp(logw - m))
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), cdf.size - 1)


class EtaRow:
    """One row of the eta table: a surviving or birth label with its predicted density.

    All per-row quantities are computed lazily and memoised, so a row shared by several
    GLMB components is evaluated once.
    """

    def __init__(self, label: Label, existence: float, predicted: Gaussian, parent_key: int, is_birth: bool, model: SystemModel, scans):
        if not 0.0 < existence < 1.0:
            raise InvalidModel(f"existence/survival factor {existence} outside (0, 1)")
        self.label = label
        self.existence = float(existence)
        self.predicted = predicted
        self.parent_key = parent_key
        self.is_birth = is_birth
        self.suite = model.suite
        self.scans = scans
        self.sizes = tuple(sc.M for sc in scans)
        self._tree = None
        self._dense = None
        self._markov = {}
        self._exact = {}
        self._posterior = {}

    @property
    def log_dead(self):
        return float(np.log1p(-self.existence))

    @property
    def log_alive(self):
        return float(np.log(self.existence))

    # chained Kalman factors: level t has shape (1+M1, ..., 1+Mt)
    def tree(self):
        if self._tree is None:
            self._tree = _chain_tree(self.predicted, self.suite, self.scans)
        return self._tree

    def dense_log_eta(self):
        if self._dense is None:
            total = np.zeros(())
            for lvl in self.tree():
                total = total[..., None] + lvl
            flat = np.concatenate([[self.log_dead], self.log_alive + total.reshape(-1)])
            flat.flags.writeable = False
            self._dense = flat
        return self._dense

    def markov_factors(self, choice="independent"):
        if choice not in self._markov:
            self._markov[choice] = _markov_factors(self, choice)
        return self._markov[choice]

    def log_eta(self, js) -> float:
        """Exact log eta for a joint index (all -1 for non-existence)."""
        js = tuple(int(j) for j in js)
        if js[0] < 0:
            return self.log_dead
        if js not in self._exact:
            if self._dense is not None or self._tree is not None:
                idx = 1 + int(np.ravel_multi_index(js, tuple(1 + m for m in self.sizes)))
                self._exact[js] = float(self.dense_log_eta()[idx])
            else:
                self._exact[js] = self.log_alive + self._chain(js)[1]
        return self._exact[js]

    def posterior(self, js) -> Gaussian:
        js = tuple(int(j) for j in js)
        return self._chain(js)[0]

    def _chain(self, js):
        if js not in self._posterior:
            self._posterior[js] = log_psi_bar_chain(self.predicted, self.suite, js, self.scans)
        return self._posterior[js]


def _chain_tree(g: Gaussian, suite, scans):
    """Log q-bar chain factors for every joint index prefix.

    Returns a list ``levels`` where ``levels[t]`` has shape ``(1+M1, ..., 1+M(t+1))`` and holds
    log q-bar for sensor t+1 given the Gaussian obtained by applying sensors 1..t along the
    prefix. The posterior covariance depends only on which sensors detected, so measurements
    sharing a detection pattern are processed in one vectorised batch.
    """
    d = g.dim
    means = g.mean.reshape(d)
    covs = {(): g.cov}
    levels = []
    last = len(suite) - 1
    for t, (sensor, scan) in enumerate(zip(suite.sensors, scans)):
        M = scan.M
        prefix_shape = means.shape[:-1]
        logf = np.empty(prefix_shape + (1 + M,))
        new_means = None if t == last else np.empty(prefix_shape + (1 + M, d))
        new_covs = {}
        for pattern, cov in covs.items():
            sl = tuple(slice(1, None) if b else slice(0, 1) for b in pattern)
            sub = means[sl]
            flat = sub.reshape(-1, d)
            gain = SensorGain(cov, sensor)
            lf, pm = log_detection_factors(flat, gain, sensor, scan)
            logf[sl] = lf.reshape(sub.shape[:-1] + (1 + M,))
            if new_means is not None:
                new_means[sl + (slice(0, 1),)] = sub[..., None, :]
                if M:
                    new_means[sl + (slice(1, None),)] = pm.reshape(sub.shape[:-1] + (M, d))
            new_covs[pattern + (False,)] = cov
            if M:
                new_covs[pattern + (True,)] = gain.post_cov
        levels.append(logf)
        means = new_means
        covs = new_covs
    return levels


def _markov_factors(row: EtaRow, choice):
    """Log factors of the alternative (Markov) target for one row.

    First factor is over ``{-1, 0..M1}``; each later factor is a vector over ``{0..Ms}``
    (independent choice) or a ``(1+M(s-1), 1+Ms)`` transition matrix (pairwise choice).
    """
    g = row.predicted
    suite, scans = row.suite, row.scans
    gains = [SensorGain(g.cov, s) for s in suite.sensors]
    singles = []
    post_means = []
    for sensor, scan, gain in zip(suite.sensors, scans, gains):
        lf, pm = log_detection_factors(g.mean[None, :], gain, sensor, scan)
        singles.append(lf[0])
        post_means.append(pm[0])
    first = np.concatenate([[row.log_dead], row.log_alive + singles[0]])
    rest = []
    for s in range(1, len(suite)):
        if choice == "independent":
            rest.append(singles[s])
            continue
        prev_sensor = suite.sensors[s - 1]
        sensor, scan = suite.sensors[s], scans[s]
        mat = np.empty((1 + scans[s - 1].M, 1 + scan.M))
        mat[0] = singles[s]
        if scans[s - 1].M:
            gain = SensorGain(SensorGain(g.cov, prev_sensor).post_cov, sensor)
            lf, _ = log_detection_factors(post_means[s - 1], gain, sensor, scan)
            mat[1:] = lf
        rest.append(mat)
    return first, rest


class EtaTable:
    """Per-component association weights.

    Rows ``0..R-1`` are the component's surviving labels (sorted), rows ``R..P-1`` the birth
    labels (sorted). ``log_eta`` always returns the exact, untempered weight regardless of mode.
    """

    def __init__(self, mode, rows, sensor_sizes, markov_choice="independent"):
        if mode not in MODES:
            raise InvalidArgument(f"unknown mode {mode!r}")
        self.mode = mode
        self.rows = list(rows)
        self.sensor_sizes = tuple(int(m) for m in sensor_sizes)
        self.markov_choice = markov_choice
        self._codes = None

    @property
    def P(self):
        return len(self.rows)

    @property
    def S(self):
        return len(self.sensor_sizes)

    @property
    def labels(self):
        return [r.label for r in self.rows]

    @property
    def n_categories(self):
        return 1 + int(np.prod([1 + m for m in self.sensor_sizes]))

    @property
    def codes(self):
        """(C, S) array of joint indices per category; row 0 is all -1."""
        if self._codes is None:
            grid = np.indices([1 + m for m in self.sensor_sizes]).reshape(self.S, -1).T
            self._codes = np.vstack([-np.ones((1, self.S), dtype=np.int64), grid.astype(np.int64)])
            self._codes.flags.writeable = False
        return self._codes

    def category(self, js):
        if js[0] < 0:
            return 0
        return 1 + int(np.ravel_multi_index(tuple(js), tuple(1 + m for m in self.sensor_sizes)))

    def dense_row(self, n):
        return self.rows[n].dense_log_eta()

    def log_eta(self, n, js):
        return self.rows[n].log_eta(js)

    def log_weight(self, gamma) -> float:
        """Sum of exact log eta over the rows of an association array."""
        rows = gamma.rows if isinstance(gamma, AssociationArray) else gamma
        return float(sum(self.rows[n].log_eta(r) for n, r in enumerate(rows)))

    def log_alternative(self, n, js) -> float:
        """Log weight of a row under the Markov alternative target."""
        first, rest = self.rows[n].markov_factors(self.markov_choice)
        if js[0] < 0:
            return float(first[0])
        total = first[1 + js[0]]
        for s, f in enumerate(rest, start=1):
            total += f[js[s]] if f.ndim == 1 else f[js[s - 1], js[s]]
        return float(total)

    def initial_array(self) -> AssociationArray:
        """Surviving labels start as missed by every sensor, birth labels as non-existent."""
        rows = [(0,) * self.S if not r.is_birth else (-1,) * self.S for r in self.rows]
        return AssociationArray(tuple(rows), self.sensor_sizes)


def build_eta(component: GlmbComponent, model: SystemModel, scans, time: int, mode="dense", markov_choice="independent", row_cache: Optional[dict] = None) -> EtaTable:
    """Eta table for one prior component and the scan at ``time`` (the posterior time)."""
    if mode not in MODES:
        raise InvalidArgument(f"unknown mode {mode!r}")
    ps = model.motion.survival_prob
    for sensor in model.suite.sensors:
        if not 0.0 < sensor.detect_prob < 1.0:
            raise InvalidModel("detection probability must lie in (0, 1)")
    rows = []
    for lab in component.label_set:
        key = ("s", lab, component.track_keys[lab])
        row = None if row_cache is None else row_cache.get(key)
        if row is None:
            pred = kalman_predict(component.tracks[lab], model.motion)
            row = EtaRow(lab, ps, pred, component.track_keys[lab], False, model, scans)
            if row_cache is not None:
                row_cache[key] = row
        rows.append(row)
    for lab in model.birth.labels(time):
        key = ("b", lab)
        row = None if row_cache is None else row_cache.get(key)
        if row is None:
            entry = model.birth.entry(lab.birth_index)
            row = EtaRow(lab, entry.existence, entry.density, birth_track_key(lab), True, model, scans)
            if row_cache is not None:
                row_cache[key] = row
        rows.append(row)
    return EtaTable(mode, rows, [sc.M for sc in scans], markov_choice)


# --- conditionals ---------------------------------------------------------------------


def _taken(others, sizes):
    taken = []
    for s, m in enumerate(sizes):
        t = np.zeros(m + 1, dtype=bool)
        col = others[:, s] if others.size else np.zeros(0, dtype=np.int64)
        t[col[col > 0]] = True
        taken.append(t)
    return taken


def _others(table, n, gamma):
    g = gamma.as_array() if isinstance(gamma, AssociationArray) else np.asarray(gamma, dtype=np.int64).reshape(-1, table.S)
    if g.shape[0] == table.P:
        return np.delete(g, n, axis=0)
    if g.shape[0] == table.P - 1:
        return g
    raise InvalidArgument("gamma must have P or P-1 rows")


def _dense_mask(codes, taken):
    pos = np.maximum(codes, 0)
    mask = np.ones(codes.shape[0], dtype=bool)
    for s, t in enumerate(taken):
        mask &= ~t[pos[:, s]]
    return mask


def conditional_row_dist(table: EtaTable, n: int, gamma, temper=1.0) -> np.ndarray:
    """Conditional distribution of row ``n`` over all categories given the other rows.

    Dense tables evaluate the categorical directly; factorized and markov tables assemble it
    from their per-sensor conditionals, so comparing modes tests the chain-rule path.
    """
    others = _others(table, n, gamma)
    taken = _taken(others, table.sensor_sizes)
    if table.mode == "dense":
        logw = table.dense_row(n) / temper
        logw = np.where(_dense_mask(table.codes, taken), logw, -np.inf)
        m = np.max(logw)
        if not np.isfinite(m):
            raise InternalError("row conditional has zero mass")
        p = np.exp(logw - m)
        return p / p.sum()
    codes = table.codes
    out = np.zeros(codes.shape[0])
    if table.mode == "factorized":
        cond = _factorized_conditionals(table.rows[n], taken, temper)
    else:
        cond = _markov_conditionals(table.rows[n], taken, temper, table.markov_choice)
    out[0] = np.exp(cond.first()[0])
    for c in range(1, codes.shape[0]):
        js = codes[c]
        lp = cond.first()[1 + js[0]]
        for t in range(1, table.S):
            lp += cond.next(t, js[:t])[js[t]]
        out[c] = np.exp(lp)
    return out


class _FactorizedConditionals:
    """Normalised per-sensor conditionals of one row given the exclusion sets.

    ``first()`` is a log distribution over ``{-1, 0..M1}``; ``next(t, prefix)`` a log
    distribution over ``{0..M(t+1)}`` given the non-negative prefix of length t.
    """

    def __init__(self, row: EtaRow, taken, temper):
        inv = 1.0 / temper
        levels = []
        for t, lvl in enumerate(row.tree()):
            lv = lvl * inv if inv != 1.0 else lvl
            tk = taken[t]
            if tk.any():
                lv = np.where(tk, -np.inf, lv)
            levels.append(lv)
        # log K for prefixes of length t+1, t = 0..S-1; the last is identically zero
        logk = [None] * len(levels)
        logk[-1] = np.zeros(levels[-1].shape)
        for t in range(len(levels) - 2, -1, -1):
            logk[t] = _lse(levels[t + 1] + logk[t + 1], axis=-1)
        self.levels = levels
        self.logk = logk
        head = np.concatenate([[row.log_dead * inv], row.log_alive * inv + levels[0] + logk[0]])
        self._first = head - _lse(head)

    def first(self):
        return self._first

    def next(self, t, prefix):
        prefix = tuple(int(j) for j in prefix)
        w = self.levels[t][prefix] + self.logk[t][prefix]
        return w - _lse(w)


def _factorized_conditionals(row, taken, temper):
    return _FactorizedConditionals(row, taken, temper)


class _MarkovConditionals:
    def __init__(self, row: EtaRow, taken, temper, choice):
        inv = 1.0 / temper
        first, rest = row.markov_factors(choice)
        first = first * inv if inv != 1.0 else first.copy()
        if taken[0].any():
            first[2:] = np.where(taken[0][1:], -np.inf, first[2:])
        factors = []
        for s, f in enumerate(rest, start=1):
            f = f * inv if inv != 1.0 else f
            if taken[s].any():
                f = np.where(taken[s], -np.inf, f)
            factors.append(f)
        S = 1 + len(factors)
        # logk[s] is log K^(s+1)(j) over j in {0..M(s+1)} (vector), logk[S-1] = 0
        logk = [None] * S
        logk[S - 1] = np.zeros(row.sizes[S - 1] + 1)
        for s in range(S - 2, -1, -1):
            f = factors[s]
            if f.ndim == 1:
                logk[s] = np.full(row.sizes[s] + 1, _lse(f + logk[s + 1]))
            else:
                logk[s] = _lse(f + logk[s + 1][None, :], axis=-1)
        self.factors = factors
        self.logk = logk
        head = first.copy()
        head[1:] += logk[0]
        self._first = head - _lse(head)

    def first(self):
        return self._first

    def next(self, t, prefix):
        f = self.factors[t - 1]
        w = (f if f.ndim == 1 else f[int(prefix[-1])]) + self.logk[t]
        return w - _lse(w)


def _markov_conditionals(row, taken, temper, choice):
    return _MarkovConditionals(row, taken, temper, choice)


# --- samplers -------------------------------------------------------------------------


def _rng(cfg: GibbsConfig, rng):
    return rng if rng is not None else np.random.default_rng(cfg.rng_seed)


def _check_init(table, init):
    a = init if isinstance(init, AssociationArray) else AssociationArray(tuple(map(tuple, np.asarray(init))), table.sensor_sizes)
    if a.P != table.P or a.sensor_sizes != table.sensor_sizes:
        raise InvalidArgument("initial array does not match the eta table")
    return a.as_array().copy()


def _collect(table, history, max_categories):
    counts = {}
    for key in history:
        counts[key] = counts.get(key, 0) + 1
    S = table.S
    samples = [
        (AssociationArray(tuple(key[i:i + S] for i in range(0, len(key), S)), table.sensor_sizes), c)
        for key, c in counts.items()
    ]
    return SampleBatch(samples, len(history), max_categories)


def gibbs_dense(table: EtaTable, cfg: GibbsConfig, init, rng=None) -> SampleBatch:
    """Block Gibbs sampler with one categorical over all joint indices per row."""
    rng = _rng(cfg, rng)
    state = _check_init(table, init)
    P, S, T = table.P, table.S, int(cfg.iterations)
    codes = table.codes
    pos = np.maximum(codes, 0)
    inv = 1.0 / cfg.temper_exponent
    weights = []
    for n in range(P):
        lw = table.dense_row(n)
        lw = lw * inv if inv != 1.0 else lw
        weights.append(np.exp(lw - np.max(lw)))
    taken = [np.zeros(m + 1, dtype=bool) for m in table.sensor_sizes]
    for s in range(S):
        taken[s][state[:, s][state[:, s] > 0]] = True
    cats = np.array([table.category(r) for r in state], dtype=np.int64)
    uniforms = rng.random((T, P))
    history = []
    for t in range(T):
        for n in range(P):
            for s in range(S):
                v = state[n, s]
                if v > 0:
                    taken[s][v] = False
            mask = ~taken[0][pos[:, 0]]
            for s in range(1, S):
                mask &= ~taken[s][pos[:, s]]
            cdf = np.cumsum(weights[n] * mask)
            if cdf[-1] <= 0.0:
                raise InternalError("row conditional has zero mass")
            c = min(int(np.searchsorted(cdf, uniforms[t, n] * cdf[-1], side="right")), cdf.size - 1)
            cats[n] = c
            state[n] = codes[c]
            for s in range(S):
                v = state[n, s]
                if v > 0:
                    taken[s][v] = True
        history.append(tuple(state.reshape(-1).tolist()))
    return _collect(table, history, codes.shape[0])


def _sequential_sampler(table, cfg, init, rng, make_conditionals):
    rng = _rng(cfg, rng)
    state = _check_init(table, init)
    P, S, T = table.P, table.S, int(cfg.iterations)
    taken = [np.zeros(m + 1, dtype=bool) for m in table.sensor_sizes]
    for s in range(S):
        taken[s][state[:, s][state[:, s] > 0]] = True
    uniforms = rng.random((T, P, S))
    history = []
    biggest = 0
    for t in range(T):
        for n in range(P):
            for s in range(S):
                v = state[n, s]
                if v > 0:
                    taken[s][v] = False
            cond = make_conditionals(table.rows[n], taken)
            lp = cond.first()
            biggest = max(biggest, lp.size)
            j = _draw(lp, uniforms[t, n, 0]) - 1
            if j < 0:
                state[n] = -1
            else:
                row = [j]
                for s in range(1, S):
                    lp = cond.next(s, row)
                    biggest = max(biggest, lp.size)
                    row.append(_draw(lp, uniforms[t, n, s]))
                state[n] = row
            for s in range(S):
                v = state[n, s]
                if v > 0:
                    taken[s][v] = True
        history.append(tuple(state.reshape(-1).tolist()))
    return _collect(table, history, biggest)


def gibbs_factorized(table: EtaTable, cfg: GibbsConfig, init, rng=None) -> SampleBatch:
    """Same target as :func:`gibbs_dense`, sampled one sensor index at a time."""
    tau = cfg.temper_exponent
    return _sequential_sampler(table, cfg, init, rng, lambda row, taken: _FactorizedConditionals(row, taken, tau))


def gibbs_markov(table: EtaTable, cfg: GibbsConfig, init, rng=None) -> SampleBatch:
    """Gibbs sampler on the Markov alternative target; samples need exact reweighting."""
    tau = cfg.temper_exponent
    choice = table.markov_choice
    return _sequential_sampler(table, cfg, init, rng, lambda row, taken: _MarkovConditionals(row, taken, tau, choice))


SAMPLERS = {"dense": gibbs_dense, "factorized": gibbs_factorized, "markov": gibbs_markov}


def run_gibbs(table: EtaTable, cfg: GibbsConfig, init, rng=None) -> SampleBatch:
    return SAMPLERS[table.mode](table, cfg, init, rng)
