"""Self-checks against the brute-force oracle on tiny randomized instances.

Each ``check_*`` function returns a :class:`CheckResult`; ``glmb-fusion verify`` runs the
quick ones and the acceptance suite runs all of them at full size.
"""

from __future__ import annotations

import itertools
import time as _time
from dataclasses import dataclass

import numpy as np

from .core import AssociationArray, Gaussian, GlmbComponent, GlmbDensity, Label, birth_track_key, indicator_factorization_check, is_positive_one_one
from .gibbs import EtaTable, GibbsConfig, build_eta, conditional_row_dist, gibbs_dense
from .glmb import FilterConfig, joint_update
from .models import BirthEntry, BirthModel, MotionModel, MultiSensorSuite, SensorModel, SystemModel, prepare_scan
from .oracle import enumerate_gamma, exact_conditional, exact_glmb_update, exact_target


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _timed(name, fn):
    t0 = _time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, passed, detail, _time.perf_counter() - t0)


# --- instances ------------------------------------------------------------------------


class FixedEtaTable(EtaTable):
    """Dense table whose rows are given directly as log weights over the categories."""

    def __init__(self, log_eta_rows, sensor_sizes):
        super().__init__("dense", [None] * len(log_eta_rows), sensor_sizes)
        self._rows = [np.asarray(r, dtype=float) for r in log_eta_rows]
        if any(r.shape != (self.n_categories,) for r in self._rows):
            raise ValueError("each row needs one weight per category")

    def dense_row(self, n):
        return self._rows[n]

    def log_eta(self, n, js):
        return float(self._rows[n][self.category(js)])

    def log_weight(self, gamma):
        rows = gamma.rows if isinstance(gamma, AssociationArray) else gamma
        return float(sum(self.log_eta(n, r) for n, r in enumerate(rows)))

    def initial_array(self):
        return AssociationArray(((-1,) * self.S,) * self.P, self.sensor_sizes)


def random_eta_table(rng, P=2, sensor_sizes=(1, 1)):
    n_cat = 1 + int(np.prod([1 + m for m in sensor_sizes]))
    return FixedEtaTable([np.log(rng.uniform(0.05, 1.0, n_cat)) for _ in range(P)], sensor_sizes)


def tiny_model(rng, n_sensors=2, n_births=1):
    """One-axis constant-velocity model on the box ``[-10, 10]`` with modest clutter."""
    motion = MotionModel.constant_velocity(1, 1.0, float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.8, 0.98)))
    births = [
        BirthEntry(i + 1, float(rng.uniform(0.1, 0.6)), Gaussian([rng.uniform(-5, 5), 0.0], np.diag([4.0, 1.0])))
        for i in range(n_births)
    ]
    H = np.array([[1.0, 0.0]])
    sensors = [
        SensorModel(H, np.array([[float(rng.uniform(0.3, 2.0))]]), float(rng.uniform(0.5, 0.95)), float(rng.uniform(0.5, 2.0)), ([-10.0], [10.0]))
        for _ in range(n_sensors)
    ]
    return SystemModel(motion, BirthModel(births), MultiSensorSuite(sensors))


def tiny_prior(rng, model, n_components=2, max_tracks=1, time=3):
    comps = []
    for h in range(n_components):
        n = int(rng.integers(0, max_tracks + 1))
        tracks, keys = {}, {}
        for i in range(n):
            lab = Label(int(rng.integers(1, time + 1)), i + 1)
            tracks[lab] = Gaussian([rng.uniform(-6, 6), rng.uniform(-1, 1)], np.diag(rng.uniform(0.5, 2.0, 2)))
            keys[lab] = birth_track_key(lab) ^ h
        comps.append(GlmbComponent(tuple(tracks), float(np.log(rng.uniform(0.2, 1.0))), tracks, keys))
    return GlmbDensity(comps, time)


def tiny_scan(rng, model, max_meas=2):
    return [rng.uniform(-9.5, 9.5, (int(rng.integers(0, max_meas + 1)), 1)) for _ in model.suite.sensors]


# --- checks ---------------------------------------------------------------------------


def check_factorization(max_P=3, max_S=2, max_M=2):
    """Leave-one-row-out factorisation equals the direct indicator on every candidate array."""

    def run():
        arrays = failures = 0
        for S in range(1, max_S + 1):
            for sizes in itertools.product(range(max_M + 1), repeat=S):
                cands = [(-1,) * S] + list(itertools.product(*(range(m + 1) for m in sizes)))
                for P in range(1, max_P + 1):
                    for rows in itertools.product(cands, repeat=P):
                        arrays += 1
                        direct = int(is_positive_one_one(rows, sizes))
                        for n in range(P):
                            if indicator_factorization_check(rows, sizes, n) != direct:
                                failures += 1
        return failures == 0, f"{arrays} arrays, {failures} failures"

    return _timed("indicator factorization", run)


def check_conditionals(n_tables=100, seed=0, tol=1e-12):
    """Closed-form row conditionals equal conditionals of the enumerated joint."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_tables):
            table = random_eta_table(rng)
            target = exact_target(table, [np.exp(table.dense_row(n)) for n in range(table.P)])
            for gamma in enumerate_gamma(table.P, table.sensor_sizes):
                for n in range(table.P):
                    diff = np.abs(conditional_row_dist(table, n, gamma) - exact_conditional(target, table, n, gamma))
                    worst = max(worst, float(diff.max()))
        return worst <= tol, f"{n_tables} tables, max abs err {worst:.3g}"

    return _timed("gibbs conditionals", run)


def total_variation(batch, target):
    probs = target.as_dict()
    emp = {a.rows: c / batch.total for a, c in batch.samples}
    keys = set(probs) | set(emp)
    return 0.5 * sum(abs(probs.get(k, 0.0) - emp.get(k, 0.0)) for k in keys)


def check_gibbs_convergence(seeds=(0, 1, 2, 3, 4), sweeps=100_000, table_seed=0, tol=0.02):
    def run():
        table = random_eta_table(np.random.default_rng(table_seed))
        target = exact_target(table, [np.exp(table.dense_row(n)) for n in range(table.P)])
        tvs = []
        for s in seeds:
            batch = gibbs_dense(table, GibbsConfig(iterations=sweeps, rng_seed=s, mode="dense"), table.initial_array())
            tvs.append(total_variation(batch, target))
        ok = sum(tv < tol for tv in tvs)
        return ok == len(seeds), f"TV per seed {', '.join(f'{tv:.4f}' for tv in tvs)}"

    return _timed("gibbs convergence", run)


def _mean_rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))


def compare_densities(got: GlmbDensity, want: GlmbDensity):
    """Max abs weight error and max relative mean error between two densities, matched by identity."""
    gw = dict(zip((c.identity for c in got.components), got.weights / got.weights.sum()))
    ww = dict(zip((c.identity for c in want.components), want.weights / want.weights.sum()))
    gc = {c.identity: c for c in got.components}
    wc = {c.identity: c for c in want.components}
    w_err = max(abs(gw.get(k, 0.0) - ww.get(k, 0.0)) for k in set(gw) | set(ww))
    m_err = 0.0
    for k in set(gc) & set(wc):
        for lab in wc[k].label_set:
            m_err = max(m_err, _mean_rel_err(gc[k].tracks[lab].mean, wc[k].tracks[lab].mean))
    return w_err, m_err


def random_instance(rng, mode="dense"):
    S = int(rng.integers(1, 3))
    model = tiny_model(rng, S, int(rng.integers(1, 3)))
    prior = tiny_prior(rng, model, int(rng.integers(1, 3)), 1)
    cfg = FilterConfig(h_max=10**6, prune_threshold=0.0, exhaustive=True, gibbs=GibbsConfig(mode=mode))
    return model, prior, tiny_scan(rng, model), cfg


def check_exact_update(n_instances=20, seed=0, w_tol=1e-9, m_tol=1e-9):
    def run():
        rng = np.random.default_rng(seed)
        worst_w = worst_m = 0.0
        for _ in range(n_instances):
            model, prior, Z, cfg = random_instance(rng)
            w_err, m_err = compare_densities(joint_update(prior, Z, model, cfg), exact_glmb_update(prior, Z, model))
            worst_w, worst_m = max(worst_w, w_err), max(worst_m, m_err)
        ok = worst_w < w_tol and worst_m < m_tol
        return ok, f"{n_instances} instances, weight err {worst_w:.3g}, mean rel err {worst_m:.3g}"

    return _timed("exact update", run)


def _random_state(rng, table):
    """A random positive 1-1 array built row by row."""
    used = [set() for _ in table.sensor_sizes]
    rows = []
    for _ in range(table.P):
        if rng.random() < 0.3:
            rows.append((-1,) * table.S)
            continue
        row = []
        for s, m in enumerate(table.sensor_sizes):
            free = [0] + [j for j in range(1, m + 1) if j not in used[s]]
            j = int(rng.choice(free))
            if j:
                used[s].add(j)
            row.append(j)
        rows.append(tuple(row))
    return AssociationArray(tuple(rows), table.sensor_sizes)


def check_mode_equivalence(n_states=100, n_support=20, seed=0, tol=1e-12):
    """Dense vs factorized conditionals, and markov support covering the exact support."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_states):
            model = tiny_model(rng, 2, 1)
            prior = tiny_prior(rng, model, 1, 2)
            scans = prepare_scan(model.suite, tiny_scan(rng, model, 3))
            comp = prior.components[0]
            dense = build_eta(comp, model, scans, prior.time + 1, "dense")
            fact = build_eta(comp, model, scans, prior.time + 1, "factorized")
            gamma = _random_state(rng, dense)
            for n in range(dense.P):
                diff = np.abs(conditional_row_dist(dense, n, gamma) - conditional_row_dist(fact, n, gamma))
                worst = max(worst, float(diff.max()))
        uncovered = 0
        for _ in range(n_support):
            model, prior, Z, _ = random_instance(rng)
            scans = prepare_scan(model.suite, Z)
            for comp in prior.components:
                for choice in ("independent", "pairwise"):
                    table = build_eta(comp, model, scans, prior.time + 1, "markov", choice)
                    for gamma in enumerate_gamma(table.P, table.sensor_sizes):
                        if np.isfinite(table.log_weight(gamma)) and not all(
                            np.isfinite(table.log_alternative(n, r)) for n, r in enumerate(gamma.rows)
                        ):
                            uncovered += 1
        ok = worst <= tol and uncovered == 0
        return ok, f"max conditional diff {worst:.3g}, {uncovered} exact-support arrays outside markov support"

    return _timed("mode equivalence", run)


def quick_checks():
    return [
        check_factorization(2, 2, 1),
        check_conditionals(n_tables=10),
        check_gibbs_convergence(seeds=(0,), sweeps=20_000, tol=0.03),
        check_exact_update(n_instances=5),
        check_mode_equivalence(n_states=20, n_support=5),
    ]


__all__ = [
    "CheckResult",
    "FixedEtaTable",
    "check_conditionals",
    "check_exact_update",
    "check_factorization",
    "check_gibbs_convergence",
    "check_mode_equivalence",
    "compare_densities",
    "quick_checks",
    "random_eta_table",
    "random_instance",
    "total_variation",
]
