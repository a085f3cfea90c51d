import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from glmb_fusion.core import AssociationArray, Gaussian, GlmbComponent, Label, is_positive_one_one
from glmb_fusion.errors import InvalidArgument, InvalidModel
from glmb_fusion.gibbs import (
    GibbsConfig,
    _MarkovConditionals,
    build_eta,
    conditional_row_dist,
    gibbs_dense,
    gibbs_factorized,
    gibbs_markov,
    run_gibbs,
)
from glmb_fusion.models import BirthEntry, BirthModel, MotionModel, MultiSensorSuite, SensorModel, SystemModel, prepare_scan
from glmb_fusion.oracle import enumerate_gamma, exact_target
from glmb_fusion.verify import FixedEtaTable, random_eta_table, total_variation


def scalar_system(n_sensors=1, ps=0.99, rb=0.03, n_births=1, q=0.5):
    sensors = tuple(SensorModel([[1.0]], [[0.5 + s]], 0.66 + 0.1 * s, 2.0, ([-20.0], [20.0])) for s in range(n_sensors))
    births = [BirthEntry(i + 1, rb, Gaussian([2.0 * i], [[3.0]])) for i in range(n_births)]
    return SystemModel(MotionModel([[1.0]], [[q]], ps), BirthModel(births), MultiSensorSuite(sensors))


def component(labels_means, log_weight=0.0):
    tracks = {lab: Gaussian([m], [[1.0]]) for lab, m in labels_means}
    return GlmbComponent(tuple(tracks), log_weight, tracks, {lab: i for i, lab in enumerate(tracks)})


def table_for(model, comp, Z, mode="dense", choice="independent", time=5):
    return build_eta(comp, model, prepare_scan(model.suite, Z), time, mode, choice)


def test_eta_nonexistence_entries():
    model = scalar_system()
    t = table_for(model, component([(Label(1, 1), 0.0)]), [np.array([[0.3]])])
    # survivor row then birth row
    assert np.exp(t.log_eta(0, (-1,))) == pytest.approx(0.01)
    assert np.exp(t.log_eta(1, (-1,))) == pytest.approx(0.97)
    assert t.labels == [Label(1, 1), Label(5, 1)]


def test_dense_eta_matches_quadrature():
    model = scalar_system(ps=0.9, q=0.5)
    z = 0.7
    t = table_for(model, component([(Label(1, 1), 0.4)]), [np.array([[z], [-3.0]])])
    sm = model.suite.sensors[0]
    kappa = 2.0 / 40.0
    row = np.exp(t.dense_row(0))
    assert row[0] == pytest.approx(0.1)
    # predicted N(0.4, 1.5); miss and two detections
    assert row[1] == pytest.approx(0.9 * (1 - sm.detect_prob), rel=1e-12)
    for j, zj in enumerate([z, -3.0], start=1):
        integral, _ = integrate.quad(lambda x: norm.pdf(x, 0.4, np.sqrt(1.5)) * norm.pdf(zj, x, np.sqrt(0.5)), -30, 30, epsabs=0, epsrel=1e-12)
        assert row[1 + j] == pytest.approx(0.9 * sm.detect_prob * integral / kappa, rel=1e-6)


def test_build_eta_rejects_unit_probabilities():
    model = scalar_system()
    object.__setattr__(model.suite.sensors[0], "detect_prob", 1.0)
    with pytest.raises(InvalidModel):
        table_for(model, component([]), [np.zeros((0, 1))])


def test_conditional_no_exclusions():
    # P=1, S=1, M=0: proportional to (eta(-1), eta(0))
    t = FixedEtaTable([np.log([0.2, 0.6])], (0,))
    np.testing.assert_allclose(conditional_row_dist(t, 0, AssociationArray(((0,),), (0,))), [0.25, 0.75])


def test_conditional_exclusion_rule():
    t = FixedEtaTable([np.log([0.2, 0.3, 0.5])] * 2, (1,))
    p = conditional_row_dist(t, 0, AssociationArray(((-1,), (1,)), (1,)))
    assert p[2] == 0.0
    np.testing.assert_allclose(p, [0.4, 0.6, 0.0])
    # the P-1 "others" form gives the same answer
    np.testing.assert_allclose(conditional_row_dist(t, 0, [[1]]), p)
    with pytest.raises(InvalidArgument):
        conditional_row_dist(t, 0, [[1], [0], [0]])


def test_dense_gibbs_one_sweep_is_positive_one_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = random_eta_table(rng, 3, (2, 1))
        batch = gibbs_dense(t, GibbsConfig(iterations=1, rng_seed=int(rng.integers(1000))), t.initial_array())
        assert batch.total == 1 and len(batch.samples) == 1
        assert is_positive_one_one(batch.arrays[0].rows, t.sensor_sizes)


@pytest.mark.parametrize("sampler", [gibbs_dense, gibbs_factorized, gibbs_markov])
def test_samplers_are_deterministic(sampler):
    model = scalar_system(2, n_births=2)
    mode = {gibbs_dense: "dense", gibbs_factorized: "factorized", gibbs_markov: "markov"}[sampler]
    t = table_for(model, component([(Label(1, 1), 0.0)]), [np.array([[0.1], [3.0]]), np.array([[-0.2]])], mode)
    cfg = GibbsConfig(iterations=300, rng_seed=42, mode=mode)
    a = sampler(t, cfg, t.initial_array())
    b = sampler(t, cfg, t.initial_array())
    assert a.samples == b.samples
    assert all(is_positive_one_one(x.rows, t.sensor_sizes) for x in a.arrays)


def test_dense_gibbs_converges_to_enumerated_target():
    t = random_eta_table(np.random.default_rng(5))
    target = exact_target(t, [np.exp(t.dense_row(n)) for n in range(t.P)])
    batch = gibbs_dense(t, GibbsConfig(iterations=50_000, rng_seed=1, mode="dense"), t.initial_array())
    assert total_variation(batch, target) < 0.02


def test_factorized_sampler_matches_dense_distribution():
    model = scalar_system(2, n_births=1)
    Z = [np.array([[0.1], [3.0]]), np.array([[-0.2]])]
    comp = component([(Label(1, 1), 0.0)])
    dense = table_for(model, comp, Z, "dense")
    fact = table_for(model, comp, Z, "factorized")
    target = exact_target(dense)
    batch = gibbs_factorized(fact, GibbsConfig(iterations=40_000, rng_seed=3, mode="factorized"), fact.initial_array())
    assert total_variation(batch, target) < 0.02


def test_factorized_single_sensor_matches_dense_conditional():
    model = scalar_system(1, n_births=2)
    Z = [np.array([[0.1], [3.0], [-1.0]])]
    comp = component([(Label(1, 1), 0.0)])
    dense = table_for(model, comp, Z, "dense")
    fact = table_for(model, comp, Z, "factorized")
    for gamma in enumerate_gamma(dense.P, dense.sensor_sizes):
        for n in range(dense.P):
            np.testing.assert_allclose(conditional_row_dist(fact, n, gamma), conditional_row_dist(dense, n, gamma), atol=1e-14)


def test_factorized_buffer_bound():
    rng = np.random.default_rng(2)
    sensors = tuple(SensorModel([[1.0]], [[1.0]], 0.7, 5.0, ([-20.0], [20.0])) for _ in range(3))
    model = SystemModel(
        MotionModel([[1.0]], [[0.5]], 0.95),
        BirthModel([BirthEntry(i + 1, 0.1, Gaussian([0.0], [[4.0]])) for i in range(2)]),
        MultiSensorSuite(sensors),
    )
    Z = [rng.uniform(-5, 5, (9, 1)) for _ in range(3)]
    comp = component([(Label(1, 1), 0.0), (Label(1, 2), 1.0)])
    fact = table_for(model, comp, Z, "factorized")
    assert fact.P == 4
    batch = gibbs_factorized(fact, GibbsConfig(iterations=20, mode="factorized"), fact.initial_array())
    assert batch.max_categories <= 2 + 9
    dense = table_for(model, comp, Z, "dense")
    assert dense.n_categories == 1001
    assert gibbs_dense(dense, GibbsConfig(iterations=2, mode="dense"), dense.initial_array()).max_categories == 1001


def test_markov_single_sensor_coincides_with_exact():
    model = scalar_system(1, n_births=1)
    Z = [np.array([[0.1], [3.0]])]
    t = table_for(model, component([(Label(1, 1), 0.0)]), Z, "markov")
    for n in range(t.P):
        for js in [(-1,), (0,), (1,), (2,)]:
            assert t.log_alternative(n, js) == pytest.approx(t.log_eta(n, js), rel=1e-12)


@pytest.mark.parametrize("choice", ["independent", "pairwise"])
def test_markov_support_contains_exact_support(choice):
    model = scalar_system(2, n_births=1)
    Z = [np.array([[0.1], [3.0]]), np.array([[-0.2]])]
    t = table_for(model, component([]), Z, "markov", choice)
    assert t.P == 1
    for gamma in enumerate_gamma(1, t.sensor_sizes):
        if np.isfinite(t.log_weight(gamma)):
            assert np.isfinite(t.log_alternative(0, gamma.rows[0]))


@pytest.mark.parametrize("choice", ["independent", "pairwise"])
def test_markov_normaliser_of_nonexistence_is_one(choice):
    model = scalar_system(3, n_births=1)
    Z = [np.array([[0.1], [3.0]]), np.array([[-0.2]]), np.array([[0.4], [1.0]])]
    t = table_for(model, component([]), Z, "markov", choice)
    free = [np.zeros(m + 1, dtype=bool) for m in t.sensor_sizes]
    cond = _MarkovConditionals(t.rows[0], free, 1.0, choice)
    # the all -1 row carries no downstream factor, so its probability is its own weight
    alt = np.array([t.log_alternative(0, tuple(c)) for c in t.codes])
    total = np.exp(alt).sum()
    assert np.exp(cond.first()[0]) == pytest.approx(np.exp(alt[0]) / total, rel=1e-12)
    np.testing.assert_allclose(conditional_row_dist(t, 0, np.zeros((0, 3), dtype=int)), np.exp(alt) / total, rtol=1e-12)


def test_markov_samples_reweighted_exactly():
    model = scalar_system(2, n_births=2)
    Z = [np.array([[0.1], [3.0]]), np.array([[-0.2]])]
    t = table_for(model, component([(Label(1, 1), 0.0)]), Z, "markov")
    batch = run_gibbs(t, GibbsConfig(iterations=200, rng_seed=0, mode="markov"), t.initial_array())
    dense = table_for(model, component([(Label(1, 1), 0.0)]), Z, "dense")
    for a in batch.arrays:
        assert t.log_weight(a) == pytest.approx(dense.log_weight(a), rel=1e-12)


def test_tempering_flattens_conditionals():
    t = FixedEtaTable([np.log([0.1, 0.9])], (0,))
    g = AssociationArray(((0,),), (0,))
    p1 = conditional_row_dist(t, 0, g)
    p3 = conditional_row_dist(t, 0, g, temper=3.0)
    assert p3[0] > p1[0]
    np.testing.assert_allclose(p3, np.array([0.1, 0.9]) ** (1 / 3) / np.sum(np.array([0.1, 0.9]) ** (1 / 3)))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        GibbsConfig(iterations=0)
    with pytest.raises(InvalidArgument):
        GibbsConfig(mode="greedy")
    with pytest.raises(InvalidArgument):
        GibbsConfig(temper_exponent=0.0)
    with pytest.raises(InvalidArgument):
        GibbsConfig(markov_choice="other")
