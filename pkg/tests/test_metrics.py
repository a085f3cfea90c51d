import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from glmb_fusion.errors import InvalidArgument
from glmb_fusion.metrics import OspaParams, ospa


def brute_ospa(X, Y, c, p):
    """OSPA by trying every injection of the smaller set into the larger one."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if n == 0:
        return 0.0
    best = min(
        (sum(min(np.linalg.norm(X[i] - Y[perm[i]]), c) ** p for i in range(m)) for perm in itertools.permutations(range(n), m)),
        default=0.0,
    )
    return ((best + c**p * (n - m)) / n) ** (1 / p)


def test_examples():
    P = OspaParams(1.0, 100.0)
    assert ospa([[1.0, 2.0]], [[1.0, 2.0]], P) == (0.0, 0.0, 0.0)
    assert ospa(np.zeros((0, 1)), [[5.0]], P) == (100.0, 0.0, 100.0)
    assert ospa([[0.0]], [[3.0]], P) == pytest.approx((3.0, 3.0, 0.0))
    assert ospa([], [], P) == (0.0, 0.0, 0.0)


def test_cutoff_applies():
    total, loc, card = ospa([[0.0]], [[500.0]], OspaParams(1.0, 100.0))
    assert total == pytest.approx(100.0) and loc == pytest.approx(100.0) and card == 0.0


def test_param_validation():
    with pytest.raises(InvalidArgument):
        OspaParams(0.5, 10.0)
    with pytest.raises(InvalidArgument):
        OspaParams(1.0, 0.0)
    with pytest.raises(InvalidArgument):
        ospa([[0.0, 0.0]], [[0.0]])


pts = st.integers(0, 4).flatmap(lambda n: arrays(np.float64, (n, 2), elements=st.floats(-200, 200)))


@settings(max_examples=150, deadline=None)
@given(pts, pts, st.sampled_from([1.0, 2.0]))
def test_matches_permutation_oracle(X, Y, p):
    c = 100.0
    total, loc, card = ospa(X, Y, OspaParams(p, c))
    assert total == pytest.approx(brute_ospa(X, Y, c, p), rel=1e-9, abs=1e-9)
    assert total**p == pytest.approx(loc**p + card**p, rel=1e-9, abs=1e-9)
    assert 0.0 <= total <= c + 1e-9


@settings(max_examples=50, deadline=None)
@given(pts, pts)
def test_symmetry(X, Y):
    a = ospa(X, Y, OspaParams(1.0, 100.0))
    b = ospa(Y, X, OspaParams(1.0, 100.0))
    assert a == pytest.approx(b)
