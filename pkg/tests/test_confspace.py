import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denjoylab.confspace import (
    ConformalStructure,
    act,
    base_point,
    beltrami,
    conf_dist,
    dilatation,
    dilatation_from_beltrami,
    dist_to_base,
    normalize,
    random_invertible,
    random_structure,
    validate_spd,
)
from denjoylab.errors import (
    DimensionMismatch,
    NonSPDInput,
    OrientationReversing,
    SingularMatrix,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=2, max_value=4)


def test_normalize_has_unit_determinant(rng):
    for k in (2, 3, 4):
        A = random_invertible(k, rng)
        P = normalize(A).form
        assert np.linalg.det(P) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(P, P.T)


def test_normalize_is_scale_invariant(rng):
    A = random_invertible(3, rng)
    assert np.allclose(normalize(A).form, normalize(7.5 * A).form, atol=1e-13)
    assert np.allclose(normalize(A).form, normalize(-A).form, atol=1e-13)


def test_base_point_and_conformal_maps():
    assert np.array_equal(base_point(3).form, np.eye(3))
    c, s = math.cos(0.7), math.sin(0.7)
    R = 3.0 * np.array([[c, -s], [s, c]])
    assert dist_to_base(R) < 1e-14
    assert dilatation(R) == pytest.approx(1.0, abs=1e-14)
    assert abs(beltrami(R)) < 1e-15


def test_diagonal_distance_closed_form():
    # normalised form of diag(e^a, e^-a) is diag(e^2a, e^-2a)
    a = 0.3
    A = np.diag([math.exp(a), math.exp(-a)])
    assert dist_to_base(A) == pytest.approx(2 * math.sqrt(2) * a, abs=1e-14)
    assert conf_dist(normalize(A), base_point(2)) == pytest.approx(2 * math.sqrt(2) * a, abs=1e-14)


def test_act_is_a_group_action(rng):
    A, B = random_invertible(3, rng), random_invertible(3, rng)
    P = random_structure(3, rng)
    lhs = act(A @ B, P).form
    rhs = act(A, act(B, P)).form
    assert np.allclose(lhs, rhs, atol=1e-11)
    assert np.allclose(act(np.eye(3), P).form, P.form, atol=1e-14)


def test_act_on_base_is_normalize(rng):
    A = random_invertible(4, rng)
    assert np.allclose(act(A, base_point(4)).form, normalize(A).form, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, k=dims)
def test_metric_axioms(seed, k):
    rng = np.random.default_rng(seed)
    P, Q, R = (random_structure(k, rng) for _ in range(3))
    assert conf_dist(P, P) < 1e-12
    assert abs(conf_dist(P, Q) - conf_dist(Q, P)) <= 1e-10
    assert conf_dist(P, R) <= conf_dist(P, Q) + conf_dist(Q, R) + 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=seeds, k=dims)
def test_isometric_action(seed, k):
    rng = np.random.default_rng(seed)
    P, Q = random_structure(k, rng), random_structure(k, rng)
    A = random_invertible(k, rng, spread=2.0)
    assert abs(conf_dist(act(A, P), act(A, Q)) - conf_dist(P, Q)) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(seed=seeds, k=dims)
def test_dist_to_base_matches_eigen_route(seed, k):
    rng = np.random.default_rng(seed)
    A = random_invertible(k, rng)
    assert dist_to_base(A) == pytest.approx(conf_dist(normalize(A), base_point(k)), abs=1e-10)


def _brute_beltrami(A):
    # z -> a z + b conj(z): recover a, b from the images of 1 and i
    w1 = complex(A[0, 0], A[1, 0])
    wi = complex(A[0, 1], A[1, 1])
    a = (w1 - 1j * wi) / 2
    b = (w1 + 1j * wi) / 2
    return b / a


@settings(max_examples=200, deadline=None)
@given(seed=seeds)
def test_beltrami_against_complex_form(seed):
    rng = np.random.default_rng(seed)
    A = random_invertible(2, rng, positive=True)
    assert abs(beltrami(A) - _brute_beltrami(A)) <= 1e-12
    assert dilatation(A) == pytest.approx(dilatation_from_beltrami(beltrami(A)), rel=1e-10)
    assert dist_to_base(A) == pytest.approx(math.sqrt(2) * math.log(dilatation(A)), abs=1e-10)


def test_ill_conditioned_2x2_keeps_accuracy():
    # condition number 1e16; the small singular value comes from the determinant
    A = np.array([[1e8, 0.0], [0.0, 1e-8]])
    assert dist_to_base(A) == pytest.approx(2 * math.sqrt(2) * 8 * math.log(10), rel=1e-14)


def test_validation_errors():
    with pytest.raises(SingularMatrix):
        normalize(np.zeros((2, 2)))
    with pytest.raises(SingularMatrix):
        normalize(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(DimensionMismatch):
        normalize(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        act(np.eye(3), base_point(2))
    with pytest.raises(DimensionMismatch):
        conf_dist(base_point(2), base_point(3))
    with pytest.raises(NonSPDInput):
        validate_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NonSPDInput):
        validate_spd(np.diag([2.0, 2.0]))
    with pytest.raises(NonSPDInput):
        ConformalStructure(np.diag([-1.0, -1.0]))
    with pytest.raises(OrientationReversing):
        beltrami(np.diag([1.0, -1.0]))
    with pytest.raises(DimensionMismatch):
        beltrami(np.eye(3))


def test_structure_is_immutable_and_hashable():
    P = base_point(2)
    with pytest.raises(ValueError):
        P.form[0, 0] = 2.0
    assert P == ConformalStructure(np.eye(2))
    assert len({P, ConformalStructure(np.eye(2))}) == 1


def test_worked_examples():
    c, s = math.cos(1.1), math.sin(1.1)
    rot = np.array([[c, -s], [s, c]])
    assert np.allclose(normalize(3 * np.eye(2)).form, np.eye(2))
    assert np.allclose(normalize(rot).form, np.eye(2))
    D = np.diag([2.0, 0.5])
    assert np.allclose(normalize(D).form, np.diag([4.0, 0.25]), atol=1e-15)
    assert np.allclose(act(D, base_point(2)).form, np.diag([4.0, 0.25]), atol=1e-15)
    assert conf_dist(base_point(2), base_point(2)) == 0.0
    assert conf_dist(ConformalStructure(np.diag([4.0, 0.25])), base_point(2)) == pytest.approx(math.sqrt(2) * math.log(4), abs=1e-12)
    E = ConformalStructure(np.diag([math.e**2, math.e**-2]))
    assert conf_dist(E, base_point(2)) == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    assert dist_to_base(5 * rot) < 1e-14
    assert dist_to_base(D) == pytest.approx(1.960516, abs=1e-6)
    assert dilatation(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    assert dilatation(5 * rot) == pytest.approx(1.0)
    assert dilatation(np.array([[2.0, 1.0], [0.0, 1.0]])) == pytest.approx((3 + math.sqrt(5)) / 2, abs=1e-12)
    assert beltrami(np.eye(2)) == 0
    assert abs(beltrami(rot)) < 1e-16
    mu = beltrami(D)
    assert mu == pytest.approx(0.6)
    assert dilatation_from_beltrami(mu) == pytest.approx(4.0) == dilatation(D)
