import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from denjoylab.blowup import DistortionProfile, build_ball_system, synthetic_jacobian_field
from denjoylab.confspace import random_invertible
from denjoylab.distortion import (
    constant_profile,
    fit_per_ball_constant,
    trace_cocycle_distortion,
    trace_matrices,
    verify_lemma1_bound,
    volume_matched_profile,
    volume_sum,
)
from denjoylab.dynamics import reduce_mod1
from denjoylab.errors import DegenerateSamples, NotDisjoint, PerStepViolation, WindowEdge

from conftest import DEFAULT_THETA


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(2, 4), n=st.integers(1, 60))
def test_direct_never_exceeds_telescoped(seed, k, n):
    rng = np.random.default_rng(seed)
    tr = trace_matrices([random_invertible(k, rng, spread=0.5) for _ in range(n)])
    assert tr.telescoping_ok()
    assert np.all(np.diff(tr.telescoped) >= 0)


def test_equality_for_commuting_same_sign_steps():
    rng = np.random.default_rng(3)
    mats = [np.diag(np.exp(s * np.array([1.0, 0.2, -1.2]))) for s in rng.uniform(0, 0.1, 50)]
    tr = trace_matrices(mats)
    assert np.allclose(tr.direct, tr.telescoped, atol=1e-9)


def test_cancelling_steps_return_to_zero():
    A = np.diag([2.0, 0.5])
    tr = trace_matrices([A, np.linalg.inv(A)])
    assert tr.direct[-1] < 1e-14
    assert tr.telescoped[-1] == pytest.approx(2 * tr.steps[0])


def test_trace_follows_balls(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, volume_matched_profile(S, 1.0))
    tr = trace_cocycle_distortion(field, S, S.center(-3), 50)
    assert tr.balls.tolist() == list(range(-3, 47))
    assert np.allclose(tr.volumes, S.volumes()[S.J - 3 : S.J + 47])
    with pytest.raises(WindowEdge):
        trace_cocycle_distortion(field, S, S.center(190), 20)


def test_trace_csv_export(small_system, tmp_path):
    S = small_system
    field = synthetic_jacobian_field(S, volume_matched_profile(S, 1.0))
    tr = trace_cocycle_distortion(field, S, S.center(0), 25)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0]) == ["step", "d_i", "T_n", "D_n", "ball_index", "vol"]
    assert len(rows) == 25
    assert float(rows[7]["D_n"]) == tr.direct[7]
    assert int(rows[7]["ball_index"]) == 7


def test_flatness_fit_recovers_closed_form(small_system):
    S = small_system
    eps = 0.3
    field = synthetic_jacobian_field(S, DistortionProfile.constant(S, 2, eps))
    fit = fit_per_ball_constant(field, S, 5, samples=200, rng=np.random.default_rng(1))
    assert fit.slope == pytest.approx(2.0, abs=0.1)
    assert fit.constant == pytest.approx(2 * eps / S.radius(5) ** 2, rel=0.01)


def test_flatness_fit_order_one_has_slope_one(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, DistortionProfile.constant(S, 1, 0.3))
    fit = fit_per_ball_constant(field, S, 0, rng=np.random.default_rng(2), exponent=1)
    assert fit.slope == pytest.approx(1.0, abs=0.05)


def test_flatness_fit_input_checks(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, DistortionProfile.constant(S, 2, 0.3))
    with pytest.raises(ValueError):
        fit_per_ball_constant(field, S, 0, samples=10)
    tiny = build_ball_system(DEFAULT_THETA, 3, c_r=1e-10)
    tiny_field = synthetic_jacobian_field(tiny, DistortionProfile.constant(tiny, 2, 0.3))
    with pytest.raises(DegenerateSamples):
        fit_per_ball_constant(tiny_field, tiny, 0)


def test_volume_sum_requires_certificate(small_system):
    assert volume_sum(small_system) == pytest.approx(math.fsum(small_system.volumes()))
    bad = type(small_system)(
        k=2,
        theta=small_system.theta,
        J=1,
        centers=np.array([[0.5, 0.5], [0.52, 0.5], [0.1, 0.1]]),
        radii=np.array([0.05, 0.05, 0.01]),
        budget=0.5,
    )
    with pytest.raises(NotDisjoint):
        volume_sum(bad)


def test_bound_holds_for_volume_matched_field(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, volume_matched_profile(S, 1.0))
    tr = trace_cocycle_distortion(field, S, S.center(0), 200)
    rep = verify_lemma1_bound(tr, 1.0)
    assert rep.passed
    assert rep.sup_direct <= rep.bound + 1e-8
    assert rep.best_M <= 1.0 + 1e-6
    assert rep.revisits == []


def test_bound_fails_for_constant_field(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, constant_profile(S, 0.05))
    tr = trace_cocycle_distortion(field, S, S.center(0), 150)
    with pytest.raises(PerStepViolation) as err:
        verify_lemma1_bound(tr, 1.0)
    assert err.value.step == 0
    rep = verify_lemma1_bound(tr, 1.0, strict=False)
    assert not rep.passed
    assert rep.first_violation == 0
    assert np.allclose(tr.direct, 0.05 * np.arange(1, 151), rtol=1e-9)


def test_amplitude_scaling_gives_exact_per_step_distance():
    S = build_ball_system(DEFAULT_THETA, 30)
    field = synthetic_jacobian_field(S, volume_matched_profile(S, 2.0))
    tr = trace_cocycle_distortion(field, S, S.center(0), 20)
    assert np.allclose(tr.steps, 2.0 * tr.volumes, rtol=1e-9, atol=1e-15)


def test_revisited_ball_fails_the_bound():
    tr = trace_matrices([np.eye(2), np.eye(2)], balls=[4, 4], volumes=[0.1, 0.1])
    rep = verify_lemma1_bound(tr, 1.0)
    assert rep.revisits == [4]
    assert not rep.passed


def test_translation_field_has_zero_distortion(small_system):
    S = small_system
    tr = trace_matrices([np.eye(2)] * 20)
    assert np.all(tr.direct == 0) and np.all(tr.telescoped == 0)
    rep = verify_lemma1_bound(trace_cocycle_distortion(lambda x: 2.0 * np.eye(2), S, S.center(0), 10), 5.0)
    assert rep.passed and rep.sup_direct == 0


def test_single_nonconformal_step():
    N = np.diag([1.0, -1.0]) / math.sqrt(2)
    w, V = np.linalg.eigh(0.3 * N)
    kick = (V * np.exp(w)) @ V.T
    tr = trace_matrices([kick] + [0.7 * np.eye(2)] * 9)
    assert np.allclose(tr.direct, 0.6, atol=1e-14)
    assert np.allclose(tr.telescoped, 0.6, atol=1e-14)


def test_commuting_mixed_signs_closed_form():
    N = np.diag([1.0, -1.0]) / math.sqrt(2)
    eps = np.array([0.1, -0.05, 0.2, -0.12])
    tr = trace_matrices([np.diag(np.exp(e * np.diag(N))) for e in eps])
    assert tr.direct[-1] == pytest.approx(2 * abs(eps.sum()), abs=1e-14)
    assert tr.telescoped[-1] == pytest.approx(2 * np.abs(eps).sum(), abs=1e-14)
    assert tr.direct[-1] < tr.telescoped[-1]


def test_conformal_and_superflat_fields(small_system):
    S = small_system
    flat = synthetic_jacobian_field(S, DistortionProfile.constant(S, 2, 0.0))
    assert fit_per_ball_constant(flat, S, 0, rng=np.random.default_rng(0)).constant == 0.0
    sup = synthetic_jacobian_field(S, DistortionProfile.constant(S, 3, 0.3))
    fit = fit_per_ball_constant(sup, S, 0, rng=np.random.default_rng(0), exponent=2)
    ratio = fit.dist / fit.ell**2
    small = fit.ell < 1e-2 * S.radius(0)
    large = fit.ell > 0.5 * S.radius(0)
    # dist / l^2 = 2 eps l / r^3, so the ratio of the two groups is at most 0.01 / 0.5
    assert ratio[small].max() < 0.05 * ratio[large].min()
    assert fit.slope == pytest.approx(3.0, abs=0.1)


def test_contrast_growth_and_crossing():
    S = build_ball_system(DEFAULT_THETA, 400)
    tr = trace_cocycle_distortion(synthetic_jacobian_field(S, constant_profile(S, 0.05)), S, S.center(0), 400)
    n = np.arange(1, 401)
    assert np.all(tr.direct[99:] >= 0.9 * 0.05 * n[99:])
    assert np.allclose(tr.direct / n, 0.05, rtol=1e-9)
    rep = verify_lemma1_bound(tr, 1.0, strict=False)
    assert rep.crossing_step <= math.floor(1.0 * rep.bound / (0.9 * 0.05)) + 1


def test_volume_bound_transfer_on_random_starts(small_system):
    S = small_system
    field = synthetic_jacobian_field(S, volume_matched_profile(S, 3.0))
    rng = np.random.default_rng(8)
    for _ in range(20):
        j = int(rng.integers(-S.J, 0))
        x = reduce_mod1(S.center(j) + 0.5 * S.radius(j) * rng.uniform(-1, 1, 2))
        tr = trace_cocycle_distortion(field, S, x, 100)
        assert np.all(tr.steps <= 3.0 * tr.volumes + 1e-12)
        assert np.all(tr.steps >= 0)
        assert np.array_equal(tr.telescoped[1:], tr.telescoped[:-1] + tr.steps[1:])
        assert verify_lemma1_bound(tr, 3.0).passed
