import math

import numpy as np
import pytest

from denjoylab.blowup import AffineMap, build_ball_system
from denjoylab.errors import (
    IncompleteEvidence,
    NoConvergence,
    NotFound,
    UndefinedAtSample,
)
from denjoylab.trap import (
    TrapParams,
    certify_trap,
    chain_lambda_prime,
    contradiction_report,
    displacement_threshold,
    estimate_lambda_prime,
    find_trap_time,
    interior_grid,
    locate_fixed_point,
    minimality_evidence,
    radius_threshold,
    return_chain,
    sphere_points,
    verify_inclusion,
)

from conftest import DEFAULT_THETA


def test_thresholds():
    assert radius_threshold(2.0, 2.0, 1.0) == pytest.approx(0.25)
    assert displacement_threshold(2.0, 1.0) == pytest.approx(1.5)
    assert TrapParams(lam=3.0, lam_prime=2.0).threshold_factors == (0.5, 2.0)


def test_params_validation():
    with pytest.raises(ValueError, match="lambda must exceed 1"):
        TrapParams(lam=0.5)
    with pytest.raises(ValueError):
        TrapParams(lam_prime=1.0)
    with pytest.raises(ValueError):
        TrapParams(horizon=0)


def test_sampling_helpers():
    for k in (2, 3, 4):
        v = sphere_points(k, 100)
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
    g = interior_grid(2, 9)
    assert np.all(np.linalg.norm(g, axis=1) <= 1.0)
    assert [0.0, 0.0] in g.tolist()


def test_lambda_prime_of_a_similarity_is_lambda():
    g = AffineMap(0.3 * np.eye(2), np.array([0.1, 0.2]))
    x0 = np.array([0.5, 0.5])
    est = estimate_lambda_prime(g, x0, 0.01, g(x0), 0.003, lam=2.0)
    assert est.raw == pytest.approx(2.0, rel=1e-9)
    assert est.value == pytest.approx(2.1, rel=1e-9)


def test_lambda_prime_of_a_shear_exceeds_lambda():
    g = AffineMap(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))
    est = estimate_lambda_prime(g, np.zeros(2), 1.0, np.zeros(2), 1.0, lam=1.0, samples=4096)
    # operator norm of the shear
    assert est.raw == pytest.approx(np.linalg.norm(g.linear, 2), rel=1e-5)


def test_trap_on_default_system(default_system):
    S = default_system
    lp = chain_lambda_prime(S, 2.0, 2000)
    assert lp.raw == pytest.approx(2.0, rel=1e-9)
    params = TrapParams(lam=2.0, lam_prime=lp.value, horizon=2000)
    found = find_trap_time(S, params)
    assert found.alpha_n < found.threshold1
    assert found.displacement < found.threshold2
    # minimality of n
    for n in range(1, found.n):
        an = S.radius(n)
        d = np.linalg.norm(S.center(0) - S.center(n) - np.round(S.center(0) - S.center(n)))
        assert not (an < found.threshold1 and d < found.threshold2)


def test_trap_not_found_for_constant_radii():
    S = build_ball_system(DEFAULT_THETA, 50, c_r=0.001, p=0.0)
    assert S.metadata["shrinks"] == 0
    with pytest.raises(NotFound) as err:
        find_trap_time(S, TrapParams(horizon=50))
    assert err.value.near_miss is not None
    with pytest.raises(ValueError):
        find_trap_time(S, TrapParams(horizon=51))


def test_inclusion_and_fixed_point():
    g = AffineMap(0.1 * np.eye(2), np.array([0.05, 0.0]))
    c = np.zeros(2)
    inc = verify_inclusion(g, c, 1.0, TrapParams(boundary_samples=1000))
    assert inc.verified and inc.worst_margin == pytest.approx(1.0 - 0.15)
    fp = locate_fixed_point(g, c)
    assert np.allclose(fp.point, g.fixed_point(), atol=1e-10)
    assert not fp.damped


def test_inclusion_fails_for_expansion():
    g = AffineMap(2.0 * np.eye(2), np.zeros(2))
    inc = verify_inclusion(g, np.zeros(2), 1.0, TrapParams(boundary_samples=100))
    assert not inc.verified and inc.worst_margin == pytest.approx(-1.0)


def test_damped_iteration_handles_rotation():
    # plain iteration of a rotation by pi never converges; the average does
    g = AffineMap(-np.eye(2), np.array([2.0, 0.0]))
    fp = locate_fixed_point(g, np.zeros(2), max_iter=200)
    assert fp.damped
    assert np.allclose(fp.point, [1.0, 0.0], atol=1e-10)


def test_fixed_point_failures():
    g = AffineMap(np.eye(2), np.array([1.0, 0.0]))
    with pytest.raises(NoConvergence) as err:
        locate_fixed_point(g, np.zeros(2), max_iter=50)
    assert err.value.best_point is not None
    h = AffineMap(0.5 * np.eye(2), np.array([5.0, 0.0]))
    with pytest.raises(NoConvergence):
        locate_fixed_point(h, np.zeros(2), radius=1.0)


def test_undefined_samples_are_reported():
    def g(p):
        from denjoylab.errors import NotInSystem

        raise NotInSystem("outside")

    with pytest.raises(UndefinedAtSample):
        verify_inclusion(g, np.zeros(2), 1.0, TrapParams(boundary_samples=10))


def test_minimality_evidence():
    ev = minimality_evidence(DEFAULT_THETA, 2000)
    assert ev.minimal and ev.period is None and ev.closest_return > 1e-9
    ev = minimality_evidence((0.25, 0.0), 100)
    assert not ev.minimal and ev.period == 4


def test_certificate_and_report(default_system, tmp_path):
    S = default_system
    params = TrapParams(lam=2.0, lam_prime=2.1, horizon=2000, boundary_samples=2000)
    cert = certify_trap(S, params)
    assert cert.valid
    assert np.allclose(cert.fixed_point, cert.closed_form_fixed_point, atol=1e-9)
    G = return_chain(S, cert.n)
    assert np.allclose(G(np.array(cert.fixed_point)), cert.fixed_point, atol=1e-10)
    path = tmp_path / "reports.jsonl"
    cert.append_to(path)
    cert.append_to(path)
    assert len(path.read_text().splitlines()) == 2
    rep = contradiction_report(S, params, cert, minimality_evidence(S.theta, params.horizon))
    assert rep.contradiction
    assert rep.minimality["minimal"] and rep.periodic_point["exists"]
    assert rep.semiconjugacy_residual <= 1e-10
    with pytest.raises(IncompleteEvidence) as err:
        contradiction_report(S, params, None, None)
    assert len(err.value.missing) == 2


def test_no_contradiction_for_rational_translation(default_system):
    S = default_system
    params = TrapParams(lam=2.0, lam_prime=2.1, horizon=2000, boundary_samples=500)
    cert = certify_trap(S, params)
    rep = contradiction_report(S, params, cert, minimality_evidence((0.25, 0.5), 100))
    assert not rep.contradiction
    assert "period 4" in rep.conclusion


def test_threshold_worked_example():
    assert radius_threshold(2.0, 3.0, 0.1) == pytest.approx(1 / 60, abs=1e-15)
    assert displacement_threshold(2.0, 0.1) == pytest.approx(0.15, abs=1e-15)


def test_lambda_prime_of_translation_is_lambda():
    x0 = np.array([0.3, 0.4])
    g = AffineMap(np.eye(2), np.array([0.25, -0.1]))
    est = estimate_lambda_prime(g, x0, 0.05, g(x0), 0.05, lam=1.5)
    assert est.raw == pytest.approx(1.5, rel=1e-12)


def test_inclusion_worked_examples():
    lam, a0 = 2.0, 0.1
    c = np.array([0.5, 0.5])
    params = TrapParams(lam=lam, boundary_samples=1000)
    half = AffineMap(0.5 * np.eye(2), 0.5 * c)
    inc = verify_inclusion(half, c, lam * a0, params)
    assert inc.verified and inc.worst_margin == pytest.approx(lam * a0 / 2)
    shift = AffineMap(np.eye(2), np.array([3 * lam * a0, 0.0]))
    assert not verify_inclusion(shift, c, lam * a0, params).verified
    fp = locate_fixed_point(AffineMap(0.5 * np.eye(2), np.zeros(2)), np.array([0.3, -0.2]))
    assert fp.residual < 1e-10
    # error of a ratio-1/2 contraction is at most residual / (1 - 1/2)
    assert np.linalg.norm(fp.point) <= 2 * fp.residual


def test_certificate_invariants(default_system):
    S = default_system
    params = TrapParams(lam=2.0, lam_prime=2.1, horizon=2000, boundary_samples=500)
    cert = certify_trap(S, params)
    # thresholds recomputed independently
    assert cert.threshold1 == (2.0 - 1.0) * cert.alpha0 / (2.0 * 2.1)
    assert cert.threshold2 == cert.alpha0 + ((2.0 - 1.0) / 2.0) * cert.alpha0
    assert cert.chain_margin >= 0
    G = return_chain(S, cert.n)
    p = np.array(cert.fixed_point)
    assert cert.fixed_point_residual == float(np.linalg.norm(G(p[None, :])[0] - p))
    assert cert.seed == params.seed
