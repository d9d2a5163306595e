import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btinfer import LtiSystem
from btinfer.exceptions import IndefiniteMatrixError, InvalidInputError
from btinfer.inference import (
    MeasurementSet,
    adjoint_data,
    fisher_information,
    full_posterior,
    posterior_covariance,
    sample_schedule,
    simulate_measurements,
)
from btinfer.optimal import (
    forstner_distance,
    oblique_projector,
    olr_mean,
    olru_covariance,
    olru_mean,
    olru_optimal_distance,
    projected_fisher,
    projected_forward_quantities,
    spantini_eigenpairs,
)
from btinfer.prior import CompatiblePrior

from conftest import make_problem
from oracles import forstner_ref, pencil_eig, random_spd


@pytest.fixture(scope="module")
def setup10():
    sys, prior = make_problem(10, k=2, seed=21)
    s = sample_schedule("equispaced", 0.2, 40)
    H = fisher_information(sys, s)
    meas = simulate_measurements(sys, s, np.linspace(-1, 1, 10), seed=5)
    full = full_posterior(prior, sys, meas, H=H)
    return sys, prior, s, H, meas, full, spantini_eigenpairs(H, prior)


def unit_prior():
    return CompatiblePrior.from_covariance([[-1.0]], [[1.0]])


def test_eigenpair_examples():
    prior = CompatiblePrior.from_covariance(-np.eye(3), np.diag([1.0, 2.0, 3.0]))
    pen = spantini_eigenpairs(np.linalg.inv(prior.cov), prior)
    np.testing.assert_allclose(pen.tau_sq, 1.0, rtol=1e-12)
    pen = spantini_eigenpairs(np.zeros((3, 3)), prior)
    np.testing.assert_array_equal(pen.tau_sq, 0)
    assert pen.n_zero == 3


def test_eigenpairs_residual_and_biorthogonality(setup10):
    _, prior, _, H, _, _, pen = setup10
    Gi = np.linalg.inv(prior.cov)
    np.testing.assert_allclose(pen.W_tilde.T @ pen.W, np.eye(10), atol=1e-9)
    np.testing.assert_allclose(pen.W.T @ Gi @ pen.W, np.eye(10), atol=1e-8)
    res = H @ pen.W - Gi @ pen.W * pen.tau_sq
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(H)
    ref, _ = pencil_eig(H, prior.cov)
    live = ref > 1e-10 * ref[0]
    np.testing.assert_allclose(pen.tau_sq[live], ref[live], rtol=1e-7)


def test_olru_covariance_examples(setup10):
    _, prior, _, H, _, full, pen = setup10
    np.testing.assert_allclose(olru_covariance(prior, pen, 0), prior.cov)
    cov_d = olru_covariance(prior, pen, 10)
    assert np.linalg.norm(cov_d - full.cov) <= 1e-8 * np.linalg.norm(full.cov)
    p = unit_prior()
    pen1 = spantini_eigenpairs(np.ones((1, 1)), p)
    assert olru_covariance(p, pen1, 1)[0, 0] == pytest.approx(0.5)
    with pytest.raises(InvalidInputError):
        olru_covariance(prior, pen, 11)


def test_olru_covariance_spd_for_all_ranks(setup10):
    _, prior, _, _, _, _, pen = setup10
    for r in range(11):
        assert np.linalg.eigvalsh(olru_covariance(prior, pen, r))[0] > 0


def test_forstner_examples():
    X = random_spd(4, np.random.default_rng(0))
    assert forstner_distance(X, X) == pytest.approx(0.0, abs=1e-20)
    assert forstner_distance(np.diag([np.e**2, 1.0]), np.eye(2)) == pytest.approx(4.0, rel=1e-14)
    with pytest.raises(IndefiniteMatrixError):
        forstner_distance(np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(IndefiniteMatrixError):
        forstner_distance(np.eye(2), np.diag([1.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_forstner_symmetry_inverse_and_similarity(seed):
    rng = np.random.default_rng(seed)
    A = random_spd(10, rng, cond=50.0)
    B = random_spd(10, rng, cond=50.0)
    d = forstner_distance(A, B)
    assert d == pytest.approx(forstner_ref(A, B), rel=1e-8)
    assert forstner_distance(B, A) == pytest.approx(d, rel=1e-8)
    assert forstner_distance(np.linalg.inv(A), np.linalg.inv(B)) == pytest.approx(d, rel=1e-8)
    S = rng.standard_normal((10, 10)) + 3 * np.eye(10)
    assert forstner_distance(S @ A @ S.T, S @ B @ S.T) == pytest.approx(d, rel=1e-8)


def test_optimal_distance_examples(setup10):
    *_, pen = setup10
    assert olru_optimal_distance(pen, 10) == 0.0
    p = unit_prior()
    pen1 = spantini_eigenpairs(np.ones((1, 1)), p)
    assert olru_optimal_distance(pen1, 0) == pytest.approx(np.log(0.5) ** 2, rel=1e-14)
    assert olru_optimal_distance(pen1, 0) == pytest.approx(0.48045, abs=1e-5)


def test_optimal_distance_matches_direct_evaluation(setup10):
    _, prior, _, _, _, full, pen = setup10
    for r in range(11):
        direct = forstner_distance(full.cov, olru_covariance(prior, pen, r))
        closed = olru_optimal_distance(pen, r)
        assert abs(direct - closed) <= 1e-7 * max(closed, 1e-8)


@pytest.mark.parametrize("r", [1, 3, 5])
def test_olru_beats_random_low_rank_updates(setup10, r):
    _, prior, _, _, _, full, pen = setup10
    rng = np.random.default_rng(r)
    best = olru_optimal_distance(pen, r)
    R = prior.factor.factor
    for _ in range(50):
        # K = R V with ||V|| < 1 keeps Gamma - K K^T strictly positive definite
        V = rng.standard_normal((10, r))
        V *= rng.uniform(0.05, 0.95) / np.linalg.norm(V, 2)
        K = R @ V
        cand = prior.cov - K @ K.T
        assert np.linalg.eigvalsh(cand)[0] > 0
        assert forstner_distance(full.cov, cand) >= best - 1e-8


def test_projected_fisher_limits_and_sandwich_identity(setup10):
    _, prior, _, H, _, _, pen = setup10
    np.testing.assert_allclose(projected_fisher(pen, H, 10), H, rtol=1e-8,
                               atol=1e-8 * np.linalg.norm(H))
    np.testing.assert_array_equal(projected_fisher(pen, H, 0), 0)
    for r in range(11):
        H_hat = projected_fisher(pen, H, r)
        cov = posterior_covariance(prior.factor, H_hat)
        ref = olru_covariance(prior, pen, r)
        assert np.linalg.norm(cov - ref) <= 1e-8 * np.linalg.norm(ref)


def test_projector_is_idempotent(setup10):
    *_, pen = setup10
    P = oblique_projector(pen, 4)
    np.testing.assert_allclose(P @ P, P, atol=1e-9 * np.linalg.norm(P))


def test_mean_examples(setup10):
    sys, prior, s, H, meas, full, pen = setup10
    for fn in (olr_mean, olru_mean):
        mu = fn(pen, sys, s, meas, 10)
        assert np.linalg.norm(mu - full.mean) <= 1e-8 * np.linalg.norm(full.mean)
    zero = MeasurementSet(s, np.zeros_like(meas.values))
    np.testing.assert_array_equal(olr_mean(pen, sys, s, zero, 3), 0)
    g = adjoint_data(sys, s, meas.values)
    np.testing.assert_allclose(olru_mean(pen, sys, s, meas, 0), prior.cov @ g, rtol=1e-12)


def test_scalar_olr_mean_equals_posterior_mean():
    sys = LtiSystem([[-1.0]], [[1.0]], [[1.0]])
    prior = unit_prior()
    s = sample_schedule("explicit", times=[1.0])
    meas = MeasurementSet(s, [[2.0]])
    H = fisher_information(sys, s)
    pen = spantini_eigenpairs(H, prior)
    full = full_posterior(prior, sys, meas, H=H)
    assert olr_mean(pen, sys, s, meas, 1)[0] == pytest.approx(full.mean[0], rel=1e-12)


def test_olr_olru_difference_identity(setup10):
    sys, prior, s, H, meas, _, pen = setup10
    g = adjoint_data(sys, s, meas.values)
    for r in (2, 5, 7):
        H_hat, apply_adj = projected_forward_quantities(pen, sys, s, r, H)
        cov = olru_covariance(prior, pen, r)
        diff = olru_mean(pen, sys, s, meas, r) - olr_mean(pen, sys, s, meas, r)
        ref = cov @ (g - apply_adj(meas.values))
        assert np.linalg.norm(diff - ref) <= 1e-9 * max(np.linalg.norm(ref), 1.0)
        np.testing.assert_allclose(H_hat, projected_fisher(pen, H, r))


def test_tie_at_boundary_warns():
    prior = CompatiblePrior.from_covariance(-np.eye(3), np.eye(3))
    pen = spantini_eigenpairs(np.diag([2.0, 1.0, 1.0]), prior)
    with pytest.warns(RuntimeWarning):
        olru_covariance(prior, pen, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        olru_covariance(prior, pen, 1)
        # numerically zero pairs never trigger the warning
        pen0 = spantini_eigenpairs(np.diag([1.0, 0.0, 0.0]), prior)
        olru_covariance(prior, pen0, 2)
