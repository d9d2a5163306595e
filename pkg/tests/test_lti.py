import numpy as np
import pytest
import scipy.linalg as sla

from btinfer.exceptions import InvalidInputError, UnstableSystemError
from btinfer.lti import (
    LtiSystem,
    build_forward_map,
    equispaced_step,
    noisy_observability_factor,
    noisy_observability_gramian,
    reachability_gramian,
    time_limited_fisher_gramian,
)
from btinfer.linalg import spectral_abscissa

from conftest import make_system
from oracles import gramian_quad, random_stable


def scalar(a=-1.0, c=1.0, gamma=1.0, b=None):
    return LtiSystem([[a]], [[c]], [[gamma]], None if b is None else [[b]])


def test_system_validation():
    with pytest.raises(InvalidInputError):
        LtiSystem(np.eye(2), np.ones((1, 3)), [[1.0]])
    with pytest.raises(InvalidInputError):
        LtiSystem(np.eye(2), np.ones((1, 2)), [[-1.0]])
    with pytest.raises(InvalidInputError):
        LtiSystem(np.eye(2), np.ones((1, 2)), [[1.0]], np.ones((3, 1)))
    with pytest.raises(InvalidInputError):
        LtiSystem(np.ones((2, 3)), np.ones((1, 3)), [[1.0]])
    with pytest.raises(InvalidInputError):
        LtiSystem([[np.inf]], [[1.0]], [[1.0]])


def test_whitening_reproduces_noise_precision(rng):
    sys = make_system(5, k=3, seed=1)
    Cw = sys.C_white
    np.testing.assert_allclose(Cw.T @ Cw, sys.C.T @ np.linalg.solve(sys.noise_cov, sys.C),
                               rtol=1e-10, atol=1e-12)


def test_spectral_abscissa_examples():
    assert spectral_abscissa(np.diag([-1.0, -2.0])) == -1.0
    assert spectral_abscissa(np.array([[-1.0, 3.0], [0.0, -2.0]])) == pytest.approx(-1.0)


def test_reachability_gramian_examples():
    sys = LtiSystem(-np.eye(2), np.ones((1, 2)), [[1.0]], np.eye(2))
    np.testing.assert_allclose(reachability_gramian(sys), np.eye(2) / 2)
    sys = scalar(b=np.sqrt(2.0))
    assert reachability_gramian(sys)[0, 0] == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        reachability_gramian(scalar())


def test_noisy_observability_examples():
    assert noisy_observability_gramian(scalar())[0, 0] == pytest.approx(0.5)
    assert noisy_observability_gramian(scalar(gamma=4.0))[0, 0] == pytest.approx(1.0 / 8.0)
    F = noisy_observability_factor(scalar(gamma=4.0))
    assert F.gramian()[0, 0] == pytest.approx(1.0 / 8.0)


def test_gramians_reject_unstable():
    with pytest.raises(UnstableSystemError):
        noisy_observability_gramian(scalar(a=0.5))


@pytest.mark.parametrize("d", [8, 30])
def test_gramians_match_quadrature(d):
    rng = np.random.default_rng(d)
    A = random_stable(d, rng, margin=0.5)
    B = rng.standard_normal((d, 2))
    C = rng.standard_normal((2, d))
    N = np.diag([0.5, 2.0])
    sys = LtiSystem(A, C, N, B)
    T = 40.0 / abs(spectral_abscissa(A))
    P = reachability_gramian(sys)
    np.testing.assert_allclose(P, gramian_quad(A, B @ B.T, T), rtol=1e-6,
                               atol=1e-6 * np.linalg.norm(P))
    Q = noisy_observability_gramian(sys)
    W = C.T @ np.linalg.solve(N, C)
    np.testing.assert_allclose(Q, gramian_quad(A.T, W, T), rtol=1e-6,
                               atol=1e-6 * np.linalg.norm(Q))
    for G, M in ((P, B @ B.T), (Q, W)):
        lam = np.linalg.eigvalsh(G)
        assert lam[0] >= -1e-10 * lam[-1]
    assert np.linalg.norm(A @ P + P @ A.T + B @ B.T) <= 1e-10 * np.linalg.norm(B @ B.T)
    assert np.linalg.norm(A.T @ Q + Q @ A + W) <= 1e-10 * np.linalg.norm(W)


def test_time_limited_gramian_examples():
    sys = scalar()
    val = time_limited_fisher_gramian(sys, 0.0, 1.0)[0, 0]
    assert val == pytest.approx((1 - np.exp(-2.0)) / 2, rel=1e-12)
    with pytest.raises(InvalidInputError):
        time_limited_fisher_gramian(sys, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        time_limited_fisher_gramian(sys, -1.0, 1.0)


def test_time_limited_gramian_long_horizon_and_monotone():
    sys = make_system(6, seed=2, margin=0.3)
    Q = noisy_observability_gramian(sys)
    T = 60.0 / abs(sys.spectral_abscissa())
    np.testing.assert_allclose(time_limited_fisher_gramian(sys, 0.0, T, Q), Q, rtol=1e-6,
                               atol=1e-6 * np.linalg.norm(Q))
    G1 = time_limited_fisher_gramian(sys, 0.0, 1.0, Q)
    G2 = time_limited_fisher_gramian(sys, 0.0, 3.0, Q)
    assert np.linalg.eigvalsh(G2 - G1)[0] >= -1e-10 * np.linalg.norm(G2)


def test_time_limited_gramian_matches_quadrature():
    sys = make_system(4, seed=9)
    W = sys.C_white.T @ sys.C_white
    f = lambda t: sla.expm(sys.A.T * t) @ W @ sla.expm(sys.A * t)
    from scipy.integrate import quad_vec
    ref, _ = quad_vec(f, 0.5, 2.5, epsabs=1e-13, epsrel=1e-12)
    np.testing.assert_allclose(time_limited_fisher_gramian(sys, 0.5, 2.5), ref, rtol=1e-9,
                               atol=1e-12)


def test_forward_map_examples():
    sys = scalar()
    fm = build_forward_map(sys, [1.0, 2.0])
    np.testing.assert_allclose(fm.blocks[:, 0, 0], [np.exp(-1), np.exp(-2)], rtol=1e-14)
    assert fm.matrix().shape == (2, 1)
    sys = make_system(5, k=2, seed=4)
    fm = build_forward_map(sys, [0.3])
    np.testing.assert_allclose(fm.blocks[0], sys.C @ sla.expm(0.3 * sys.A), rtol=1e-12)


@pytest.mark.parametrize("times", [np.arange(1, 6) * 0.2, np.array([0.1, 0.25, 0.7, 1.3, 2.0]),
                                   np.arange(1, 101) * 0.05])
def test_forward_map_matches_direct_exponentials(times):
    sys = make_system(10, k=2, seed=6)
    fm = build_forward_map(sys, times)
    for t, blk in zip(times, fm.blocks):
        ref = sys.C @ sla.expm(sys.A * t)
        assert np.linalg.norm(blk - ref) <= 1e-9 * np.linalg.norm(ref)


def test_forward_map_rejects_bad_times():
    sys = scalar()
    for bad in ([], [0.0, 1.0], [2.0, 1.0], [1.0, 1.0]):
        with pytest.raises(InvalidInputError):
            build_forward_map(sys, bad)


def test_equispaced_detection():
    assert equispaced_step(np.arange(1, 11) * 0.1) == pytest.approx(0.1)
    assert equispaced_step(np.array([0.1, 0.3])) is None


def test_replace_revalidates():
    sys = scalar()
    assert sys.replace(noise_cov=[[4.0]]).noise_cov[0, 0] == 4.0
    with pytest.raises(InvalidInputError):
        sys.replace(C=np.ones((1, 2)))
