import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from btinfer import LtiSystem
from btinfer.exceptions import EmptyMeasurementsError, InvalidInputError
from btinfer.inference import (
    MeasurementSet,
    ObservationSchedule,
    adjoint_data,
    fisher_information,
    full_posterior,
    posterior_covariance,
    sample_schedule,
    simulate_measurements,
)
from btinfer.prior import CompatiblePrior

from conftest import make_problem, make_system
from oracles import dense_posterior, fisher_direct, stacked_forward


def scalar():
    return LtiSystem([[-1.0]], [[1.0]], [[1.0]])


def test_schedule_examples():
    s = sample_schedule("equispaced", 0.1, 3)
    np.testing.assert_array_equal(s.times, [0.1, 0.2, 0.30000000000000004])
    s = sample_schedule("uniform_subinterval", 1.0, 2, seed=5)
    assert 0 < s.times[0] < 1 < s.times[1] < 2
    s = sample_schedule("explicit", times=[0.5, 1.5])
    assert s.n == 2


def test_poisson_mean_gap():
    s = sample_schedule("poisson", 1.0, 10_000, seed=7)
    gaps = np.diff(np.concatenate([[0.0], s.times]))
    assert np.all(gaps > 0)
    assert abs(gaps.mean() - 1.0) <= 3 * gaps.std(ddof=1) / np.sqrt(gaps.size)


@pytest.mark.parametrize("kind", ["equispaced", "uniform_subinterval", "poisson"])
def test_schedule_deterministic_and_sorted(kind):
    a = sample_schedule(kind, 0.3, 50, seed=9)
    b = sample_schedule(kind, 0.3, 50, seed=9)
    np.testing.assert_array_equal(a.times, b.times)
    assert np.all(np.diff(a.times) > 0)


def test_schedule_rejects_bad_input():
    for h, n in ((0.0, 3), (-1.0, 3), (0.1, 0)):
        with pytest.raises(InvalidInputError):
            sample_schedule("equispaced", h, n)
    with pytest.raises(InvalidInputError):
        sample_schedule("lattice", 0.1, 3)
    with pytest.raises(InvalidInputError):
        sample_schedule("explicit", times=[1.0, 0.5])


def test_simulate_examples():
    s = sample_schedule("explicit", times=[1.0])
    m = simulate_measurements(scalar(), s, [1.0], seed=0, noise=False)
    assert m.values[0, 0] == pytest.approx(np.exp(-1.0), rel=1e-14)
    sys = make_system(5, k=2, seed=1)
    s = sample_schedule("poisson", 0.4, 30, seed=2)
    x0 = np.arange(5.0)
    m = simulate_measurements(sys, s, x0, seed=0, noise=False)
    ref = stacked_forward(sys.A, sys.C, s.times) @ x0
    np.testing.assert_allclose(m.values.ravel(), ref, rtol=1e-10, atol=1e-12)
    with pytest.raises(InvalidInputError):
        simulate_measurements(sys, s, np.zeros(4), seed=0)


def test_simulate_pure_noise_covariance():
    sys = make_system(3, k=2, seed=4)
    s = sample_schedule("equispaced", 0.1, 20_000)
    m = simulate_measurements(sys, s, np.zeros(3), seed=13)
    emp = np.cov(m.values.T)
    # entrywise standard error of a sample covariance: sqrt((s_ii s_jj + s_ij^2) / N)
    N = sys.noise_cov
    se = np.sqrt((np.outer(np.diag(N), np.diag(N)) + N**2) / s.n)
    assert np.all(np.abs(emp - N) <= 4 * se)


def test_simulate_seed_is_reproducible():
    sys = make_system(3, k=2, seed=4)
    s = sample_schedule("equispaced", 0.1, 10)
    a = simulate_measurements(sys, s, np.ones(3), seed=21)
    b = simulate_measurements(sys, s, np.ones(3), seed=21)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.seed == 21


def test_fisher_scalar_examples():
    sys = scalar()
    H = fisher_information(sys, sample_schedule("explicit", times=[1.0]))
    assert H[0, 0] == pytest.approx(np.exp(-2.0), rel=1e-14)
    for mode in ("direct", "doubling"):
        H = fisher_information(sys, sample_schedule("equispaced", 1.0, 2), mode)
        assert H[0, 0] == pytest.approx(np.exp(-2.0) + np.exp(-4.0), rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 7, 64, 1000, 1001])
def test_doubling_matches_direct(n):
    sys = make_system(10, k=2, seed=5)
    s = sample_schedule("equispaced", 0.05, n)
    direct = fisher_information(sys, s, "direct")
    doubled = fisher_information(sys, s, "doubling")
    assert np.linalg.norm(doubled - direct) <= 1e-9 * np.linalg.norm(direct)


def test_fisher_matches_stacked_oracle():
    sys = make_system(6, k=3, seed=8)
    for s in (sample_schedule("equispaced", 0.2, 15),
              sample_schedule("poisson", 0.3, 12, seed=1),
              sample_schedule("uniform_subinterval", 0.25, 10, seed=2)):
        ref = fisher_direct(sys.A, sys.C, sys.noise_cov, s.times)
        H = fisher_information(sys, s)
        assert np.linalg.norm(H - ref) <= 1e-10 * np.linalg.norm(ref)


def test_fisher_mode_errors():
    sys = scalar()
    with pytest.raises(InvalidInputError):
        fisher_information(sys, sample_schedule("poisson", 1.0, 3, seed=0), "doubling")
    with pytest.raises(InvalidInputError):
        fisher_information(sys, sample_schedule("equispaced", 1.0, 3), "fast")
    empty = ObservationSchedule("explicit", np.zeros(0), 1.0, 0)
    with pytest.raises(EmptyMeasurementsError):
        fisher_information(sys, empty)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30), extra=st.integers(1, 10))
def test_fisher_symmetric_psd_and_monotone(seed, n, extra):
    sys = make_system(5, k=2, seed=seed)
    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(0.01, 5.0, n + extra))
    times = np.unique(times)
    sub = np.sort(rng.choice(times, size=min(n, times.size), replace=False))
    H_all = fisher_information(sys, sample_schedule("explicit", times=times))
    H_sub = fisher_information(sys, sample_schedule("explicit", times=sub))
    scale = np.linalg.norm(H_all)
    np.testing.assert_array_equal(H_all, H_all.T)
    assert np.linalg.eigvalsh(H_all)[0] >= -1e-10 * scale
    assert np.linalg.eigvalsh(H_all - H_sub)[0] >= -1e-10 * scale


def test_adjoint_matches_stacked_transpose():
    sys = make_system(7, k=2, seed=3)
    for s in (sample_schedule("equispaced", 0.1, 700), sample_schedule("poisson", 0.2, 40, seed=4)):
        m = np.random.default_rng(0).standard_normal((s.n, 2))
        G = stacked_forward(sys.A, sys.C, s.times)
        Ginv = np.kron(np.eye(s.n), np.linalg.inv(sys.noise_cov))
        ref = G.T @ Ginv @ m.ravel()
        g = adjoint_data(sys, s, m)
        assert np.linalg.norm(g - ref) <= 1e-9 * np.linalg.norm(ref)


def test_posterior_examples():
    prior = CompatiblePrior.from_covariance([[-1.0]], [[1.0]])
    cov = posterior_covariance(prior.factor, np.zeros((1, 1)))
    assert cov[0, 0] == pytest.approx(1.0)
    cov = posterior_covariance(prior.factor, np.ones((1, 1)))
    assert cov[0, 0] == pytest.approx(0.5)
    assert (cov @ np.ones(1))[0] == pytest.approx(0.5)


def test_posterior_matches_naive_formula():
    sys, prior = make_problem(8, k=2, seed=11, margin=0.5)
    s = sample_schedule("equispaced", 0.3, 20)
    x0 = np.random.default_rng(1).standard_normal(8)
    meas = simulate_measurements(sys, s, x0, seed=2)
    post = full_posterior(prior, sys, meas)
    mean_ref, cov_ref = dense_posterior(sys.A, sys.C, sys.noise_cov, prior.cov, s.times,
                                        meas.values)
    assert np.linalg.norm(post.cov - cov_ref) <= 1e-8 * np.linalg.norm(cov_ref)
    assert np.linalg.norm(post.mean - mean_ref) <= 1e-8 * np.linalg.norm(mean_ref)
    diff = post.cov - prior.cov
    assert np.linalg.eigvalsh(diff)[-1] <= 1e-10 * np.linalg.norm(prior.cov)
    assert np.linalg.eigvalsh(post.cov)[0] > 0


def test_posterior_rejects_dimension_mismatch(small_problem):
    sys, _ = small_problem
    prior = CompatiblePrior.from_covariance(-np.eye(3), np.eye(3))
    meas = simulate_measurements(sys, sample_schedule("equispaced", 0.1, 3), np.zeros(6), 0)
    with pytest.raises(InvalidInputError):
        full_posterior(prior, sys, meas)


def test_measurement_csv_round_trip(tmp_path):
    sys = make_system(4, k=3, seed=2)
    for s in (sample_schedule("equispaced", 0.1, 5), sample_schedule("poisson", 0.5, 6, seed=8)):
        m = simulate_measurements(sys, s, np.ones(4), seed=17)
        path = tmp_path / f"{s.kind}.csv"
        m.write_csv(path)
        assert path.read_text().splitlines()[0] == "time,y_1,y_2,y_3"
        back = MeasurementSet.read_csv(path)
        np.testing.assert_array_equal(back.values, m.values)
        np.testing.assert_array_equal(back.schedule.times, s.times)
        np.testing.assert_array_equal(back.truth, m.truth)
        assert back.schedule.kind == s.kind and back.seed == 17


def test_measurement_csv_errors(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("time,y_1\n")
    with pytest.raises(EmptyMeasurementsError):
        MeasurementSet.read_csv(p)
    p.write_text("t,y\n1,2\n")
    with pytest.raises(InvalidInputError):
        MeasurementSet.read_csv(p)
    p.write_text("time,y_1\n1,abc\n")
    with pytest.raises(InvalidInputError):
        MeasurementSet.read_csv(p)


def test_measurement_count_must_match():
    s = sample_schedule("equispaced", 0.1, 3)
    with pytest.raises(InvalidInputError):
        MeasurementSet(s, np.zeros((2, 1)))
