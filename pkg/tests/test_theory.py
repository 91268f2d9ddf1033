import numpy as np
import pytest

from lsqphase import theory
from lsqphase.measurement import GaussianEnsemble
from lsqphase.objective import expected_hessian
from lsqphase.signals import complex_gaussian


def test_spectrum_small_examples():
    x = np.array([1.0, 0.0], complex)
    rep = theory.check_hessian_spectrum(x)
    np.testing.assert_allclose(rep.eigenvalues, [0, 1, 1, 4], atol=1e-12)
    assert rep.passed
    r = theory.check_hessian_spectrum(np.array([2.0, 0.0, 0.0]), "real")
    np.testing.assert_allclose(r.eigenvalues, [4, 4, 16], atol=1e-12)


@pytest.mark.parametrize("n", [2, 8, 32])
def test_spectrum_random_signals(n):
    rng = np.random.default_rng(n)
    x = complex_gaussian(rng, n)
    rep = theory.check_hessian_spectrum(x)
    assert rep.passed
    assert rep.rayleigh_top == pytest.approx(4 * rep.norm_x_sq, rel=1e-12)
    assert theory.check_hessian_spectrum(x.real, "real").passed


def test_spectrum_size_guard():
    with pytest.raises(ValueError):
        theory.check_hessian_spectrum(np.ones(257))


def test_concentration_at_solution_is_exact():
    x = complex_gaussian(np.random.default_rng(0), 8)
    rep = theory.measure_gradient_concentration(x, x, [40, 80], trials=3)
    assert rep.absolute
    assert np.all(rep.deviations < 1e-10)
    assert "solution set" in rep.note


def test_concentration_shrinks_with_m():
    rng = np.random.default_rng(1)
    n = 16
    x = complex_gaussian(rng, n)
    z = x + 0.5 * complex_gaussian(rng, n)
    rep = theory.measure_gradient_concentration(x, z, [5 * n, 50 * n], trials=20, seed=3)
    assert not rep.absolute
    assert np.all(rep.delta_hat >= 0)
    assert rep.paired_decrease_fraction() >= 0.95
    assert rep.delta_hat[1] < rep.delta_hat[0]


def test_angle_bound_closed_form_on_ray():
    x = complex_gaussian(np.random.default_rng(2), 16)
    ens = GaussianEnsemble.sample(16, 160, seed=0)
    rep = theory.check_angle_bound(x, [2 * x, x], ens)
    assert rep.skipped == 1
    assert rep.expected_cosines[0] == pytest.approx(1.0, abs=1e-12)


def test_angle_bound_random_points():
    rng = np.random.default_rng(3)
    n = 32
    x = complex_gaussian(rng, n)
    ens = GaussianEnsemble.sample(n, 10 * n, seed=4)
    rep = theory.check_angle_bound(x, theory.sample_near(x, 200, np.linalg.norm(x), rng), ens)
    assert rep.passed and rep.min_cosine >= 0.5
    assert 0 <= rep.implied_delta < 2
    assert np.all(rep.distances <= np.linalg.norm(x) + 1e-9)
    with pytest.raises(ValueError):
        theory.check_angle_bound(x, [x], GaussianEnsemble.sample(n, 6 * n, seed=0))


def test_convexity_at_origin_of_ray():
    x = np.random.default_rng(5).standard_normal(6)
    H = expected_hessian(x, x, "real")
    assert np.linalg.eigvalsh(H)[0] == pytest.approx(x @ x)


def test_worst_direction_keeps_expected_hessian_psd():
    x = np.random.default_rng(6).standard_normal(10)
    r = np.linalg.norm(x)
    val = theory.worst_direction_min_eig(x, r / 12)
    assert val >= 0
    # the search should do at least as well as the obvious shrinking ray
    shrink = np.linalg.eigvalsh(expected_hessian(x - r / 12 * x / r, x, "real"))[0]
    assert val <= shrink + 1e-12


def test_local_convexity_scan():
    x = np.random.default_rng(7).standard_normal(16)
    rep = theory.scan_local_convexity(x, w_samples=200, empirical_samples=500, seed=1)
    assert rep.expectation_min >= -1e-10
    assert rep.violation_fraction <= 0.01
    assert rep.passed
    assert rep.empirical_t.max() <= np.linalg.norm(x) / 24
    with pytest.raises(ValueError):
        theory.scan_local_convexity(x + 1j)


def test_moment_identities():
    rep = theory.check_gaussian_moments(200_000, seed=2)
    assert rep.passed
    assert rep.expected[0] == 1 and rep.expected[1] == 2
    u = np.array([1, 1j, 0, 0]) / np.sqrt(2)
    same = theory.check_gaussian_moments(50_000, u=u, v=u, seed=3)
    assert same.expected[4] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        theory.check_gaussian_moments(10, u=np.ones(4), v=u)


def test_expected_gradient_monte_carlo():
    rng = np.random.default_rng(8)
    x, z = complex_gaussian(rng, 4), complex_gaussian(rng, 4)
    rep = theory.check_expected_gradient(x, z, rows=100_000, seed=1)
    assert rep.passed
    assert rep.z_scores.shape == (2, 4)


def test_reports_serialize():
    rep = theory.check_hessian_spectrum(np.array([1.0, 1j]))
    text = rep.to_csv()
    assert text.splitlines()[0] == ",".join(rep.columns)
    assert len(text.splitlines()) == 5
    assert "PASS" in rep.summary()
    mom = theory.check_gaussian_moments(1000, seed=0)
    assert len(mom.to_csv().splitlines()) == 6
