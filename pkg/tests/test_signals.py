import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsqphase.signals import (
    ComplexSignal,
    DimensionError,
    UndefinedReferenceError,
    complex_gaussian,
    dist_to_solution_set,
    real_inner,
    relative_error,
    success,
)


def test_real_inner_examples():
    assert real_inner([1], [1j]) == 0.0
    assert real_inner([1 + 1j], [1 + 1j]) == pytest.approx(2.0)
    assert real_inner([2, 1j], [1, 3j]) == pytest.approx(5.0)


def test_real_inner_length_mismatch():
    with pytest.raises(DimensionError):
        real_inner([1, 2], [1])


def test_real_inner_symmetric_and_real_bilinear():
    rng = np.random.default_rng(0)
    u, v, w = (complex_gaussian(rng, 7) for _ in range(3))
    assert real_inner(u, v) == pytest.approx(real_inner(v, u))
    assert real_inner(2.5 * u - w, v) == pytest.approx(2.5 * real_inner(u, v) - real_inner(w, v))
    assert real_inner(u, u) == pytest.approx(np.linalg.norm(u) ** 2, rel=1e-15)


def test_dist_identity_and_phase():
    rng = np.random.default_rng(1)
    x = complex_gaussian(rng, 6)
    assert dist_to_solution_set(x, x).distance == 0
    res = dist_to_solution_set(np.exp(0.7j) * x, x)
    assert res.distance < 1e-12
    assert res.relative_error < 1e-12
    assert abs(res.phase - np.exp(0.7j)) < 1e-12


def test_dist_orthogonal_signals_uses_unit_phase():
    res = dist_to_solution_set(np.array([0, 1], complex), np.array([1, 0], complex))
    assert res.phase == 1
    # brute-force grid over the phase agrees
    grid = min(np.linalg.norm(np.array([0, 1]) - np.exp(1j * p) * np.array([1, 0]))
               for p in np.linspace(0, 2 * np.pi, 361))
    assert res.distance == pytest.approx(np.sqrt(2))
    assert grid == pytest.approx(np.sqrt(2))


def test_alignment_is_optimal_over_phase_grid():
    rng = np.random.default_rng(2)
    phis = np.linspace(0, 2 * np.pi, 360, endpoint=False)
    for _ in range(64):
        x, z = complex_gaussian(rng, 8), complex_gaussian(rng, 8)
        res = dist_to_solution_set(z, x)
        assert abs(abs(res.phase) - 1) < 1e-12
        worst = min(np.linalg.norm(z - np.exp(1j * p) * x) for p in phis)
        assert res.distance <= worst + 1e-12
        assert res.relative_error == pytest.approx(res.distance / np.linalg.norm(x))


def test_real_mode_sign_ambiguity():
    x = np.array([1.0, -2.0, 0.5])
    res = dist_to_solution_set(-x, x, mode="real")
    assert res.distance == 0 and res.phase == -1
    assert success(-x, x, mode="real")


def test_success_is_strict():
    x = np.array([1.0, 0.0])
    assert success(x + [1e-6, 0], x)
    assert not success(x + [1e-5, 0], x, threshold=1e-5)
    with pytest.raises(ValueError):
        success(x, x, threshold=0)


def test_relative_error_undefined_for_zero_reference():
    with pytest.raises(UndefinedReferenceError):
        relative_error(np.ones(3), np.zeros(3))
    with pytest.raises(UndefinedReferenceError):
        success(np.ones(3), np.zeros(3))


def test_complex_signal_invariants():
    s = ComplexSignal.from_array(np.arange(6).reshape(2, 3) + 1j)
    assert s.shape == (2, 3) and s.n == 6 and len(s) == 6
    assert s.image().shape == (2, 3)
    with pytest.raises(DimensionError):
        ComplexSignal(np.ones(5), (2, 3))
    with pytest.raises(ValueError):
        ComplexSignal(np.array([1 + 1j]), (1,), real=True)
    r = ComplexSignal.from_array([1.0, 2.0], real=True)
    assert r.data.dtype == float
    with pytest.raises(ValueError):
        r.data[0] = 3.0


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi))
def test_distance_is_phase_invariant(seed, theta):
    rng = np.random.default_rng(seed)
    x, z = complex_gaussian(rng, 5), complex_gaussian(rng, 5)
    d0 = dist_to_solution_set(z, x).distance
    assert dist_to_solution_set(np.exp(1j * theta) * z, x).distance == pytest.approx(d0, abs=1e-10)
    assert dist_to_solution_set(z, np.exp(1j * theta) * x).distance == pytest.approx(d0, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=8))
def test_real_inner_self_is_squared_norm(pairs):
    u = np.array([a + 1j * b for a, b in pairs])
    assert real_inner(u, u) == pytest.approx(float(np.sum(np.abs(u) ** 2)), rel=1e-12, abs=1e-300)
