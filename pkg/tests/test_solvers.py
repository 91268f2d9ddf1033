import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from lsqphase.linesearch import LineSearchWarning, NotDescentDirection, wolfe_line_search
from lsqphase.measurement import CDPEnsemble, GaussianEnsemble, measure_intensity
from lsqphase.objective import Objective
from lsqphase.signals import complex_gaussian, real_inner
from lsqphase.solvers import (
    TRACE_COLUMNS,
    InvalidInitialization,
    LbfgsMemory,
    SolverConfig,
    ZeroGradient,
    ap_step,
    cubic_step_root,
    gd_theorem_step,
    lbfgs_direction,
    ncg_direction,
    phase_of,
    run,
)


class _Quadratic:
    """f(z) = 1/2 z^T Q z - b^T z with lazy f/g, for line-search and direction tests."""

    def __init__(self, Q, b=None):
        self.Q = np.asarray(Q, float)
        self.b = np.zeros(len(Q)) if b is None else np.asarray(b, float)

    def __call__(self, z):
        q = self

        class Point:
            def __init__(self, z):
                self.z = z

            @property
            def f(self):
                return 0.5 * self.z @ q.Q @ self.z - q.b @ self.z

            @property
            def g(self):
                return q.Q @ self.z - q.b

        return Point(np.asarray(z, float))


def _instance(n=32, ratio=7, seed=0, kind="gaussian", mode="complex", L=6):
    rng = np.random.default_rng(seed)
    x = complex_gaussian(rng, n)
    if mode == "real":
        x = x.real
    ens = GaussianEnsemble.sample(n, ratio * n, seed=rng) if kind == "gaussian" else \
        CDPEnsemble.sample(n, L, seed=rng)
    return Objective(ens, measure_intensity(ens, x), mode=mode), x, rng


# -- theorem step --------------------------------------------------------------------

def test_cubic_root_example():
    t = cubic_step_root(13.2, 1.0, 0.2)
    assert t == pytest.approx(1.0, abs=1e-12)
    p = 2.2 * t * (t * t + 3 * t + 2)
    assert abs(p - 13.2) <= 1e-10 * 13.2


@pytest.mark.parametrize("g,r", [(1e-9, 1.0), (0.3, 5.0), (1e6, 0.1), (5.0, 0.0)])
def test_cubic_root_solves_polynomial(g, r):
    t = cubic_step_root(g, r, 0.2)
    assert t > 0
    assert abs(2.2 * t * (t * t + 3 * t * r + 2 * r * r) - g) <= 1e-10 * g


def test_cubic_root_vanishes_with_gradient():
    assert cubic_step_root(0.0, 1.0) == 0.0
    assert cubic_step_root(1e-14, 1.0) < 1e-14


def test_gd_theorem_step_is_a_normalized_gradient_move():
    z = np.array([1.0 + 1j, 2.0])
    g = np.array([3.0, 4.0j])
    alpha, z_new = gd_theorem_step(z, g, 1.0, 0.2)
    t1 = cubic_step_root(5.0, 1.0, 0.2)
    assert alpha == pytest.approx(math.sqrt(1 - 0.01) * t1)
    np.testing.assert_allclose(z_new, z - alpha * g / 5.0)
    with pytest.raises(ZeroGradient):
        gd_theorem_step(z, np.zeros(2), 1.0)


def test_gd_theorem_strict_distance_descent():
    obj, x, rng = _instance(32, 16, seed=1)
    _, trace = run(obj, SolverConfig(algorithm="gd_theorem", max_iters=1000), complex_gaussian(rng, 32))
    assert trace.termination_reason == "success_threshold"
    assert np.all(np.diff(trace.column("dist")) < 0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(wolfe_c1=0.9, wolfe_c2=0.1)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="gd_theorem", delta=0.5)
    with pytest.raises(ValueError):
        SolverConfig(algorithm="newton")
    with pytest.raises(ValueError):
        SolverConfig(lbfgs_pairs=0)
    assert SolverConfig().wolfe_c1 == 1e-4 and SolverConfig().wolfe_c2 == 0.9
    assert SolverConfig().max_iters == 600 and SolverConfig().lbfgs_pairs == 2


# -- line search -------------------------------------------------------------------

def test_wolfe_on_squared_norm():
    q = _Quadratic(2 * np.eye(1))   # f = z^2
    z = np.array([1.0])
    start = q(z)
    res = wolfe_line_search(q, z, -start.g, start.f, start.g)
    assert res.converged and res.alpha == pytest.approx(0.5)
    np.testing.assert_allclose(res.point.z, 0.0)


def test_wolfe_accepts_only_sufficient_decrease():
    rng = np.random.default_rng(0)
    Q = np.diag([1.0, 30.0, 200.0])
    q = _Quadratic(Q)
    for _ in range(20):
        z = rng.standard_normal(3)
        p = q(z)
        d = -p.g * rng.uniform(0.01, 10)
        res = wolfe_line_search(q, z, d, p.f, p.g)
        slope = real_inner(d, p.g)
        assert res.point.f <= p.f + 1e-4 * res.alpha * slope
        assert real_inner(d, res.point.g) >= 0.9 * slope


def test_wolfe_errors_and_budget():
    q = _Quadratic(np.eye(2))
    z = np.array([1.0, 0.0])
    p = q(z)
    with pytest.raises(NotDescentDirection):
        wolfe_line_search(q, z, p.g, p.f, p.g)
    with pytest.raises(ValueError):
        wolfe_line_search(q, z, -p.g, p.f, p.g, c1=0.5, c2=0.4)
    with pytest.warns(LineSearchWarning):
        res = wolfe_line_search(q, z, -1e-9 * p.g, p.f, p.g, max_evals=3)
    assert not res.converged and res.alpha > 0


# -- directions ----------------------------------------------------------------------

def test_ncg_first_and_degenerate_steps():
    g = np.array([1.0, -2.0])
    d, restarted = ncg_direction(g, None, None)
    np.testing.assert_array_equal(d, -g)
    assert restarted
    d, restarted = ncg_direction(g, g.copy(), np.array([0.3, 0.1]))
    np.testing.assert_array_equal(d, -g)
    assert restarted


def _cg_oracle(Q, b, z0, steps):
    """Textbook linear CG search directions."""
    r = b - Q @ z0
    p = r.copy()
    z = z0.copy()
    dirs = []
    for _ in range(steps):
        dirs.append(p.copy())
        a = (r @ r) / (p @ Q @ p)
        z = z + a * p
        r_new = r - a * (Q @ p)
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
    return dirs, z


def _hs_exact(Q, b, z0, steps, sign="classical"):
    q = _Quadratic(Q, b)
    z = z0.copy()
    g_prev = d_prev = None
    dirs = []
    for _ in range(steps):
        g = q(z).g
        d, _ = ncg_direction(g, g_prev, d_prev, sign)
        dirs.append(d)
        z = z - (d @ g) / (d @ Q @ d) * d
        g_prev, d_prev = g, d
    return dirs, z


def test_ncg_matches_linear_cg_on_quadratic():
    Q = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    z0 = np.array([2.0, 1.0])
    ref, z_ref = _cg_oracle(Q, b, z0, 2)
    dirs, z = _hs_exact(Q, b, z0, 2)
    for d, p in zip(dirs, ref):
        cos = d @ p / (np.linalg.norm(d) * np.linalg.norm(p))
        assert cos == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(z, np.linalg.solve(Q, b), atol=1e-12)
    assert dirs[1] @ Q @ dirs[0] == pytest.approx(0.0, abs=1e-12)


def test_printed_hs_sign_loses_conjugacy():
    Q = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    dirs, z = _hs_exact(Q, b, np.array([2.0, 1.0]), 2, sign="printed")
    assert abs(dirs[1] @ Q @ dirs[0]) > 1e-3
    assert np.linalg.norm(z - np.linalg.solve(Q, b)) > 1e-6


def test_lbfgs_hand_trace():
    e1 = np.array([1.0, 0.0, 0.0])
    mem = LbfgsMemory(2)
    assert mem.update(e1.copy(), e1.copy())
    np.testing.assert_allclose(lbfgs_direction(e1, mem), -e1)
    assert len(LbfgsMemory(2)) == 0
    np.testing.assert_array_equal(lbfgs_direction(e1, LbfgsMemory(2)), -e1)


def test_lbfgs_curvature_guard():
    mem = LbfgsMemory(2)
    assert not mem.update(np.array([1.0, 0]), np.array([-1.0, 0]))
    assert not mem.update(np.array([1.0, 0]), np.array([0.0, 1.0]))
    assert len(mem) == 0


def test_lbfgs_full_memory_recovers_newton_direction():
    rng = np.random.default_rng(3)
    n = 4
    M = rng.standard_normal((n, n))
    Q = M @ M.T + n * np.eye(n)
    q = _Quadratic(Q, rng.standard_normal(n))
    mem = LbfgsMemory(n)
    z = rng.standard_normal(n)
    for _ in range(n):
        p = q(z)
        d = lbfgs_direction(p.g, mem)
        z_new = z - (d @ p.g) / (d @ Q @ d) * d
        mem.update(z_new - z, q(z_new).g - p.g)
        z = z_new
    g = rng.standard_normal(n)
    np.testing.assert_allclose(lbfgs_direction(g, mem), -np.linalg.solve(Q, g), atol=1e-6)


def test_lbfgs_directions_work_on_complex_vectors():
    rng = np.random.default_rng(4)
    mem = LbfgsMemory(2)
    for _ in range(3):
        s = complex_gaussian(rng, 5)
        mem.update(s, 2 * s + 0.1 * complex_gaussian(rng, 5))
    g = complex_gaussian(rng, 5)
    assert real_inner(lbfgs_direction(g, mem), g) < 0


# -- alternating projection --------------------------------------------------------------

def test_phase_of_examples():
    np.testing.assert_allclose(phase_of(np.array([3 + 4j])), [(3 + 4j) / 5])
    assert phase_of(np.array([0j]))[0] == 1


def test_ap_fixed_point_at_solution():
    obj, x, _ = _instance(16, kind="cdp", L=4, seed=2)
    z = ap_step(obj.ensemble, obj.ensemble.forward(x), np.sqrt(obj.y))
    np.testing.assert_allclose(z, x, atol=1e-10)


def test_ap_residual_nonincreasing():
    obj, x, rng = _instance(64, kind="cdp", L=6, seed=3)
    ens = obj.ensemble
    sqrt_y = np.sqrt(obj.y)
    z = complex_gaussian(rng, 64)
    Az = ens.forward(z)
    prev = np.linalg.norm(np.abs(Az) - sqrt_y)
    for _ in range(200):
        z = ap_step(ens, Az, sqrt_y)
        Az = ens.forward(z)
        res = np.linalg.norm(np.abs(Az) - sqrt_y)
        assert res <= prev * (1 + 1e-12)
        prev = res


def test_ap_on_gaussian_uses_least_squares():
    obj, x, rng = _instance(16, 8, seed=4)
    z, trace = run(obj, SolverConfig(algorithm="ap", max_iters=3000), complex_gaussian(rng, 16))
    assert trace.termination_reason == "success_threshold"
    assert trace.dft_calls == 0 and trace.matvecs > 0


# -- driver -------------------------------------------------------------------------

@pytest.mark.parametrize("algorithm", ["lbfgs", "ncg_hs", "sd_wolfe", "ap", "gd_theorem"])
def test_every_solver_recovers_easy_instance(algorithm):
    obj, x, rng = _instance(24, 12, seed=5)
    iters = 5000 if algorithm == "sd_wolfe" else 2000
    z, trace = run(obj, SolverConfig(algorithm=algorithm, max_iters=iters), complex_gaussian(rng, 24))
    assert trace.termination_reason == "success_threshold"
    assert trace.final_relerr < 1e-5
    assert len(trace.records) <= iters + 1


@pytest.mark.parametrize("algorithm", ["lbfgs", "ncg_hs", "sd_wolfe"])
def test_wolfe_methods_decrease_cost(algorithm):
    obj, x, rng = _instance(24, 8, seed=6)
    _, trace = run(obj, SolverConfig(algorithm=algorithm, max_iters=300), complex_gaussian(rng, 24))
    f = trace.column("f")
    assert np.all(np.diff(f) <= 0)


def test_real_mode_run_stays_real():
    obj, x, rng = _instance(32, 8, seed=7, mode="real")
    z, trace = run(obj, SolverConfig(), complex_gaussian(rng, 32))
    assert z.dtype == float
    assert trace.termination_reason == "success_threshold"


def test_max_iters_zero_and_invalid_init():
    obj, x, rng = _instance(8, 6)
    z0 = complex_gaussian(rng, 8)
    z, trace = run(obj, SolverConfig(max_iters=0), z0)
    np.testing.assert_array_equal(z, z0)
    assert trace.termination_reason == "max_iters" and len(trace.records) == 1
    with pytest.raises(InvalidInitialization):
        run(obj, SolverConfig(), np.zeros(8))


def test_termination_reasons_and_order():
    obj, x, rng = _instance(16, 8, seed=8)
    _, trace = run(obj, SolverConfig(max_iters=50), 1.0001 * x)
    assert trace.termination_reason == "success_threshold"
    # without ground truth the run cannot stop on success
    blind = Objective(obj.ensemble, obj.y)
    _, trace = run(blind, SolverConfig(max_iters=2000), complex_gaussian(rng, 16))
    assert trace.termination_reason in ("f_tol", "z_tol")
    assert math.isnan(trace.final_relerr)
    _, trace = run(obj, SolverConfig(max_iters=3), complex_gaussian(rng, 16))
    assert trace.termination_reason == "max_iters" and trace.iterations == 3


def test_dft_accounting_is_reconstructible():
    L = 4
    obj, x, rng = _instance(32, kind="cdp", L=L, seed=9)
    z0 = complex_gaussian(rng, 32)
    _, ap = run(obj, SolverConfig(algorithm="ap", max_iters=50), z0)
    assert all(r.dft_calls == L + 2 * L * r.iter for r in ap.records)
    _, gd = run(obj, SolverConfig(algorithm="gd_theorem", max_iters=50), z0)
    assert all(r.dft_calls == 2 * L * (r.iter + 1) for r in gd.records)


def test_trace_csv_format(tmp_path):
    obj, x, rng = _instance(8, 6)
    _, trace = run(obj, SolverConfig(max_iters=4), complex_gaussian(rng, 8))
    text = trace.to_csv(tmp_path / "t.csv")
    lines = text.split("\n")
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert "\r" not in text and len(lines) == len(trace.records) + 2
    assert (tmp_path / "t.csv").read_text() == text


def test_concurrent_runs_keep_private_counters():
    obj, x, rng = _instance(32, kind="cdp", L=5, seed=10)
    inits = [complex_gaussian(rng, 32) for _ in range(4)]
    cfg = SolverConfig()
    before = obj.counter.dft_calls
    serial = [run(obj, cfg, z0)[1].dft_calls for z0 in inits]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda z0: run(obj, cfg, z0)[1].dft_calls, inits))
    assert serial == parallel
    assert obj.counter.dft_calls == before


def test_printed_hs_sign_still_descends():
    obj, x, rng = _instance(24, 8, seed=11)
    _, trace = run(obj, SolverConfig(algorithm="ncg_hs", hs_sign="printed", max_iters=200),
                   complex_gaussian(rng, 24))
    assert np.all(np.diff(trace.column("f")) <= 0)


def test_initialization_scale_does_not_matter():
    rates = []
    for scale in (1.0, 50.0):
        wins = 0
        for seed in range(20):
            obj, x, rng = _instance(64, 7, seed=100 + seed)
            _, trace = run(obj, SolverConfig(), scale * complex_gaussian(rng, 64))
            wins += trace.final_relerr < 1e-5
        rates.append(wins / 20)
    assert min(rates) >= 0.9
