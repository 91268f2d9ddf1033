"""Iterative solvers sharing one trace and termination contract.

Available algorithms (``SolverConfig.algorithm``):

``gd_theorem``
    gradient descent whose step length comes from the cubic
    ``P(t) = (2 + delta) t (t^2 + 3 t ||x|| + 2 ||x||^2) = ||grad f||``.
``sd_wolfe``
    steepest descent with a weak Wolfe line search.
``ncg_hs``
    nonlinear conjugate gradient, Hestenes-Stiefel beta.
``lbfgs``
    limited-memory BFGS, two-loop recursion with Shanno-Phua scaling.
``ap``
    alternating projection ``z <- A^+(phase(Az) o sqrt(y))``.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .linesearch import LineSearchWarning, wolfe_line_search
from .measurement import OpCounter
from .signals import dist_to_solution_set, real_inner

ALGORITHMS = ("gd_theorem", "sd_wolfe", "ncg_hs", "lbfgs", "ap")
TERMINATION_ORDER = ("success_threshold", "f_tol", "z_tol", "max_iters")
TRACE_COLUMNS = ("iter", "f", "grad_norm", "relerr", "dist", "dft_calls", "alpha")


class InvalidInitialization(ValueError):
    pass


class ZeroGradient(ArithmeticError):
    """The gradient vanished: z is zero or already a solution."""


@dataclass
class SolverConfig:
    algorithm: str = "lbfgs"
    max_iters: int = 600
    f_rel_tol: float = 1e-12
    z_rel_tol: float = 1e-12
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    lbfgs_pairs: int = 2
    delta: float = 0.2
    seed: Optional[int] = None
    success_threshold: float = 1e-5
    stop_on_success: bool = True
    # "classical" is the textbook HS ratio; "printed" negates it
    hs_sign: str = "classical"
    ncg_restart: Optional[int] = None
    ls_max_evals: int = 40
    # first trial step of each Wolfe search after the first iteration:
    # "unit", "previous" (alpha_{k-1} Re(d_{k-1}^* g_{k-1}) / Re(d_k^* g_k)),
    # or "auto" = previous for ncg_hs, unit otherwise
    initial_step: str = "auto"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.lbfgs_pairs < 1:
            raise ValueError("lbfgs_pairs must be >= 1")
        if self.algorithm == "gd_theorem" and not 0 < self.delta <= 0.2:
            raise ValueError("delta must lie in (0, 0.2]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.hs_sign not in ("classical", "printed"):
            raise ValueError("hs_sign must be 'classical' or 'printed'")
        if self.initial_step not in ("unit", "previous", "auto"):
            raise ValueError("initial_step must be 'unit', 'previous' or 'auto'")

    @property
    def scaled_initial_step(self) -> bool:
        if self.initial_step == "auto":
            return self.algorithm == "ncg_hs"
        return self.initial_step == "previous"


@dataclass
class TraceRecord:
    iter: int
    f: float
    grad_norm: float
    relerr: float
    dist: float
    dft_calls: int
    alpha: float
    matvecs: int = 0


@dataclass
class SolverTrace:
    algorithm: str
    records: List[TraceRecord] = field(default_factory=list)
    termination_reason: Optional[str] = None
    line_search_failures: int = 0

    @property
    def iterations(self) -> int:
        return self.records[-1].iter if self.records else 0

    @property
    def dft_calls(self) -> int:
        return self.records[-1].dft_calls if self.records else 0

    @property
    def matvecs(self) -> int:
        return self.records[-1].matvecs if self.records else 0

    @property
    def final_relerr(self) -> float:
        return self.records[-1].relerr if self.records else math.nan

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([r.iter, repr(r.f), repr(r.grad_norm), repr(r.relerr), repr(r.dist),
                             r.dft_calls, repr(r.alpha)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# -- step and direction rules -------------------------------------------------

def cubic_step_root(grad_norm: float, norm_x: float, delta: float = 0.2) -> float:
    """Positive root ``t`` of ``(2 + delta) t (t^2 + 3 t r + 2 r^2) = grad_norm`` (``r = norm_x``).

    Bisection on ``[0, max(1, (grad_norm/(2+delta))^(1/3) + r)]`` then Newton polish.
    """
    if grad_norm <= 0:
        return 0.0
    c = 2.0 + delta
    r = norm_x

    def p(t):
        return c * t * (t * t + 3 * t * r + 2 * r * r)

    def dp(t):
        return c * (3 * t * t + 6 * t * r + 2 * r * r)

    lo, hi = 0.0, max(1.0, (grad_norm / c) ** (1.0 / 3.0) + r)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if p(mid) < grad_norm:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    t = 0.5 * (lo + hi)
    for _ in range(3):
        slope = dp(t)
        if slope <= 0:
            break
        t_new = t - (p(t) - grad_norm) / slope
        if not lo <= t_new <= hi:
            break
        t = t_new
    return t


def gd_theorem_step(z, g, norm_x_sq_estimate: float, delta: float = 0.2):
    """One step ``z - alpha g/||g||`` with ``alpha = sqrt(1 - delta^2/4) t1``.

    ``alpha`` is a length: the admissible window for strict decrease of the
    distance to the solution set is stated for a unit-norm descent direction,
    hence the normalized gradient.
    """
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0:
        raise ZeroGradient("gradient is zero")
    t1 = cubic_step_root(gnorm, math.sqrt(max(norm_x_sq_estimate, 0.0)), delta)
    alpha = math.sqrt(1 - delta**2 / 4) * t1
    return alpha, z - (alpha / gnorm) * g


def ncg_direction(g, g_prev, d_prev, sign: str = "classical"):
    """Hestenes-Stiefel direction ``-g + beta d_prev``; returns ``(d, restarted)``.

    Falls back to ``-g`` on a vanishing denominator or a non-descent result.
    """
    if d_prev is None or g_prev is None:
        return -g, True
    dg = g - g_prev
    denom = real_inner(d_prev, dg)
    if denom == 0 or not np.isfinite(denom):
        return -g, True
    beta = real_inner(g, dg) / denom
    if sign == "printed":
        beta = -beta
    d = -g + beta * d_prev
    if real_inner(d, g) >= 0:
        return -g, True
    return d, False


class LbfgsMemory:
    """Ring buffer of curvature pairs ``(s_i, y_i, rho_i = 1/Re(y_i^* s_i))``."""

    def __init__(self, size: int = 2, curvature_tol: float = 1e-12):
        self.size = size
        self.curvature_tol = curvature_tol
        self.pairs = deque(maxlen=size)

    def __len__(self):
        return len(self.pairs)

    def update(self, s, y) -> bool:
        sy = real_inner(y, s)
        if sy <= self.curvature_tol * np.linalg.norm(y) * np.linalg.norm(s):
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def clear(self):
        self.pairs.clear()


def lbfgs_direction(g, memory: LbfgsMemory):
    """Two-loop recursion; ``-g`` when the memory is empty."""
    d = -g
    if not len(memory):
        return d
    alphas = []
    for s, y, rho in reversed(memory.pairs):
        a = rho * real_inner(s, d)
        alphas.append(a)
        d = d - a * y
    s_last, y_last, _ = memory.pairs[-1]
    gamma = real_inner(y_last, s_last) / real_inner(y_last, y_last)
    d = gamma * d
    for (s, y, rho), a in zip(memory.pairs, reversed(alphas)):
        beta = rho * real_inner(y, d)
        d = d + (a - beta) * s
    return d


def phase_of(u) -> np.ndarray:
    """``u/|u|`` componentwise, 1 where ``u == 0``."""
    mag = np.abs(u)
    out = np.ones_like(u, dtype=np.complex128)
    nz = mag > 0
    out[nz] = u[nz] / mag[nz]
    return out


def ap_step(ensemble, Az, sqrt_y, real: bool = False):
    """``argmin_z ||Az - c o sqrt(y)||`` with ``c = phase(Az)``."""
    z = ensemble.least_squares(phase_of(Az) * sqrt_y)
    return z.real.copy() if real else z


# -- driver ---------------------------------------------------------------------

class _Recorder:
    def __init__(self, trace: SolverTrace, counter: OpCounter, x_true, mode: str):
        self.trace = trace
        self.counter = counter
        self.x_true = None if x_true is None else np.asarray(x_true).reshape(-1)
        self.mode = mode

    def __call__(self, k, z, f, gnorm, alpha):
        if self.x_true is not None:
            al = dist_to_solution_set(z, self.x_true, self.mode)
            relerr, dist = al.relative_error, al.distance
        else:
            relerr = dist = math.nan
        self.trace.records.append(TraceRecord(k, f, gnorm, relerr, dist, self.counter.dft_calls,
                                              alpha, self.counter.matvecs))
        return relerr


def _stop_reason(config, relerr, f_old, f_new, z_old, z_new, k):
    if config.stop_on_success and relerr < config.success_threshold:
        return "success_threshold"
    if abs(f_new - f_old) / max(f_old, np.finfo(float).tiny) < config.f_rel_tol:
        return "f_tol"
    zn = np.linalg.norm(z_old)
    if zn == 0 or np.linalg.norm(z_new - z_old) / zn < config.z_rel_tol:
        return "z_tol"
    if k >= config.max_iters:
        return "max_iters"
    return None


def run(objective, config: SolverConfig, z0, x_true=None):
    """Minimize from ``z0``; returns ``(z_final, SolverTrace)``.

    The run draws on a private operator counter, so concurrent runs over the
    same ensemble keep independent DFT counts. When ``x_true`` is given (or
    carried by the objective's data) the relative error is traced and, with
    ``config.stop_on_success``, the run stops once it drops below
    ``config.success_threshold``.
    """
    z0 = np.asarray(z0).reshape(-1)
    if objective.real:
        z0 = np.real(z0).astype(float)
    else:
        z0 = z0.astype(np.complex128)
    if not np.any(z0):
        raise InvalidInitialization("initialization must be nonzero")
    if x_true is None:
        x_true = objective.x_true
    counter = OpCounter()
    obj = objective.with_counter(counter)
    trace = SolverTrace(config.algorithm)
    record = _Recorder(trace, counter, x_true, objective.mode)
    cfg = config if x_true is not None else _without_success(config)

    if config.algorithm == "ap":
        z = _run_ap(obj, cfg, z0, record, trace)
    else:
        z = _run_descent(obj, cfg, z0, record, trace)
    return z, trace


def _without_success(config):
    from dataclasses import replace
    return replace(config, stop_on_success=False)


def _run_descent(obj, config, z, record, trace):
    ev = obj.at(z)
    relerr = record(0, z, ev.f, float(np.linalg.norm(ev.g)), 0.0)
    if config.max_iters == 0:
        trace.termination_reason = "max_iters"
        return z

    algo = config.algorithm
    memory = LbfgsMemory(config.lbfgs_pairs)
    restart_every = config.ncg_restart or obj.n
    d_prev = g_prev = None
    prev_alpha = prev_slope = None
    since_restart = 0
    norm_x_sq = obj.norm_x_sq_estimate()

    for k in range(1, config.max_iters + 1):
        g = ev.g
        if algo == "gd_theorem":
            try:
                alpha, z_new = gd_theorem_step(ev.z, g, norm_x_sq, config.delta)
            except ZeroGradient:
                z_new, alpha = ev.z, 0.0
            new = obj.at(z_new)
        else:
            if algo == "sd_wolfe":
                d = -g
            elif algo == "ncg_hs":
                if since_restart >= restart_every:
                    d_prev = None
                    since_restart = 0
                d, restarted = ncg_direction(g, g_prev, d_prev, config.hs_sign)
                since_restart = 1 if restarted else since_restart + 1
            else:
                d = lbfgs_direction(g, memory)
                if real_inner(d, g) >= 0:
                    memory.clear()
                    d = -g
            slope = real_inner(d, g)
            if not slope < 0:
                # zero gradient: stationary point
                trace.termination_reason = "z_tol"
                return ev.z
            alpha0 = 1.0
            if config.scaled_initial_step and prev_alpha:
                alpha0 = prev_alpha * prev_slope / slope
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LineSearchWarning)
                res = wolfe_line_search(obj.at, ev.z, d, ev.f, g, config.wolfe_c1, config.wolfe_c2,
                                        alpha0=alpha0, max_evals=config.ls_max_evals, start=ev)
            if not res.converged:
                trace.line_search_failures += 1
            alpha, new = res.alpha, res.point
            if alpha > 0:
                assert new.f <= ev.f + config.wolfe_c1 * alpha * slope
            prev_alpha, prev_slope = alpha, slope
            g_prev, d_prev = g, d
            if algo == "lbfgs" and alpha > 0:
                memory.update(new.z - ev.z, new.g - g)
        relerr = record(k, new.z, new.f, float(np.linalg.norm(new.g)), alpha)
        reason = _stop_reason(config, relerr, ev.f, new.f, ev.z, new.z, k)
        ev = new
        if reason:
            trace.termination_reason = reason
            return ev.z
    trace.termination_reason = "max_iters"
    return ev.z


def _run_ap(obj, config, z, record, trace):
    ens = obj.ensemble
    sqrt_y = np.sqrt(np.maximum(obj.y, 0.0))
    Az = ens.forward(z)
    f = float(np.sum((np.abs(Az) ** 2 - obj.y) ** 2) / (2 * obj.m))
    relerr = record(0, z, f, math.nan, math.nan)
    if config.max_iters == 0:
        trace.termination_reason = "max_iters"
        return z
    for k in range(1, config.max_iters + 1):
        z_new = ap_step(ens, Az, sqrt_y, obj.real)
        Az = ens.forward(z_new)
        f_new = float(np.sum((np.abs(Az) ** 2 - obj.y) ** 2) / (2 * obj.m))
        relerr = record(k, z_new, f_new, math.nan, math.nan)
        reason = _stop_reason(config, relerr, f, f_new, z, z_new, k)
        z, f = z_new, f_new
        if reason:
            trace.termination_reason = reason
            return z
    trace.termination_reason = "max_iters"
    return z
