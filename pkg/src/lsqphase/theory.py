"""Numerical checks of the expectation identities and local geometry of the objective.

Every check returns a small report object with ``rows`` (plot-ready, written
by :meth:`to_csv` with the same conventions as solver traces) and a
human-readable :meth:`summary`. High-probability statements are checked as
frequencies, never as per-sample assertions.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .measurement import GaussianEnsemble, measure_intensity
from .objective import Objective, expected_gradient, expected_hessian
from .signals import complex_gaussian, dist_to_solution_set

__all__ = [
    "SpectrumReport",
    "ConcentrationReport",
    "AngleReport",
    "ConvexityReport",
    "MomentReport",
    "ExpectationReport",
    "check_hessian_spectrum",
    "measure_gradient_concentration",
    "check_angle_bound",
    "scan_local_convexity",
    "worst_direction_min_eig",
    "check_gaussian_moments",
    "check_expected_gradient",
]


class _Report:
    columns: Sequence[str] = ()

    def rows(self) -> List[tuple]:
        raise NotImplementedError

    def summary(self) -> str:
        raise NotImplementedError

    @property
    def passed(self) -> bool:
        raise NotImplementedError

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _stream(seed, *keys) -> np.random.Generator:
    """Independent generator for (seed, key...) so trials can run in any order."""
    entropy = 0 if seed is None else seed
    return np.random.default_rng(np.random.SeedSequence([int(entropy), *map(int, keys)]))


# -- spectrum at the solution --------------------------------------------------

@dataclass
class SpectrumReport(_Report):
    mode: str
    n: int
    norm_x_sq: float
    eigenvalues: np.ndarray
    expected: np.ndarray
    rayleigh_top: float
    tol: float

    columns = ("index", "eigenvalue", "expected", "abs_error")

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.eigenvalues - self.expected)))

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tol

    def rows(self):
        return [(i, float(e), float(t), float(abs(e - t)))
                for i, (e, t) in enumerate(zip(self.eigenvalues, self.expected))]

    def summary(self) -> str:
        return (f"expected Hessian spectrum at z = x ({self.mode}, n = {self.n})\n"
                f"  max |eig - expected| = {self.max_abs_error:.3e} (tol {self.tol:.1e})\n"
                f"  Rayleigh quotient of the top eigenvector = {self.rayleigh_top:.6g} "
                f"(4||x||^2 = {4 * self.norm_x_sq:.6g})\n"
                f"  {'PASS' if self.passed else 'FAIL'}")


def check_hessian_spectrum(x, mode: str = "complex", rtol: float = 1e-8) -> SpectrumReport:
    """Compare the eigenvalues of ``E[hessian](x, x)`` with its closed-form spectrum.

    Complex: ``{4||x||^2, ||x||^2 (2n-2 times), 0}``, top eigenvector ``(x; conj x)``.
    Real: ``{4||x||^2, ||x||^2 (n-1 times)}``, top eigenvector ``x``.
    """
    x = np.asarray(x).reshape(-1)
    n = x.size
    if n > 256:
        raise ValueError("spectrum check limited to n <= 256")
    if mode == "real":
        x = np.real(x)
    s = float(np.vdot(x, x).real)
    H = expected_hessian(x, x, mode)
    eig = np.sort(np.linalg.eigvalsh(H))
    if mode == "real":
        expected = np.array([s] * (n - 1) + [4 * s])
        top = x
    else:
        expected = np.array([0.0] + [s] * (2 * n - 2) + [4 * s])
        top = np.concatenate([x, np.conj(x)])
    rq = float(np.real(np.vdot(top, H @ top)) / np.real(np.vdot(top, top)))
    return SpectrumReport(mode, n, s, eig, np.sort(expected), rq, rtol * s)


# -- gradient concentration ------------------------------------------------------

@dataclass
class ConcentrationReport(_Report):
    """Relative gradient deviation ``||grad f - E grad f|| / ||E grad f||`` per (m, trial).

    ``delta_hat[m] = 2 max_trials deviation``. When ``E grad f = 0`` the
    deviations are absolute norms, ``absolute`` is set and ``delta_hat`` is
    the implied constant in ``||grad f - E grad f|| <= 4 delta dist ||x||^2``
    (infinite when ``dist = 0``, so only the raw deviations are meaningful).
    """

    n: int
    m_grid: List[int]
    trials: int
    deviations: np.ndarray       # (len(m_grid), trials)
    absolute: bool = False
    note: str = ""

    columns = ("m", "trial", "deviation")

    @property
    def delta_hat(self) -> np.ndarray:
        return 2 * self.deviations.max(axis=1)

    def paired_decrease_fraction(self, lo: int = 0, hi: int = -1) -> float:
        """Fraction of trials whose deviation at ``m_grid[hi]`` is below that at ``m_grid[lo]``."""
        return float(np.mean(self.deviations[hi] < self.deviations[lo]))

    @property
    def passed(self) -> bool:
        return bool(np.all(np.diff(self.delta_hat) < 0))

    def rows(self):
        return [(int(m), t, float(self.deviations[i, t]))
                for i, m in enumerate(self.m_grid) for t in range(self.trials)]

    def summary(self) -> str:
        kind = "absolute" if self.absolute else "relative"
        lines = [f"gradient concentration ({kind}), n = {self.n}, {self.trials} trials per m"]
        for m, d in zip(self.m_grid, self.delta_hat):
            lines.append(f"  m = {m:6d}  delta_hat = {d:.4g}")
        lines.append(f"  paired decrease fraction (first vs last m) = "
                     f"{self.paired_decrease_fraction():.3f}")
        if self.note:
            lines.append(f"  note: {self.note}")
        return "\n".join(lines)


def measure_gradient_concentration(x, z, m_grid, trials: int = 20, seed=0) -> ConcentrationReport:
    """Measure how far the sampled gradient at a fixed ``z`` sits from its expectation.

    Trial ``t`` draws one Gaussian ensemble with ``max(m_grid)`` rows and uses
    its leading ``m`` rows for each grid value, so grid points are paired.
    """
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    n = x.size
    m_grid = [int(m) for m in m_grid]
    Eg = expected_gradient(z, x)
    scale = float(np.linalg.norm(Eg))
    absolute = scale <= 1e-12 * max(1.0, float(np.vdot(x, x).real)) ** 1.5
    dev = np.empty((len(m_grid), trials))
    for t in range(trials):
        full = GaussianEnsemble.sample(n, max(m_grid), seed=_stream(seed, t))
        for i, m in enumerate(m_grid):
            ens = GaussianEnsemble(full.matrix[:m])
            g = Objective(ens, ens.measure(x)).gradient(z)
            err = float(np.linalg.norm(g - Eg))
            dev[i, t] = err if absolute else err / scale
    note = ""
    if absolute:
        d = dist_to_solution_set(z, x).distance
        note = ("E grad f = 0; deviations are absolute"
                + ("" if d > 1e-9 * math.sqrt(float(np.vdot(x, x).real)) else " and z lies on the solution set"))
    return ConcentrationReport(n, m_grid, trials, dev, absolute, note)


# -- angle between the gradient and z - x e^{i phi} --------------------------------

@dataclass
class AngleReport(_Report):
    cosines: np.ndarray
    distances: np.ndarray
    expected_cosines: np.ndarray
    skipped: int = 0

    columns = ("sample", "dist", "cosine", "expected_cosine")

    @property
    def min_cosine(self) -> float:
        return float(np.min(self.cosines)) if self.cosines.size else math.nan

    @property
    def implied_delta(self) -> float:
        """Smallest delta with ``sqrt(1 - delta^2/4) <= min cosine``."""
        c = min(max(self.min_cosine, 0.0), 1.0)
        return 2 * math.sqrt(1 - c * c)

    @property
    def passed(self) -> bool:
        return self.min_cosine > 0

    def rows(self):
        return [(i, float(d), float(c), float(e)) for i, (d, c, e) in
                enumerate(zip(self.distances, self.cosines, self.expected_cosines))]

    def summary(self) -> str:
        return (f"gradient angle bound over {self.cosines.size} samples "
                f"({self.skipped} skipped on the solution set)\n"
                f"  min cosine = {self.min_cosine:.4f}, implied delta = {self.implied_delta:.4f}\n"
                f"  min cosine of the expected gradient = {np.min(self.expected_cosines):.12f}\n"
                f"  {'PASS' if self.passed else 'FAIL'}")


def _cosine(u, v) -> float:
    return float(np.real(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))


def check_angle_bound(x, z_samples, ensemble) -> AngleReport:
    """Cosine between ``grad f(z)`` and ``h = z - e^{i phi(z)} x`` for each sample."""
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    if ensemble.m < 7 * ensemble.n:
        raise ValueError("angle bound needs m >= 7n")
    obj = Objective(ensemble, measure_intensity(ensemble, x))
    cos, dists, exp_cos = [], [], []
    skipped = 0
    for z in z_samples:
        z = np.asarray(z, dtype=np.complex128).reshape(-1)
        al = dist_to_solution_set(z, x)
        h = z - al.phase * x
        g = obj.gradient(z)
        if al.distance == 0 or not np.any(g):
            skipped += 1
            continue
        cos.append(_cosine(g, h))
        exp_cos.append(_cosine(expected_gradient(z, x), h))
        dists.append(al.distance)
    return AngleReport(np.array(cos), np.array(dists), np.array(exp_cos), skipped)


def sample_near(x, count: int, radius: float, rng: np.random.Generator):
    """Points ``e^{i theta} x + r u`` with ``u`` uniform on the complex sphere and ``r <= radius``."""
    x = np.asarray(x, dtype=np.complex128)
    out = []
    for _ in range(count):
        u = complex_gaussian(rng, x.size)
        u /= np.linalg.norm(u)
        r = radius * rng.uniform(0.05, 1.0)
        out.append(np.exp(1j * rng.uniform(0, 2 * np.pi)) * x + r * u)
    return out


# -- local convexity --------------------------------------------------------------

@dataclass
class ConvexityReport(_Report):
    norm_x: float
    expectation_radius: float
    empirical_radius: float
    expectation_min_eigs: np.ndarray    # per sampled ray: min over the t grid
    worst_min_eig: float                # worst-direction search at the outer radius
    empirical_t: np.ndarray
    empirical_f2: np.ndarray
    violation_budget: float = 0.01

    columns = ("path", "sample", "t", "value")

    @property
    def expectation_min(self) -> float:
        return float(min(np.min(self.expectation_min_eigs), self.worst_min_eig))

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(self.empirical_f2 < 0)) if self.empirical_f2.size else 0.0

    @property
    def passed(self) -> bool:
        return self.expectation_min >= -1e-10 and self.violation_fraction <= self.violation_budget

    def rows(self):
        out = [("expectation", i, self.expectation_radius, float(v))
               for i, v in enumerate(self.expectation_min_eigs)]
        out.append(("expectation_worst", 0, self.expectation_radius, float(self.worst_min_eig)))
        out += [("empirical", i, float(t), float(v))
                for i, (t, v) in enumerate(zip(self.empirical_t, self.empirical_f2))]
        return out

    def summary(self) -> str:
        return (f"local convexity, ||x|| = {self.norm_x:.4g}\n"
                f"  expectation path, t <= {self.expectation_radius:.4g}: "
                f"min eigenvalue over {self.expectation_min_eigs.size} rays = "
                f"{np.min(self.expectation_min_eigs):.6g}; worst direction = {self.worst_min_eig:.6g}\n"
                f"  empirical path, t <= {self.empirical_radius:.4g}: "
                f"{self.empirical_f2.size} samples, violation fraction = {self.violation_fraction:.4f} "
                f"(budget {self.violation_budget:g})\n"
                f"  {'PASS' if self.passed else 'FAIL'}")


def _unit(rng, n):
    w = rng.standard_normal(n)
    return w / np.linalg.norm(w)


def worst_direction_min_eig(x, t: float, iters: int = 50, rng=None) -> float:
    """Min over unit ``w`` of ``lambda_min(E-Hessian(x + t w))`` by alternating minimization.

    Starting from ``-x/||x||`` and a few random rays, ``w`` is repeatedly
    replaced by the bottom eigenvector at the current point (sign chosen to
    shrink ``x^T w``), which decreases the objective at every accepted step.
    """
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(0) if rng is None else rng
    starts = [-x / np.linalg.norm(x)] + [_unit(rng, x.size) for _ in range(4)]
    best = math.inf
    for w in starts:
        val = np.linalg.eigvalsh(expected_hessian(x + t * w, x, "real"))[0]
        for _ in range(iters):
            evals, evecs = np.linalg.eigh(expected_hessian(x + t * w, x, "real"))
            cand = evecs[:, 0]
            cand = -cand if cand @ x > 0 else cand
            new = np.linalg.eigvalsh(expected_hessian(x + t * cand, x, "real"))[0]
            if new >= val - 1e-14:
                break
            w, val = cand, new
        best = min(best, float(val))
    return best


def scan_local_convexity(x_real, t_grid=None, w_samples: int = 200, ensemble=None,
                         empirical_samples: int = 500, seed=0) -> ConvexityReport:
    """Convexity of the objective along rays ``z = x + t w`` around a real signal.

    ``t_grid`` defaults to 25 points on ``[0, ||x||/12]`` for the expectation
    path; the empirical path draws ``(w, t)`` with ``t`` uniform on
    ``[0, ||x||/24]`` and evaluates ``f''(t)`` on ``ensemble`` (a real-signal
    Gaussian ensemble with ``m = 30 n`` is drawn when none is given).
    """
    x = np.asarray(x_real)
    if np.iscomplexobj(x):
        if np.any(x.imag):
            raise ValueError("local convexity scan needs a real signal")
        x = x.real
    x = x.astype(float).reshape(-1)
    n = x.size
    r = float(np.linalg.norm(x))
    t_grid = np.linspace(0, r / 12, 25) if t_grid is None else np.asarray(t_grid, dtype=float)
    rng = _stream(seed, 0)

    ray_min = np.empty(w_samples)
    for i in range(w_samples):
        w = _unit(rng, n)
        ray_min[i] = min(np.linalg.eigvalsh(expected_hessian(x + t * w, x, "real"))[0] for t in t_grid)
    worst = worst_direction_min_eig(x, float(t_grid.max()), rng=rng)

    if ensemble is None:
        ensemble = GaussianEnsemble.sample(n, 30 * n, seed=_stream(seed, 1))
    if ensemble.m < 7 * ensemble.n:
        raise ValueError("local convexity scan needs m >= 7n")
    obj = Objective(ensemble, ensemble.measure(x), mode="real")
    ts = rng.uniform(0, r / 24, size=empirical_samples)
    f2 = np.empty(empirical_samples)
    for i, t in enumerate(ts):
        f2[i] = obj.directional_derivatives(x, _unit(rng, n), float(t))[1]
    return ConvexityReport(r, float(t_grid.max()), r / 24, ray_min, worst, ts, f2)


# -- Gaussian moments -------------------------------------------------------------

@dataclass
class MomentReport(_Report):
    names: List[str]
    estimates: np.ndarray
    expected: np.ndarray
    stderr: np.ndarray
    samples: int
    sigmas: float = 3.0

    columns = ("identity", "estimate", "expected", "stderr", "z_score")

    @property
    def z_scores(self) -> np.ndarray:
        return (self.estimates - self.expected) / self.stderr

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) <= self.sigmas))

    def rows(self):
        return [(nm, float(e), float(t), float(s), float(z)) for nm, e, t, s, z in
                zip(self.names, self.estimates, self.expected, self.stderr, self.z_scores)]

    def summary(self) -> str:
        lines = [f"Gaussian moment identities, {self.samples} samples"]
        for nm, e, t, z in zip(self.names, self.estimates, self.expected, self.z_scores):
            lines.append(f"  {nm:<28s} {e:.6f} vs {t:.6f}  ({z:+.2f} se)")
        lines.append(f"  {'PASS' if self.passed else 'FAIL'} at {self.sigmas:g} standard errors")
        return "\n".join(lines)


def _unit_complex(rng, n):
    u = complex_gaussian(rng, n)
    return u / np.linalg.norm(u)


def check_gaussian_moments(trials: int = 1_000_000, n: int = 4, u=None, v=None, seed=0,
                           batch: int = 100_000) -> MomentReport:
    """Monte Carlo estimates for ``a ~ CN(0, I)`` and unit vectors ``u, v``.

    Identities checked: ``E|a^*u|^{2k} = k!`` for k = 1, 2, 3,
    ``E[Re(u^* a a^* v) |a^* u|^2] = 2 Re(u^* v)`` and
    ``E[Re(u^* a a^* v)^2] = 1/2 + (3/2) Re(u^* v)^2 - (1/2) Im(u^* v)^2``.
    """
    rng = _stream(seed, 0)
    u = _unit_complex(rng, n) if u is None else np.asarray(u, dtype=np.complex128)
    v = _unit_complex(rng, n) if v is None else np.asarray(v, dtype=np.complex128)
    if not (np.isclose(np.linalg.norm(u), 1) and np.isclose(np.linalg.norm(v), 1)):
        raise ValueError("u and v must be unit vectors")
    uv = np.vdot(u, v)
    names = ["E|a*u|^2 = 1", "E|a*u|^4 = 2", "E|a*u|^6 = 6",
             "E[Re(u*aa*v)|a*u|^2]", "E[Re(u*aa*v)^2]"]
    expected = np.array([1.0, 2.0, 6.0, 2 * uv.real, 0.5 + 1.5 * uv.real**2 - 0.5 * uv.imag**2])
    total = np.zeros(5)
    total_sq = np.zeros(5)
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        a = np.sqrt(0.5) * (rng.standard_normal((b, n)) + 1j * rng.standard_normal((b, n)))
        au = a.conj() @ u           # a^* u per row
        av = a.conj() @ v
        p = np.abs(au) ** 2
        q = np.real(np.conj(au) * av)   # Re(u^* a a^* v)
        vals = np.stack([p, p**2, p**3, q * p, q**2], axis=1)
        total += vals.sum(axis=0)
        total_sq += (vals**2).sum(axis=0)
        done += b
    mean = total / trials
    var = total_sq / trials - mean**2
    stderr = np.sqrt(var * trials / (trials - 1) / trials)
    return MomentReport(names, mean, expected, stderr, trials)


# -- expected gradient ------------------------------------------------------------

@dataclass
class ExpectationReport(_Report):
    estimate: np.ndarray
    expected: np.ndarray
    stderr: np.ndarray       # separate real / imaginary standard errors, shape (2, n)
    rows_used: int
    sigmas: float = 3.0

    columns = ("component", "part", "estimate", "expected", "stderr", "z_score")

    def _parts(self):
        return (np.stack([self.estimate.real, self.estimate.imag]),
                np.stack([self.expected.real, self.expected.imag]))

    @property
    def z_scores(self) -> np.ndarray:
        est, exp = self._parts()
        return (est - exp) / self.stderr

    @property
    def passed(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) <= self.sigmas))

    def rows(self):
        est, exp = self._parts()
        z = self.z_scores
        return [(j, part, float(est[p, j]), float(exp[p, j]), float(self.stderr[p, j]), float(z[p, j]))
                for j in range(self.estimate.size) for p, part in enumerate(("re", "im"))]

    def summary(self) -> str:
        return (f"expected gradient over {self.rows_used} Gaussian rows\n"
                f"  max |z-score| = {np.max(np.abs(self.z_scores)):.3f}\n"
                f"  {'PASS' if self.passed else 'FAIL'} at {self.sigmas:g} standard errors")


def check_expected_gradient(x, z, rows: int = 100_000, seed=0) -> ExpectationReport:
    """Sample mean of the per-row gradient terms against ``(2||z||^2 - ||x||^2) z - (x^* z) x``.

    Row ``r`` contributes ``(|a_r^* z|^2 - |a_r^* x|^2)(a_r^* z) a_r``; their
    mean is exactly the gradient on the full ensemble.
    """
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    ens = GaussianEnsemble.sample(x.size, rows, seed=_stream(seed, 0))
    A = ens.matrix
    Az = A @ z
    terms = ((np.abs(Az) ** 2 - np.abs(A @ x) ** 2) * Az)[:, None] * A.conj()
    est = terms.mean(axis=0)
    se = np.stack([terms.real.std(axis=0, ddof=1), terms.imag.std(axis=0, ddof=1)]) / math.sqrt(rows)
    return ExpectationReport(est, expected_gradient(z, x), se, rows)
