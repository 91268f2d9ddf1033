"""Experiment runners: recovery sweeps, noise sweeps, method comparisons, realness study, theory checks.

Seeding. Every random object is drawn from its own stream
``SeedSequence([master_seed, tag, ...])``:

* signal ``s``:             ``(master_seed, 0, s)``
* ensemble at grid ``g``:   ``(master_seed, 1, g, s, i)``
* initial point:            ``(master_seed, 2, s, i)``
* Poisson noise at ``g``:   ``(master_seed, 3, g, s, i)``

for signal index ``s`` and initialization index ``i``. A trial therefore
depends only on its own coordinates, so any subset of trials rerun alone
reproduces the corresponding rows of a full run, whatever the thread count.
All methods and modes at one grid point share the same instance.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np
from scipy import stats

from .. import theory
from ..measurement import CDPEnsemble, GaussianEnsemble, add_poisson_noise, measure_intensity
from ..objective import Objective
from ..signals import complex_gaussian
from ..solvers import SolverConfig, run
from .config import ExperimentSpec
from .images import complex_test_image, real_test_image

SCHEMA_VERSION = "lsqphase-results/1"
SIGNAL, ENSEMBLE, INIT, NOISE = range(4)

RESULT_COLUMNS = (
    "kind", "model", "grid_name", "grid_value", "method", "mode", "trials", "successes",
    "success_rate", "mean_relerr", "mean_relerr_db", "mean_iterations", "mean_success_iterations",
    "mean_dft_calls", "mean_matvecs", "failed", "note",
)
TRIAL_COLUMNS = (
    "kind", "grid_name", "grid_value", "method", "mode", "signal_index", "init_index",
    "iterations", "dft_calls", "matvecs", "final_relerr", "relerr_db", "success",
    "termination", "line_search_failures",
)


def stream(master_seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, keys)]))


@dataclass
class TrialResult:
    kind: str
    grid_name: str
    grid_value: float
    method: str
    mode: str
    signal_index: int
    init_index: int
    iterations: int
    dft_calls: int
    matvecs: int
    final_relerr: float
    relerr_db: float
    success: bool
    termination: str
    line_search_failures: int
    trace: object = field(default=None, repr=False, compare=False)


@dataclass
class ResultRow:
    """Aggregate over the trials of one (grid point, method, mode)."""

    kind: str
    model: str
    grid_name: str
    grid_value: float
    method: str
    mode: str
    trials: int
    successes: int
    success_rate: float
    mean_relerr: float
    mean_relerr_db: float
    mean_iterations: float
    mean_success_iterations: float
    mean_dft_calls: float
    mean_matvecs: float
    failed: bool
    note: str = ""

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError("success_rate must lie in [0, 1]")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: List[ResultRow]
    trials: List[TrialResult]
    summary: str
    extra: Dict[str, str] = field(default_factory=dict)

    def row(self, method=None, grid_value=None, mode=None) -> ResultRow:
        for r in self.rows:
            if ((method is None or r.method == method) and (mode is None or r.mode == mode)
                    and (grid_value is None or r.grid_value == grid_value)):
                return r
        raise KeyError((method, grid_value, mode))

    def results_csv(self) -> str:
        return _csv(self.spec, RESULT_COLUMNS, [asdict(r) for r in self.rows])

    def trials_csv(self) -> str:
        return _csv(self.spec, TRIAL_COLUMNS,
                    [{k: getattr(t, k) for k in TRIAL_COLUMNS} for t in self.trials])

    def write(self, outdir=None) -> List[str]:
        outdir = outdir or self.spec.outdir()
        os.makedirs(outdir, exist_ok=True)
        files = {"results.csv": self.results_csv(), "trials.csv": self.trials_csv(),
                 "summary.txt": self.summary + "\n", **self.extra}
        paths = []
        for name, text in files.items():
            path = os.path.join(outdir, name)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                fh.write(text)
            paths.append(path)
        return paths


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _spec_line(spec: ExperimentSpec) -> str:
    items = []
    for k, v in asdict(spec).items():
        if k in ("output_path", "threads"):
            continue
        items.append(f"{k}={v}")
    return "; ".join(items)


def _csv(spec, columns, dicts) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n# spec: {_spec_line(spec)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for d in dicts:
        writer.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


# -- instance construction --------------------------------------------------------

def make_signal(spec: ExperimentSpec, signal_index: int) -> np.ndarray:
    rng = stream(spec.master_seed, SIGNAL, signal_index)
    if spec.signal == "gaussian":
        return complex_gaussian(rng, spec.size)
    if spec.signal == "real_gaussian":
        return rng.standard_normal(spec.size)
    if spec.signal == "image":
        return complex_test_image(spec.signal_shape, seed=rng).reshape(-1)
    return real_test_image(spec.signal_shape, seed=rng).reshape(-1)


def make_ensemble(spec: ExperimentSpec, value: float, rng):
    """``value`` is m/n for the Gaussian model and the mask count for CDP models."""
    if spec.model == "gaussian":
        return GaussianEnsemble.sample(spec.size, int(round(value * spec.size)), seed=rng)
    pattern = "octanary" if spec.model == "cdp_octanary" else "binary"
    return CDPEnsemble.sample(spec.signal_shape, int(value), pattern, seed=rng,
                              include_ones=pattern == "binary")


def make_init(spec: ExperimentSpec, signal_index: int, init_index: int) -> np.ndarray:
    return complex_gaussian(stream(spec.master_seed, INIT, signal_index, init_index), spec.size)


@dataclass(frozen=True)
class _Task:
    grid_index: int
    grid_value: float
    signal_index: int
    init_index: int
    methods: tuple
    modes: tuple
    snr_db: float = math.nan


def _modes(spec):
    return ("real", "complex") if spec.mode == "both" else (spec.mode,)


def _solve_instance(spec: ExperimentSpec, task: _Task, keep_trace: bool = False) -> List[TrialResult]:
    x = make_signal(spec, task.signal_index)
    value = spec.num_masks if spec.kind in ("noise_sweep", "method_compare") else task.grid_value
    ens = make_ensemble(spec, value, stream(spec.master_seed, ENSEMBLE, task.grid_index,
                                            task.signal_index, task.init_index))
    data = measure_intensity(ens, x)
    if not math.isnan(task.snr_db):
        data = add_poisson_noise(data, task.snr_db, seed=stream(
            spec.master_seed, NOISE, task.grid_index, task.signal_index, task.init_index))
    z0 = make_init(spec, task.signal_index, task.init_index)
    out = []
    for mode in task.modes:
        obj = Objective(ens, data, mode=mode)
        for method in task.methods:
            cfg = SolverConfig(algorithm=method, max_iters=spec.max_iters,
                               success_threshold=spec.success_threshold)
            _, trace = run(obj, cfg, z0, x_true=x)
            relerr = trace.final_relerr
            out.append(TrialResult(
                spec.kind, spec.grid_name, task.grid_value, method, mode, task.signal_index,
                task.init_index, trace.iterations, trace.dft_calls, trace.matvecs, relerr,
                20 * math.log10(relerr) if relerr > 0 else -math.inf,
                bool(relerr < spec.success_threshold), trace.termination_reason,
                trace.line_search_failures, trace if keep_trace else None))
    return out


def _tasks(spec: ExperimentSpec, grid, methods, snr=False) -> List[_Task]:
    return [_Task(g, float(v), s, i, tuple(methods), _modes(spec), float(v) if snr else math.nan)
            for g, v in enumerate(grid) for s in range(spec.signals) for i in range(spec.inits)]


def _execute(spec: ExperimentSpec, tasks, keep_first_trace=False) -> List[TrialResult]:
    def work(task):
        first = keep_first_trace and task.signal_index == 0 and task.init_index == 0
        return _solve_instance(spec, task, keep_trace=first)

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            chunks = list(pool.map(work, tasks))
    else:
        chunks = [work(t) for t in tasks]
    return [r for chunk in chunks for r in chunk]


def _mean(values) -> float:
    values = [v for v in values if math.isfinite(v)]
    return float(np.mean(values)) if values else math.nan


def _aggregate(spec: ExperimentSpec, trials: List[TrialResult]) -> List[ResultRow]:
    groups: Dict[tuple, List[TrialResult]] = {}
    for t in trials:
        groups.setdefault((t.grid_value, t.mode, t.method), []).append(t)
    # insertion order = grid point, then mode, then method as configured
    rows = []
    for key, ts in groups.items():
        succ = [t for t in ts if t.success]
        rows.append(ResultRow(
            spec.kind, spec.model, spec.grid_name, key[0], key[2], key[1], len(ts), len(succ),
            len(succ) / len(ts), _mean(t.final_relerr for t in ts), _mean(t.relerr_db for t in ts),
            _mean(t.iterations for t in ts), _mean(t.iterations for t in succ),
            _mean(t.dft_calls for t in ts), _mean(t.matvecs for t in ts), not succ))
    return rows


def _header(spec: ExperimentSpec) -> str:
    shape = "x".join(map(str, spec.signal_shape))
    return (f"{spec.kind}: model={spec.model} shape={shape} signal={spec.signal} "
            f"trials per point={spec.trials} master_seed={spec.master_seed}")


# -- experiments ----------------------------------------------------------------------

def recovery_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Success rate of ``spec.algorithm`` from random starts at each grid point."""
    trials = _execute(spec, _tasks(spec, spec.grid, (spec.algorithm,)))
    rows = _aggregate(spec, trials)
    lines = [_header(spec), f"{spec.grid_name:>10s} {'mode':>8s} {'success_rate':>13s}"]
    for r in rows:
        lines.append(f"{r.grid_value:10g} {r.mode:>8s} {r.success_rate:13.3f}")
    for mode in _modes(spec):
        rates = [r.success_rate for r in rows if r.mode == mode]
        mono = all(b >= a for a, b in zip(rates, rates[1:]))
        lines.append(f"{mode}: success rate {'is' if mono else 'is not'} nondecreasing along the grid")
    return ExperimentResult(spec, rows, trials, "\n".join(lines))


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    pearson_r: float


def fit_noise_line(rows: List[ResultRow]) -> LinearFit:
    snr = np.array([r.grid_value for r in rows])
    db = np.array([r.mean_relerr_db for r in rows])
    if snr.size < 2:
        return LinearFit(math.nan, math.nan, math.nan)
    fit = stats.linregress(snr, db)
    return LinearFit(float(fit.slope), float(fit.intercept), float(fit.rvalue))


def noise_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Relative error in dB against the Poisson-noise SNR, with a least-squares line."""
    trials = _execute(spec, _tasks(spec, spec.grid, (spec.algorithm,), snr=True))
    rows = _aggregate(spec, trials)
    fit = fit_noise_line(rows)
    lines = [_header(spec) + f" masks={spec.num_masks}",
             f"{'snr_db':>8s} {'mean_relerr':>12s} {'mean_relerr_db':>15s}"]
    for r in rows:
        lines.append(f"{r.grid_value:8g} {r.mean_relerr:12.5f} {r.mean_relerr_db:15.3f}")
    lines.append(f"linear fit: relerr_db = {fit.slope:.4f} * snr_db + {fit.intercept:.4f}, "
                 f"pearson r = {fit.pearson_r:.5f}")
    return ExperimentResult(spec, rows, trials, "\n".join(lines))


def method_ordering(rows: List[ResultRow]) -> List[str]:
    return [r.method for r in sorted(rows, key=lambda r: r.mean_dft_calls)]


def method_compare(spec: ExperimentSpec) -> ExperimentResult:
    """DFT (or matvec) counts per method on shared instances; first-trial traces in ``traces.csv``."""
    tasks = _tasks(spec, (float(spec.num_masks),), spec.methods)
    trials = _execute(spec, tasks, keep_first_trace=True)
    rows = _aggregate(spec, trials)
    for r in rows:
        if r.failed:
            r.note = "failed all trials"
    lines = [_header(spec) + f" masks={spec.num_masks}",
             f"{'method':>10s} {'mean_dft_calls':>15s} {'mean_iters':>11s} {'success':>8s}"]
    for r in rows:
        lines.append(f"{r.method:>10s} {r.mean_dft_calls:15.1f} {r.mean_iterations:11.1f} "
                     f"{r.successes:>4d}/{r.trials}")
    lines.append("ordering by mean DFT calls: " + " < ".join(method_ordering(rows)))
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method", "iter", "relerr", "dft_calls", "f"))
    for t in trials:
        if t.trace is not None:
            for rec in t.trace.records:
                writer.writerow((t.method, rec.iter, repr(rec.relerr), rec.dft_calls, repr(rec.f)))
    return ExperimentResult(spec, rows, trials, "\n".join(lines), {"traces.csv": buf.getvalue()})


def realness_study(spec: ExperimentSpec) -> ExperimentResult:
    """Iterations to success with and without the real-valued constraint, per mask count."""
    trials = _execute(spec, _tasks(spec, spec.grid, (spec.algorithm,)))
    rows = _aggregate(spec, trials)
    modes = _modes(spec)
    lines = [_header(spec) + f" budget={spec.max_iters}",
             f"{'masks':>6s} " + " ".join(f"{m:>22s}" for m in modes)]
    for L in spec.grid:
        cells = []
        for mode in modes:
            r = next(r for r in rows if r.grid_value == L and r.mode == mode)
            it = "-" if r.successes * 2 <= r.trials else f"{r.mean_success_iterations:.0f}"
            cells.append(f"{it:>12s} ({r.successes}/{r.trials})".rjust(22))
        lines.append(f"{L:6g} " + " ".join(cells))
    lines.append("'-' marks failure to reach the threshold in most trials within the budget")
    return ExperimentResult(spec, rows, trials, "\n".join(lines))


def theory_check(spec: ExperimentSpec) -> ExperimentResult:
    """Run every theory check at size ``spec.n``; each report is also written as its own CSV."""
    n = spec.size
    seed = spec.master_seed
    rng = stream(seed, SIGNAL, 0)
    x = complex_gaussian(rng, n)
    xr = rng.standard_normal(n)
    z = x + 0.3 * np.linalg.norm(x) / math.sqrt(n) * complex_gaussian(rng, n)
    ens = GaussianEnsemble.sample(n, 10 * n, seed=stream(seed, ENSEMBLE, 0, 0, 0))
    reports = {
        "spectrum_complex": theory.check_hessian_spectrum(x, "complex"),
        "spectrum_real": theory.check_hessian_spectrum(xr, "real"),
        "moments": theory.check_gaussian_moments(seed=seed),
        "expected_gradient": theory.check_expected_gradient(x, z, seed=seed),
        "concentration": theory.measure_gradient_concentration(x, z, [5 * n, 10 * n, 20 * n, 50 * n],
                                                               20, seed=seed),
        "angle": theory.check_angle_bound(x, theory.sample_near(x, 200, np.linalg.norm(x), rng), ens),
        "convexity": theory.scan_local_convexity(xr, seed=seed),
    }
    notes = {
        "spectrum_complex": lambda r: f"max_abs_error={r.max_abs_error:.3e}",
        "spectrum_real": lambda r: f"max_abs_error={r.max_abs_error:.3e}",
        "moments": lambda r: f"max_abs_z={np.max(np.abs(r.z_scores)):.3f}",
        "expected_gradient": lambda r: f"max_abs_z={np.max(np.abs(r.z_scores)):.3f}",
        "concentration": lambda r: "delta_hat=" + "/".join(f"{d:.4g}" for d in r.delta_hat),
        "angle": lambda r: f"min_cosine={r.min_cosine:.4f}",
        "convexity": lambda r: (f"min_eig={r.expectation_min:.4g} "
                                f"violations={r.violation_fraction:.4f}"),
    }
    rows, extra, lines = [], {}, [_header(spec)]
    for name, rep in reports.items():
        ok = bool(rep.passed)
        rows.append(ResultRow(spec.kind, spec.model, "check", float(len(rows)), name, "complex",
                              1, int(ok), float(ok), math.nan, math.nan, math.nan, math.nan,
                              math.nan, math.nan, not ok, notes[name](rep)))
        extra[f"theory_{name}.csv"] = rep.to_csv()
        lines.append(rep.summary())
    return ExperimentResult(spec, rows, [], "\n".join(lines), extra)


RUNNERS = {
    "recovery_sweep": recovery_sweep,
    "noise_sweep": noise_sweep,
    "method_compare": method_compare,
    "realness_study": realness_study,
    "theory_check": theory_check,
}


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.kind](spec)
