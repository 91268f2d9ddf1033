"""Experiment specifications and their flat TOML config files.

A config file is a single table of ``key = value`` pairs, e.g.::

    kind = "recovery_sweep"
    model = "gaussian"
    n = 64
    grid = [2, 3, 7]
    signals = 5
    inits = 2
    master_seed = 1

Anything left out takes the per-kind default from :data:`KIND_DEFAULTS`.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, fields, replace
from typing import Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..solvers import ALGORITHMS

KINDS = ("recovery_sweep", "noise_sweep", "method_compare", "realness_study", "theory_check")
MODELS = ("gaussian", "cdp_octanary", "cdp_binary")
SIGNALS = ("gaussian", "real_gaussian", "image", "real_image")
MODES = ("complex", "real", "both")


class SpecError(ValueError):
    """Invalid experiment specification; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _frange(start, stop, step):
    count = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


RATIO_GRID = _frange(2.0, 10.0, 0.5)
MASK_GRID = tuple(float(L) for L in range(2, 11))
SNR_GRID = _frange(10.0, 55.0, 5.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment.

    ``grid`` holds m/n ratios (Gaussian recovery sweep), mask counts L (CDP
    recovery sweep and the realness study) or SNR values in dB (noise sweep).
    ``signals * inits`` trials run at every grid point. ``shape`` (2-D) takes
    precedence over ``n``.
    """

    kind: str
    model: str = "gaussian"
    n: int = 64
    shape: Optional[Tuple[int, ...]] = None
    grid: Optional[Tuple[float, ...]] = None
    signals: int = 10
    inits: int = 5
    master_seed: int = 0
    output_path: Optional[str] = None
    signal: str = "gaussian"
    mode: str = "complex"
    algorithm: str = "lbfgs"
    methods: Tuple[str, ...] = ("lbfgs", "ncg_hs", "ap", "sd_wolfe")
    num_masks: int = 10
    max_iters: int = 1000
    success_threshold: float = 1e-5
    threads: int = 1

    @property
    def signal_shape(self) -> Tuple[int, ...]:
        return tuple(self.shape) if self.shape else (self.n,)

    @property
    def size(self) -> int:
        return int(math.prod(self.signal_shape))

    @property
    def trials(self) -> int:
        return self.signals * self.inits

    @property
    def grid_name(self) -> str:
        if self.kind == "noise_sweep":
            return "snr_db"
        if self.kind == "recovery_sweep" and self.model == "gaussian":
            return "m_over_n"
        if self.kind in ("recovery_sweep", "realness_study", "method_compare"):
            return "num_masks"
        return "check"

    def outdir(self) -> str:
        return self.output_path or f"results/{self.kind}"


KIND_DEFAULTS = {
    "recovery_sweep": dict(model="gaussian", n=64, signals=10, inits=5, max_iters=1000),
    "noise_sweep": dict(model="cdp_octanary", shape=(64, 64), signal="image", grid=SNR_GRID,
                        signals=2, inits=2, num_masks=10, max_iters=1000),
    "method_compare": dict(model="cdp_octanary", shape=(64, 64), signal="image", signals=10,
                           inits=1, num_masks=10, max_iters=3000),
    "realness_study": dict(model="cdp_octanary", shape=(128, 128), signal="real_image", mode="both",
                           grid=(3.0, 4.0, 5.0, 6.0), signals=5, inits=1, max_iters=3000),
    "theory_check": dict(model="gaussian", n=16, signals=1, inits=1),
}


def _default_grid(kind, model):
    if kind == "recovery_sweep":
        return RATIO_GRID if model == "gaussian" else MASK_GRID
    return ()


def _as_int(name, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise SpecError(name, f"expected an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise SpecError(name, f"must be >= {minimum}, got {value}")
    return value


def _as_choice(name, value, choices):
    if value not in choices:
        raise SpecError(name, f"expected one of {', '.join(choices)}, got {value!r}")
    return value


def validate(spec: ExperimentSpec) -> ExperimentSpec:
    """Check every field; returns a normalized copy."""
    _as_choice("kind", spec.kind, KINDS)
    _as_choice("model", spec.model, MODELS)
    _as_choice("signal", spec.signal, SIGNALS)
    _as_choice("mode", spec.mode, MODES)
    _as_choice("algorithm", spec.algorithm, ALGORITHMS)
    n = _as_int("n", spec.n, 1)
    shape = spec.shape
    if shape is not None:
        if not isinstance(shape, (list, tuple)) or len(shape) not in (1, 2):
            raise SpecError("shape", f"expected [n] or [n1, n2], got {shape!r}")
        shape = tuple(_as_int("shape", s, 1) for s in shape)
    grid = spec.grid
    if grid is None:
        grid = _default_grid(spec.kind, spec.model)
    if not isinstance(grid, (list, tuple)):
        raise SpecError("grid", f"expected a list of numbers, got {grid!r}")
    for g in grid:
        if isinstance(g, bool) or not isinstance(g, (int, float)) or not math.isfinite(g):
            raise SpecError("grid", f"entries must be finite numbers, got {g!r}")
    grid = tuple(float(g) for g in grid)
    if spec.kind in ("recovery_sweep", "noise_sweep", "realness_study") and not grid:
        raise SpecError("grid", "must not be empty")
    if spec.kind == "recovery_sweep" and spec.model == "gaussian" and any(g <= 0 for g in grid):
        raise SpecError("grid", "m/n ratios must be positive")
    if spec.kind in ("realness_study",) or (spec.kind == "recovery_sweep" and spec.model != "gaussian"):
        if any(g < 1 or int(g) != g for g in grid):
            raise SpecError("grid", "mask counts must be positive integers")
    methods = spec.methods
    if isinstance(methods, str) or not isinstance(methods, (list, tuple)) or not methods:
        raise SpecError("methods", f"expected a nonempty list of algorithms, got {methods!r}")
    for m in methods:
        _as_choice("methods", m, ALGORITHMS)
    spec = replace(
        spec, n=n, shape=shape, grid=grid, methods=tuple(methods),
        signals=_as_int("signals", spec.signals, 1), inits=_as_int("inits", spec.inits, 1),
        master_seed=_as_int("master_seed", spec.master_seed, 0),
        num_masks=_as_int("num_masks", spec.num_masks, 1),
        max_iters=_as_int("max_iters", spec.max_iters, 0),
        threads=_as_int("threads", spec.threads, 1),
    )
    if not isinstance(spec.success_threshold, (int, float)) or not spec.success_threshold > 0:
        raise SpecError("success_threshold", "must be a positive number")
    if spec.output_path is not None and not isinstance(spec.output_path, str):
        raise SpecError("output_path", "must be a string")
    if spec.model == "gaussian" and len(spec.signal_shape) != 1:
        raise SpecError("shape", "the Gaussian model takes 1-D signals")
    if spec.signal in ("image", "real_image") and len(spec.signal_shape) != 2:
        raise SpecError("signal", "image signals need a 2-D shape")
    if spec.kind in ("noise_sweep", "method_compare", "realness_study") and spec.model == "gaussian":
        raise SpecError("model", f"{spec.kind} needs a CDP model")
    if spec.mode in ("real", "both") and spec.signal not in ("real_gaussian", "real_image"):
        raise SpecError("mode", "real-constrained recovery needs a real signal")
    return spec


_FIELDS = {f.name for f in fields(ExperimentSpec)}


def make_spec(kind: str, **values) -> ExperimentSpec:
    """Build and validate a spec from ``kind`` plus overrides on its defaults."""
    unknown = sorted(set(values) - _FIELDS)
    if unknown:
        raise SpecError(unknown[0], "unknown key")
    _as_choice("kind", kind, KINDS)
    merged = dict(KIND_DEFAULTS[kind])
    merged.update(values)
    if "n" in values and "shape" not in values:
        merged.pop("shape", None)
        if merged.get("signal") in ("image", "real_image"):
            merged["signal"] = "real_gaussian" if merged["signal"] == "real_image" else "gaussian"
    for key in ("grid", "shape", "methods"):
        if isinstance(merged.get(key), list):
            merged[key] = tuple(merged[key])
    return validate(ExperimentSpec(kind=kind, **merged))


def parse_config(text: str) -> dict:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError("config", f"not valid TOML ({exc})") from None
    for key, value in data.items():
        if isinstance(value, dict):
            raise SpecError(key, "nested tables are not supported; use flat keys")
    return data


def load_spec(path, kind: Optional[str] = None, **overrides) -> ExperimentSpec:
    """Read a config file; ``kind`` (from the CLI subcommand) must agree with the file's."""
    with open(path, "r", encoding="utf-8") as fh:
        data = parse_config(fh.read())
    return spec_from_mapping(data, kind, **overrides)


def spec_from_mapping(data: dict, kind: Optional[str] = None, **overrides) -> ExperimentSpec:
    data = dict(data)
    file_kind = data.pop("kind", None)
    if kind is not None and file_kind is not None and file_kind != kind:
        raise SpecError("kind", f"config says {file_kind!r} but the command runs {kind!r}")
    kind = kind or file_kind
    if kind is None:
        raise SpecError("kind", "missing")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return make_spec(kind, **data)
