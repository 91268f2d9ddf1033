"""``lsqphase`` command-line entry point.

Subcommands::

    recover   one instance, prints the per-iteration trace
    sweep     recovery_sweep     (success rate vs m/n or L)
    compare   method_compare     (DFT calls per method)
    noise     noise_sweep        (relerr in dB vs SNR)
    realness  realness_study     (real-constrained vs complex recovery)
    theory    theory_check       (expectation and concentration checks)

Exit codes: 0 success, 1 specification error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys

from ..measurement import measure_intensity
from ..objective import Objective
from ..solvers import ALGORITHMS, SolverConfig, run
from .config import SpecError, load_spec, make_spec, parse_config
from .experiments import ENSEMBLE, make_ensemble, make_init, make_signal, run_experiment, stream

EXIT_OK, EXIT_SPEC, EXIT_IO = 0, 1, 2

COMMANDS = {
    "sweep": "recovery_sweep",
    "compare": "method_compare",
    "noise": "noise_sweep",
    "realness": "realness_study",
    "theory": "theory_check",
}


def _common(p):
    p.add_argument("--config", metavar="PATH", help="flat TOML experiment file")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, metavar="N", help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsqphase", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    rec = sub.add_parser("recover", help="solve one instance and print its trace")
    _common(rec)
    rec.add_argument("--model", default=None, choices=("gaussian", "cdp_octanary", "cdp_binary"))
    rec.add_argument("--n", type=int, default=None, help="signal length")
    rec.add_argument("--ratio", type=float, default=7.0, help="m/n for the Gaussian model")
    rec.add_argument("--masks", type=int, default=None, help="mask count for CDP models")
    rec.add_argument("--algorithm", default=None, choices=ALGORITHMS)
    rec.add_argument("--mode", default=None, choices=("complex", "real"))
    rec.add_argument("--max-iters", type=int, default=None)

    for name, kind in COMMANDS.items():
        _common(sub.add_parser(name, help=f"run a {kind} experiment"))
    return parser


def run_from_config(path, kind=None, seed=None, out=None, threads=None) -> int:
    """Execute the experiment described by ``path``; returns an exit code."""
    try:
        spec = load_spec(path, kind, master_seed=seed, output_path=out, threads=threads)
    except SpecError as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return _execute(spec)


def _execute(spec) -> int:
    result = run_experiment(spec)
    try:
        paths = result.write()
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    print(result.summary)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _recover_spec(args):
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = parse_config(fh.read())
        values.pop("kind", None)
    overrides = dict(model=args.model, n=args.n, algorithm=args.algorithm,
                     max_iters=args.max_iters, master_seed=args.seed)
    if args.mode == "real":
        overrides.update(mode="real", signal="real_gaussian")
    values.update({k: v for k, v in overrides.items() if v is not None})
    model = values.get("model", "gaussian")
    if model == "gaussian":
        values["grid"] = [args.ratio]
    else:
        values["grid"] = [args.masks or values.get("num_masks", 10)]
    return make_spec("recovery_sweep", **values)


def _recover(args) -> int:
    try:
        spec = _recover_spec(args)
    except SpecError as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    x = make_signal(spec, 0)
    ens = make_ensemble(spec, spec.grid[0], stream(spec.master_seed, ENSEMBLE, 0, 0, 0))
    obj = Objective(ens, measure_intensity(ens, x), mode=spec.mode)
    _, trace = run(obj, SolverConfig(algorithm=spec.algorithm, max_iters=spec.max_iters),
                   make_init(spec, 0, 0), x_true=x)
    text = trace.to_csv()
    if args.out:
        try:
            os.makedirs(args.out, exist_ok=True)
            trace.to_csv(os.path.join(args.out, "trace.csv"))
        except OSError as exc:
            print(f"error: cannot write trace: {exc}", file=sys.stderr)
            return EXIT_IO
    sys.stdout.write(text)
    print(f"# {trace.termination_reason} after {trace.iterations} iterations, "
          f"relerr {trace.final_relerr:.3e}, dft_calls {trace.dft_calls}, matvecs {trace.matvecs}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "recover":
        return _recover(args)
    kind = COMMANDS[args.command]
    if args.config:
        return run_from_config(args.config, kind, args.seed, args.out, args.threads)
    try:
        spec = make_spec(kind, **{k: v for k, v in dict(master_seed=args.seed, output_path=args.out,
                                                         threads=args.threads).items() if v is not None})
    except SpecError as exc:
        print(f"error: invalid spec: {exc}", file=sys.stderr)
        return EXIT_SPEC
    return _execute(spec)


if __name__ == "__main__":
    sys.exit(main())
