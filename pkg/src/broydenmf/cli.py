"""Command-line entry point: ``broydenmf {factorize,impute,benchmark,nmf,synth,rerun}``.

Every command writes its outputs plus ``manifest.txt`` into ``--out-dir``.
The manifest records the fully resolved command line, so
``broydenmf rerun DIR/manifest.txt --out-dir OTHER`` repeats the run.

Exit codes: 0 success, 2 bad arguments, 3 I/O or parse failure, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import StepSchedule, nmf_run, sgmf_run
from .core import DegenerateStepError, OmfbConfig
from .dataio import (
    DatasetSpec,
    ParseError,
    as_mask,
    export_image_grid,
    file_sha256,
    generate_mask,
    load_matrix,
    save_matrix,
)
from .metrics import TRACE_HEADER, Trace, snr_db
from .minibatch import minibatch_run
from .missing import impute, omfb_missing_run
from .omfb import omfb_run

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
ALGORITHMS = ("omfb", "sgmf")
PATH_ARGS = ("data", "mask_file", "truth")


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_data_args(p):
    p.add_argument("data", help="data file (CSV or MatrixMarket .mtx); columns are instances")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("csv", "mm"), default=None,
                   help="file format (default: from extension)")
    p.add_argument("--orientation", choices=("columns", "rows"), default="columns",
                   help="'rows' if the file stores one instance per row")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--seed", type=int, default=0)


def _add_omfb_args(p, lam_default):
    p.add_argument("--rank", type=int, default=30)
    p.add_argument("--lambda", dest="lam", type=float, default=lam_default)
    p.add_argument("--inner-iters", type=int, default=2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--sampling", choices=("uniform", "sequential"), default="uniform")
    p.add_argument("--ridge-eps", type=float, default=1e-10)
    p.add_argument("--early-stop", type=float, default=None, metavar="TOL")


def _add_mask_args(p):
    p.add_argument("--mask-file", default=None, help="0/1 matrix, 1 = observed")
    p.add_argument("--hide-fraction", type=float, default=None)
    p.add_argument("--mask-seed", type=int, default=0)
    p.add_argument("--mask-mode", choices=("per-column", "bernoulli"), default="per-column")
    p.add_argument("--truth", default=None, help="complete matrix for SNR reporting")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="broydenmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("factorize", help="online factorization (single column or mini-batch)")
    _add_data_args(p)
    _add_omfb_args(p, lam_default=10.0)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--woodbury", action="store_true", help="b x b form of the batch update")

    p = sub.add_parser("impute", help="online factorization with missing entries")
    _add_data_args(p)
    _add_omfb_args(p, lam_default=2.0)
    _add_mask_args(p)
    p.add_argument("--export-grid", default=None, metavar="HxW",
                   help="write observed/imputed PGM grids with HxW images")
    p.add_argument("--grid-cols", type=int, default=20)
    p.add_argument("--image-order", choices=("C", "F"), default="C")

    p = sub.add_parser("benchmark", help="OMF-B vs SGMF traces on a shared sample stream")
    _add_data_args(p)
    p.add_argument("--algorithms", default="omfb,sgmf")
    p.add_argument("--rank", type=int, default=30)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--inner-iters", type=int, default=2)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--sampling", choices=("uniform", "sequential"), default="uniform")
    p.add_argument("--alpha", type=float, nargs="+", default=[0.01, 0.1, 1.0],
                   help="SGMF step scale; one arm per value")
    p.add_argument("--beta", type=float, default=0.6, help="SGMF step decay exponent")
    p.add_argument("--h-mode", choices=("scalar", "per-column"), default="scalar")

    p = sub.add_parser("nmf", help="batch multiplicative-update NMF baseline")
    _add_data_args(p)
    _add_mask_args(p)
    p.add_argument("--rank", type=int, default=30)
    p.add_argument("--iterations", type=int, default=1000)

    p = sub.add_parser("synth", help="write a seeded synthetic low-rank dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=400)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--nonnegative", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    return parser


def _to_argv(parser, args) -> list[str]:
    """Rebuild a complete command line (every option spelled out) from ``args``."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    argv = [args.command]
    for action in subparser._actions:
        if isinstance(action, argparse._HelpAction):
            continue
        value = getattr(args, action.dest)
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[0])
        elif value is None:
            continue
        elif isinstance(value, list):
            argv += [action.option_strings[0]] + [repr(v) if isinstance(v, float) else str(v) for v in value]
        else:
            argv += [action.option_strings[0], repr(value) if isinstance(value, float) else str(value)]
    return argv


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, parser, args, outputs, started):
    lines = [
        f"command={args.command}",
        f"version={__version__}",
        f"argv={json.dumps(_to_argv(parser, args))}",
    ]
    for key, value in sorted(vars(args).items()):
        if key != "command":
            lines.append(f"config.{key}={value}")
    data = getattr(args, "data", None)
    if data is not None:
        lines.append(f"dataset={data}")
        lines.append(f"dataset_sha256={file_sha256(data)}")
    lines.append(f"started={started}")
    lines.append(f"finished={_now()}")
    for name, out in outputs.items():
        lines.append(f"output.{name}={out}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and "=" in line:
                key, value = line.split("=", 1)
                entries[key] = value
    if "argv" not in entries:
        raise UsageError(f"{path}: not a manifest (no argv entry)")
    return entries


def _load(args):
    spec = DatasetSpec(args.data, format=args.format, orientation=args.orientation, header=args.header)
    return load_matrix(spec)


def _load_plain(path, args):
    Y, mask = load_matrix(DatasetSpec(path, orientation=args.orientation, header=args.header))
    if mask is not None:
        raise UsageError(f"{path}: must not contain missing values")
    return Y


def _resolve_mask(args, Y, nan_mask, required):
    """Return ``(mask, truth)`` from NaN cells, --mask-file or --hide-fraction."""
    sources = [s for s, on in (("NaN cells", nan_mask is not None),
                               ("--mask-file", args.mask_file is not None),
                               ("--hide-fraction", args.hide_fraction is not None)) if on]
    if len(sources) > 1:
        raise UsageError(f"conflicting mask sources: {', '.join(sources)}")
    truth = None
    if nan_mask is not None:
        mask = nan_mask
    elif args.mask_file is not None:
        mask = as_mask(_load_plain(args.mask_file, args), Y.shape)
        truth = Y
    elif args.hide_fraction is not None:
        mask = generate_mask(*Y.shape, args.hide_fraction, mode=args.mask_mode, seed=args.mask_seed)
        truth = Y
    elif required:
        raise UsageError("data has no missing values; give --mask-file or --hide-fraction")
    else:
        mask = None
    if args.truth is not None:
        truth = _load_plain(args.truth, args)
        if truth.shape != Y.shape:
            raise UsageError(f"--truth shape {truth.shape} does not match data {Y.shape}")
    return mask, truth


def _config(args):
    return OmfbConfig(rank=args.rank, lam=args.lam, inner_iters=args.inner_iters,
                      epochs=args.epochs, sampling=args.sampling, seed=args.seed,
                      ridge_eps=args.ridge_eps, early_stop_tol=args.early_stop,
                      woodbury=getattr(args, "woodbury", False))


def _check_finite(**arrays):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"{name} contains non-finite values")


def _write_kv(path, items):
    with open(path, "w") as fh:
        for key, value in items:
            if isinstance(value, (float, np.floating)):
                value = repr(float(value))
            fh.write(f"{key}={value}\n")


def cmd_factorize(args, out):
    Y, mask = _load(args)
    if mask is not None:
        raise UsageError("data has missing values; use the impute command")
    if args.woodbury and args.batch_size == 1:
        raise UsageError("--woodbury applies only with --batch-size > 1")
    config = _config(args)
    trace = Trace()
    if args.batch_size == 1:
        state = omfb_run(Y, config, trace)
    else:
        if not 1 <= args.batch_size <= Y.shape[1]:
            raise UsageError(f"--batch-size must be in [1, {Y.shape[1]}]")
        state = minibatch_run(Y, args.batch_size, config, trace)
    _check_finite(dictionary=state.dictionary, coefficients=state.coefficients)
    save_matrix(out("dictionary", "dictionary.csv"), state.dictionary)
    save_matrix(out("coefficients", "coefficients.csv"), state.coefficients)
    trace.to_csv(out("trace", "trace.csv"))
    if len(trace):
        print(f"final error {trace[-1].frobenius_error:.6g} "
              f"(relative {trace[-1].frobenius_error / np.linalg.norm(Y):.3e})")


def _snr_report(truth, estimate, mask, observed):
    items = [("snr_all_db", snr_db(truth, estimate)),
             ("snr_zero_fill_all_db", snr_db(truth, observed))]
    if mask is not None and not mask.all():
        items += [("snr_missing_db", snr_db(truth, estimate, mask, "missing")),
                  ("snr_zero_fill_missing_db", snr_db(truth, observed, mask, "missing"))]
    return items


def _parse_grid(spec):
    try:
        h, w = (int(v) for v in spec.lower().split("x"))
    except ValueError:
        raise UsageError(f"--export-grid expects HxW, got {spec!r}") from None
    return h, w


def cmd_impute(args, out):
    Y, nan_mask = _load(args)
    mask, truth = _resolve_mask(args, Y, nan_mask, required=True)
    grid = _parse_grid(args.export_grid) if args.export_grid else None
    if grid and grid[0] * grid[1] != Y.shape[0]:
        raise UsageError(f"--export-grid {args.export_grid} needs {grid[0] * grid[1]} rows, data has {Y.shape[0]}")
    observed = np.where(mask, Y, 0.0)
    config = _config(args)
    trace, hidden = Trace(), Trace()
    state = omfb_missing_run(observed, mask, config, trace, truth=truth,
                             truth_trace=hidden if truth is not None else None)
    _check_finite(dictionary=state.dictionary, coefficients=state.coefficients)
    filled = impute(state, mask, observed)
    save_matrix(out("imputed", "imputed.csv"), filled)
    save_matrix(out("dictionary", "dictionary.csv"), state.dictionary)
    save_matrix(out("coefficients", "coefficients.csv"), state.coefficients)
    trace.to_csv(out("trace", "trace.csv"))
    if truth is not None:
        hidden.to_csv(out("trace_hidden", "trace_hidden.csv"))
        items = _snr_report(truth, filled, mask, observed)
        _write_kv(out("snr", "snr.txt"), items)
        print(" ".join(f"{k}={v:.3f}" for k, v in items))
    if state.skipped:
        print(f"skipped {state.skipped} fully unobserved column visits", file=sys.stderr)
    if grid:
        export_image_grid(observed, *grid, args.grid_cols, out("grid_observed", "observed.pgm"), args.image_order)
        export_image_grid(filled, *grid, args.grid_cols, out("grid_imputed", "imputed.pgm"), args.image_order)


def merge_traces(traces: dict) -> list[list[str]]:
    """Join per-arm traces on ``samples``; cells are blank where an arm has no record."""
    keys = sorted({r.samples_processed for t in traces.values() for r in t})
    rows = [["samples"] + [f"{arm}_{col}" for arm in traces for col in TRACE_HEADER[1:]]]
    index = {arm: {r.samples_processed: r for r in t} for arm, t in traces.items()}
    for s in keys:
        row = [str(s)]
        for arm in traces:
            rec = index[arm].get(s)
            row += [repr(rec.wall_seconds), repr(rec.frobenius_error)] if rec else ["", ""]
        rows.append(row)
    return rows


def cmd_benchmark(args, out):
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown or not algorithms:
        raise UsageError(f"unknown algorithm(s) {unknown}; choose from {','.join(ALGORITHMS)}")
    Y, mask = _load(args)
    if mask is not None:
        raise UsageError("benchmark needs complete data")
    if not 1 <= args.batch_size <= Y.shape[1]:
        raise UsageError(f"--batch-size must be in [1, {Y.shape[1]}]")
    traces = {}
    if "omfb" in algorithms:
        config = OmfbConfig(rank=args.rank, lam=args.lam, inner_iters=args.inner_iters,
                            epochs=args.epochs, sampling=args.sampling, seed=args.seed)
        trace = Trace()
        if args.batch_size == 1:
            omfb_run(Y, config, trace)
        else:
            minibatch_run(Y, args.batch_size, config, trace)
        traces["omfb"] = trace
    if "sgmf" in algorithms:
        for alpha in args.alpha:
            schedule = StepSchedule(alpha, args.beta)
            trace = Trace()
            sgmf_run(Y, args.rank, schedule, schedule, epochs=args.epochs, batch_size=args.batch_size,
                     seed=args.seed, sampling=args.sampling, h_mode=args.h_mode, trace=trace)
            traces[f"sgmf_a{alpha!r}"] = trace
    for arm, trace in traces.items():
        trace.to_csv(out(f"trace_{arm}", f"trace_{arm}.csv"))
    with open(out("comparison", "comparison.csv"), "w", newline="") as fh:
        for row in merge_traces(traces):
            fh.write(",".join(row) + "\n")
    for arm, trace in traces.items():
        if len(trace):
            print(f"{arm}: final error {trace[-1].frobenius_error:.6g} "
                  f"after {trace[-1].samples_processed} samples, {trace[-1].wall_seconds:.3f}s")


def cmd_nmf(args, out):
    Y, nan_mask = _load(args)
    mask, truth = _resolve_mask(args, Y, nan_mask, required=False)
    if mask is not None:
        Y = np.where(mask, Y, 0.0)
    trace = Trace()
    W, H = nmf_run(Y, args.rank, args.iterations, seed=args.seed, mask=mask, trace=trace)
    _check_finite(W=W, H=H)
    save_matrix(out("W", "W.csv"), W)
    save_matrix(out("H", "H.csv"), H)
    trace.to_csv(out("trace", "trace.csv"))
    if truth is not None:
        filled = W @ H if mask is None else np.where(mask, Y, W @ H)
        items = _snr_report(truth, filled, mask, Y)
        _write_kv(out("snr", "snr.txt"), items)
        print(" ".join(f"{k}={v:.3f}" for k, v in items))


def cmd_synth(args, out):
    rng = np.random.default_rng(args.seed)
    if args.nonnegative:
        C = rng.random((args.rows, args.rank))
        X = rng.random((args.rank, args.cols))
    else:
        C = rng.standard_normal((args.rows, args.rank))
        X = rng.standard_normal((args.rank, args.cols))
    Y = C @ X + args.noise * rng.standard_normal((args.rows, args.cols))
    if args.nonnegative:
        Y = np.maximum(Y, 0.0)
    save_matrix(args.out, Y)


COMMANDS = {
    "factorize": cmd_factorize,
    "impute": cmd_impute,
    "benchmark": cmd_benchmark,
    "nmf": cmd_nmf,
    "synth": cmd_synth,
}


def _run(parser, args):
    if args.command == "rerun":
        manifest = read_manifest(args.manifest)
        argv = json.loads(manifest["argv"])
        new_args = parser.parse_args(argv)
        new_args.out_dir = args.out_dir
        recorded = manifest.get("dataset_sha256")
        if recorded is not None and file_sha256(new_args.data) != recorded:
            raise UsageError(f"dataset {new_args.data} changed since the manifest was written")
        return _run(parser, new_args)

    for name in PATH_ARGS:
        if getattr(args, name, None) is not None:
            setattr(args, name, os.path.abspath(getattr(args, name)))
    if args.command == "synth":
        cmd_synth(args, None)
        return EXIT_OK

    os.makedirs(args.out_dir, exist_ok=True)
    outputs = {}

    def out(name, filename):
        path = os.path.join(args.out_dir, filename)
        outputs[name] = path
        return path

    started = _now()
    COMMANDS[args.command](args, out)
    write_manifest(os.path.join(args.out_dir, "manifest.txt"), parser, args, outputs, started)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(parser, args)
    except UsageError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (OSError, ParseError) as exc:
        code, msg = EXIT_IO, str(exc)
    except (np.linalg.LinAlgError, DegenerateStepError, FloatingPointError, NumericalError) as exc:
        code, msg = EXIT_NUMERIC, f"numerical failure: {exc}"
    except ValueError as exc:
        code, msg = EXIT_USAGE, str(exc)
    print(f"broydenmf: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
