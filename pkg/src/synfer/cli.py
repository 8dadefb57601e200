"""Command-line surface.

Five subcommands: `summarize` releases the Gram summary of a CSV,
`synthesize` draws a synthetic copy, `fit` solves the corrected
estimating equation on a summary plus synthetic CSV, `simulate` runs a
Monte Carlo scenario, and `diagnose` probes generator transportability.
Every command writes a run manifest (resolved configuration, input
digests, wall clock) beside its outputs; outputs themselves depend only
on inputs, flags, and seed, so reruns are byte-identical.

Exit codes: 0 success, 2 input error, 3 numerical error, 4 instability.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, InstabilityError, NumericalError
from .fileio import sha256_file, write_csv, write_json
from .estimator import (
    AlignedSynthetic,
    SolveOptions,
    solve_corrected,
    whiten_recolor,
)
from .genrand import GENERATOR_KINDS, RngStream, fit_generator, sample_synthetic
from .links import DEFAULT_RECIPROCAL_BOUND, LINK_NAMES, get_link
from .simlab import ExperimentConfig, bias_diagnostic, run_experiment
from .summary import (
    build_gram,
    load_dataset_csv,
    load_gram,
    read_table_csv,
    save_gram,
)
from .variance import BootstrapConfig, attach_variance

_EXIT_INPUT = 2
_EXIT_NUMERICAL = 3
_EXIT_UNSTABLE = 4


def _default_threads() -> int:
    env = os.environ.get("SYNFER_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _write_manifest(command: str, config: dict, inputs: list[str | Path],
                    outputs: list[str | Path], started: float) -> None:
    primary = Path(outputs[0])
    manifest = {
        "command": command,
        "config": config,
        "version": __version__,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "wall_clock_utc": datetime.datetime.now(datetime.timezone.utc)
        .isoformat(timespec="seconds"),
        "elapsed_seconds": round(time.monotonic() - started, 3),
    }
    write_json(manifest, primary.with_name(primary.name + ".manifest.json"))


def _cmd_summarize(args) -> int:
    started = time.monotonic()
    data = load_dataset_csv(args.csv, args.outcome)
    save_gram(build_gram(data), args.out)
    _write_manifest(
        "summarize",
        {"csv": str(args.csv), "outcome": args.outcome, "out": str(args.out)},
        [args.csv], [args.out], started,
    )
    return 0


def _cmd_synthesize(args) -> int:
    started = time.monotonic()
    data = load_dataset_csv(args.csv, args.outcome)
    model = fit_generator(data, args.generator, bias_knob=args.bias_knob,
                          bandwidth=args.bandwidth)
    design, outcome = sample_synthetic(model, args.m, RngStream(args.seed))
    header = list(data.labels[1:-1]) + [data.labels[-1]]
    rows = np.column_stack([design[:, 1:], outcome])
    write_csv(args.out, header, rows)
    _write_manifest(
        "synthesize",
        {"csv": str(args.csv), "outcome": args.outcome,
         "generator": args.generator, "m": args.m, "seed": args.seed,
         "bias_knob": args.bias_knob, "bandwidth": args.bandwidth,
         "out": str(args.out)},
        [args.csv], [args.out], started,
    )
    return 0


def _load_synthetic(path, gram) -> tuple[np.ndarray, np.ndarray | None]:
    """Synthetic design (with injected intercept) and optional outcome.

    Columns are matched to the summary's covariate labels by name, in
    any file order; the outcome column may be absent (it is only needed
    for the robust variance).
    """
    header, data = read_table_csv(path)
    outcome_name = gram.labels[-1]
    expected = gram.labels[1:-1]
    got = tuple(name for name in header if name != outcome_name)
    if set(got) != set(expected):
        raise InputError(
            "summary and synthetic covariates disagree: "
            f"summary has [{', '.join(expected)}]; "
            f"synthetic file has [{', '.join(got)}]"
        )
    order = [header.index(name) for name in expected]
    design = np.column_stack([np.ones(data.shape[0]), data[:, order]])
    outcome = None
    if outcome_name in header:
        outcome = data[:, header.index(outcome_name)]
    return design, outcome


def _cmd_fit(args) -> int:
    started = time.monotonic()
    gram = load_gram(args.gram)
    syn_design, syn_outcome = _load_synthetic(args.synthetic, gram)
    link = get_link(args.link, bound=args.link_bound)
    include_outcome = args.variance == "sandwich"
    if include_outcome and syn_outcome is None:
        raise InputError(
            "sandwich variance needs the synthetic outcome column "
            f"{gram.labels[-1]!r} in {args.synthetic}"
        )

    if args.whiten == "on":
        if include_outcome:
            block = np.column_stack([syn_design, syn_outcome])
            aligned = whiten_recolor(block, gram, include_outcome=True)
        else:
            aligned = whiten_recolor(syn_design, gram)
    else:
        aligned = AlignedSynthetic.unaligned(
            syn_design, syn_outcome if include_outcome else None
        )

    opts = SolveOptions(max_iter=args.max_iter, tol=args.tol)
    fit = solve_corrected(aligned, gram, link, opts)
    boot_cfg = BootstrapConfig(b=args.bootstrap, seed=args.seed,
                               mode=args.variance)
    fit, report = attach_variance(
        fit, gram, aligned, link, boot_cfg, level=args.level,
        threads=args.threads, keep_draws=args.dump_draws is not None,
    )

    labels = gram.labels[:-1]
    payload = {
        "link": link.name,
        "labels": list(labels),
        "n": gram.n,
        "m": aligned.m,
        "whiten": args.whiten,
        "beta": fit.beta,
        "se": fit.se,
        "ci_level": args.level,
        "ci": fit.ci,
        "variance": fit.variance,
        "trace": list(fit.trace),
        "bootstrap": {
            "replicates": args.bootstrap,
            "seed": args.seed,
            "mode": args.variance,
            "dropped": report.dropped,
        },
    }
    write_json(payload, args.out)
    outputs = [args.out]
    if args.dump_draws is not None:
        write_csv(args.dump_draws, list(labels), report.draws)
        outputs.append(args.dump_draws)
    _write_manifest(
        "fit",
        {"gram": str(args.gram), "synthetic": str(args.synthetic),
         "link": args.link, "link_bound": args.link_bound,
         "whiten": args.whiten, "variance": args.variance,
         "tol": args.tol, "max_iter": args.max_iter,
         "bootstrap": args.bootstrap, "level": args.level,
         "seed": args.seed, "threads": args.threads, "out": str(args.out)},
        [args.gram, args.synthetic], outputs, started,
    )
    return 0


def _cmd_simulate(args) -> int:
    started = time.monotonic()
    cfg = ExperimentConfig(
        setting=args.setting, family=args.family, n=args.n, m=args.m,
        reps=args.reps, bootstrap_b=args.bootstrap,
        generator=args.generator, bias_knob=args.bias_knob,
        seed=args.seed, threads=args.threads,
    )
    table = run_experiment(cfg)
    table.to_csv(args.out)
    _write_manifest(
        "simulate",
        {"setting": args.setting, "family": args.family, "n": args.n,
         "m": args.m, "reps": args.reps, "bootstrap": args.bootstrap,
         "generator": args.generator, "bias_knob": args.bias_knob,
         "seed": args.seed, "threads": args.threads,
         "completed": table.completed, "failed": table.failed,
         "naive_failed": table.naive_failed, "out": str(args.out)},
        [], [args.out], started,
    )
    return 0


def _cmd_diagnose(args) -> int:
    started = time.monotonic()
    result = bias_diagnostic(
        family=args.family, setting=args.setting,
        n_grid=tuple(args.n_grid), reps=args.reps, m_factor=args.m_factor,
        generator=args.generator, bias_knob=args.bias_knob,
        seed=args.seed, threads=args.threads,
    )
    mse_path, maha_path = result.write_csvs(args.out_dir)
    _write_manifest(
        "diagnose",
        {"family": args.family, "setting": args.setting,
         "n_grid": list(args.n_grid), "reps": args.reps,
         "m_factor": args.m_factor, "generator": args.generator,
         "bias_knob": args.bias_knob, "seed": args.seed,
         "threads": args.threads, "out_dir": str(args.out_dir)},
        [], [mse_path, maha_path], started,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synfer",
        description="GLM inference from synthetic data plus Gram-matrix summaries.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="release the Gram summary of a CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("synthesize", help="draw a synthetic copy of a CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--outcome", required=True)
    p.add_argument("--generator", choices=GENERATOR_KINDS,
                   default="gaussian_copula")
    p.add_argument("--m", type=int, required=True, help="synthetic rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bias-knob", type=float, default=1.0)
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("fit", help="corrected fit from summary + synthetic CSV")
    p.add_argument("gram", type=Path, help="Gram summary JSON")
    p.add_argument("synthetic", type=Path, help="synthetic data CSV")
    p.add_argument("--link", choices=LINK_NAMES, required=True)
    p.add_argument("--link-bound", type=float,
                   default=DEFAULT_RECIPROCAL_BOUND,
                   help="lower bound on the linear predictor (reciprocal link)")
    p.add_argument("--whiten", choices=("on", "off"), default="on",
                   help="second-moment alignment (on improves efficiency)")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="sup-norm convergence tolerance for the solver")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--variance", choices=("canonical", "sandwich"),
                   default="canonical")
    p.add_argument("--bootstrap", type=int, default=1000,
                   help="bootstrap replicates")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--dump-draws", type=Path, default=None,
                   help="write per-replicate estimating-function draws as CSV")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    p.add_argument("--setting", choices=("A", "B"), required=True)
    p.add_argument("--family", required=True,
                   choices=("poisson", "logistic", "exponential_log",
                            "arctan_gaussian"))
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--bootstrap", type=int, default=400)
    p.add_argument("--generator", choices=GENERATOR_KINDS,
                   default="gaussian_copula")
    p.add_argument("--bias-knob", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("diagnose", help="transportability diagnostics")
    p.add_argument("--setting", choices=("A", "B"), required=True)
    p.add_argument("--family", required=True,
                   choices=("poisson", "logistic", "exponential_log",
                            "arctan_gaussian"))
    p.add_argument("--n-grid", type=int, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--m-factor", type=int, default=50)
    p.add_argument("--generator", choices=GENERATOR_KINDS,
                   default="gaussian_copula")
    p.add_argument("--bias-knob", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL
    except InstabilityError as exc:
        print(f"unstable: {exc}", file=sys.stderr)
        return _EXIT_UNSTABLE


if __name__ == "__main__":
    raise SystemExit(main())
