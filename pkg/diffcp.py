"""
diffcp command line.

    python diffcp.py simulate        --model ou --situation ii --n 100000 --reps 2 --out paths/
    python diffcp.py analyze         paths/path_0.csv --model ou --out reports/
    python diffcp.py experiment      --model ou --situation i --reps 300 --out results/
    python diffcp.py critical-values --k 1 2 --levels 0.05 0.5 --out cv.csv
    python diffcp.py limit-law       --J 1 --reps 10000 --out limit/

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path as FsPath
from typing import List, Optional

import pandas as pd

from core.changepoint import compute_J
from core.config import build_dataclass, check_sections, read_json_config, setup_logging
from core.cusum import MonteCarloConfig
from core.errors import EXIT_OK, ConfigError, DiffcpError, exit_code_for
from core.estimate import OptimizerConfig
from core.experiment import (PLOT_HIST, ExperimentSpec, critical_value_table, histogram_frame,
                             limit_law_summary, run_experiment, simulate_to_dir, write_csv)
from core.model import get_model
from core.path import read_path_csv
from core.pipeline import PipelineConfig, run_pipeline

logger = logging.getLogger("diffcp")

CONFIG_SCHEMA = {
    "experiment": ExperimentSpec,
    "pipeline": PipelineConfig,
    "optimizer": OptimizerConfig,
    "monte_carlo": MonteCarloConfig,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# ==================================================
# ARGUMENTS
# ==================================================
def _spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=["ou", "hyperbolic"])
    p.add_argument("--situation", choices=["i", "ii", "iii"])
    p.add_argument("--n", type=int)
    p.add_argument("--h-exponent", type=float, dest="h_exponent")
    p.add_argument("--change", choices=["fixed", "shrinking"])
    p.add_argument("--drift-change", type=float, dest="drift_change")
    p.add_argument("--theta-exponent", type=float, dest="theta_exponent")
    p.add_argument("--reps", type=int, dest="replications")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--substeps", type=int)
    p.add_argument("--simulator", choices=["auto", "euler", "exact"])
    p.add_argument("--out", dest="output_dir")


def _pipeline_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--level", type=float)
    p.add_argument("--drift-test", choices=["either", "both", "t1", "t2"], dest="drift_test")
    p.add_argument("--same-point-reps", type=int, dest="same_point_reps")
    p.add_argument("--cv-source", choices=["table", "mc"], dest="cv_source")
    p.add_argument("--pipeline-seed", type=int, dest="pipeline_seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffcp", description="Change-point inference for ergodic diffusions")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--config", help="JSON config document")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate paths of an experiment situation")
    _spec_args(p)

    p = sub.add_parser("analyze", help="run the full pipeline on a path CSV")
    p.add_argument("csv")
    p.add_argument("--model", default="ou")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--profiles", action="store_true", help="also write contrast profiles")
    _pipeline_args(p)

    p = sub.add_parser("experiment", help="replicated simulation experiment")
    _spec_args(p)
    _pipeline_args(p)

    p = sub.add_parser("critical-values", help="tabulate sup-bridge quantiles")
    p.add_argument("--k", type=int, nargs="+", default=[1, 2])
    p.add_argument("--levels", type=float, nargs="+", default=[0.05])
    p.add_argument("--grid", type=int, dest="n_grid")
    p.add_argument("--reps", type=int, dest="n_reps")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="critical_values.csv")

    p = sub.add_parser("limit-law", help="sample the change-point limit law")
    p.add_argument("--J", type=float, dest="J")
    p.add_argument("--model", choices=["ou", "hyperbolic"])
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--direction", type=float, nargs="+")
    p.add_argument("--kind", choices=["beta", "alpha"], default="beta")
    p.add_argument("--method", choices=["auto", "analytic", "mc"], default="auto")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--v-max", type=float, dest="v_max")
    p.add_argument("--grid-step", type=float, dest="grid_step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="limit_law")
    return parser


def _section(doc: dict, name: str, overrides: Optional[dict] = None):
    return build_dataclass(CONFIG_SCHEMA[name], doc.get(name), overrides, section=name)


def _pipeline_overrides(args) -> dict:
    return {"level": args.level, "drift_test": args.drift_test, "same_point_reps": args.same_point_reps,
            "cv_source": args.cv_source, "seed": args.pipeline_seed}


def _spec_overrides(args) -> dict:
    keys = ("model", "situation", "n", "h_exponent", "change", "drift_change", "theta_exponent",
            "replications", "seed", "workers", "substeps", "simulator", "output_dir")
    return {k: getattr(args, k) for k in keys}


# ==================================================
# COMMANDS
# ==================================================
def cmd_simulate(args, doc: dict) -> int:
    spec = _section(doc, "experiment", _spec_overrides(args))
    manifest = simulate_to_dir(spec)
    print(f"wrote {len(manifest['paths'])} paths to {spec.output_dir}")
    return EXIT_OK


def cmd_analyze(args, doc: dict) -> int:
    overrides = _pipeline_overrides(args)
    if args.profiles:
        overrides["keep_profiles"] = True
    config = _section(doc, "pipeline", overrides)
    optimizer = _section(doc, "optimizer")
    mc = _section(doc, "monte_carlo")
    model = get_model(args.model)
    path = read_path_csv(args.csv, expected_dim=model.state_dim)
    report = run_pipeline(path, model, config, optimizer, mc)

    source = FsPath(args.csv)
    out = FsPath(args.output_dir) if args.output_dir else source.parent
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{source.stem}.report.json").write_text(report.to_json(), encoding="utf-8", newline="\n")
        (out / f"{source.stem}.report.txt").write_text(report.to_text(), encoding="utf-8", newline="\n")
        if args.profiles:
            for name, est in (("tau_alpha", report.tau_alpha), ("tau_beta", report.tau_beta)):
                if est is not None and est.profile is not None:
                    est.write_profile_csv(out / f"{source.stem}.{name}_profile.csv")
    except OSError as exc:
        raise ConfigError(f"cannot write report to {out}: {exc}") from exc
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_experiment(args, doc: dict) -> int:
    spec = _section(doc, "experiment", _spec_overrides(args))
    config = _section(doc, "pipeline", _pipeline_overrides(args))
    optimizer = _section(doc, "optimizer")
    mc = _section(doc, "monte_carlo")
    result = run_experiment(spec, config, optimizer, mc)
    print(result["aggregates"].to_string(index=False))
    return EXIT_OK


def cmd_critical_values(args, doc: dict) -> int:
    mc = _section(doc, "monte_carlo", {"n_grid": args.n_grid, "n_reps": args.n_reps, "seed": args.seed})
    table = critical_value_table(args.k, args.levels, mc)
    write_csv(table, FsPath(args.out))
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_limit_law(args, doc: dict) -> int:
    if args.J is not None:
        J = args.J
    else:
        if not (args.model and args.alpha and args.beta and args.direction):
            raise ConfigError("limit-law needs --J or all of --model, --alpha, --beta, --direction")
        J = compute_J(get_model(args.model), args.alpha, args.beta, args.direction,
                      kind=args.kind, method=args.method, seed=args.seed)
        logger.info("J = %.6g", J)
    sample, summary = limit_law_summary(J, args.reps, args.seed, args.v_max, args.grid_step)
    out = FsPath(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(summary, out / "summary.csv")
    write_csv(pd.DataFrame({"argmin": sample}), out / "samples.csv")
    hist = histogram_frame(sample, sample)
    write_csv(hist, out / "histogram.csv")
    script = PLOT_HIST.format(csv="histogram.csv", png="histogram.png", title=f"argmin law, J={J:.4g}")
    (out / "plot_histogram.py").write_text(script, encoding="utf-8", newline="\n")
    print(summary.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "experiment": cmd_experiment,
    "critical-values": cmd_critical_values,
    "limit-law": cmd_limit_law,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.verbose, args.quiet)
        doc = read_json_config(args.config) if args.config else {}
        check_sections(doc, CONFIG_SCHEMA)
        return COMMANDS[args.command](args, doc)
    except DiffcpError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
