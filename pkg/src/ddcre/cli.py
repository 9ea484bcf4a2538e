"""Command line entry point.

    ddcre run [--config FILE] [--m 2 4] [--nsd 2 8] [--method feti bdd]
              [--tol 1e-6] [--out DIR] [--estimate-every 1]
    ddcre compare DIR_OR_TABLE

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 admissibility violation.
"""
import argparse
import sys
from pathlib import Path

from .errors import AdmissibilityViolation, ConfigError, NonConvergence
from .harness import ExperimentConfig, compare_reports, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_ADMISSIBILITY = 0, 1, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="ddcre", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment matrix")
    run.add_argument("--config", type=Path, help="JSON configuration file")
    run.add_argument("--m", type=int, nargs="+", help="mesh parameters (h = L/m)")
    run.add_argument("--nsd", type=int, nargs="+", help="numbers of subdomains")
    run.add_argument("--method", nargs="+", help="bdd, feti and/or monolithic")
    run.add_argument("--tol", type=float, help="relative interface residual target")
    run.add_argument("--out", help="output directory")
    run.add_argument("--estimate-every", dest="estimate_every", type=int,
                     help="iterations between estimator evaluations")
    run.add_argument("--m-ref", dest="m_ref", type=int, help="reference mesh parameter")
    cmp_ = sub.add_parser("compare", help="summarize a table1.csv")
    cmp_.add_argument("path", type=Path, help="table1.csv or the directory holding it")
    return parser


def _config(args):
    overrides = {k: getattr(args, k) for k in
                 ("m", "nsd", "method", "tol", "out", "estimate_every", "m_ref")}
    if args.config is not None:
        return ExperimentConfig.from_json(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            path = args.path / "table1.csv" if args.path.is_dir() else args.path
            if not path.exists():
                raise ConfigError(f"no table at {path}")
            compare_reports(path)
            return EXIT_OK
        cfg = _config(args)
        for f in run_experiment(cfg):
            print(f"wrote {f}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except AdmissibilityViolation as exc:
        print(f"admissibility violated: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY


if __name__ == "__main__":
    sys.exit(main())
