"""Command line: ``sketchkf run`` and ``sketchkf sweep``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigurationError, NumericalError
from .config import load_config
from .experiments import SWEEP_PARAMS, run_experiment, sweep

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _values(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchkf", description="Reduced-complexity Kalman filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment file")
    common.add_argument("--seed", type=int, help="override [experiment].seed")
    common.add_argument("--threads", type=int, help="override [experiment].threads")
    common.add_argument("--out-dir", help="override [experiment].out_dir")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("run", parents=[common], help="run one experiment")
    sw = sub.add_parser("sweep", parents=[common], help="repeat an experiment over parameter values")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, type=_values)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads), ("out_dir", args.out_dir)) if v is not None}
        if overrides:
            config = config.with_updates(experiment=overrides)
        out_dir = config.experiment.out_dir
        if args.command == "run":
            metrics = run_experiment(config, out_dir)
            for label, st in metrics.methods.items():
                print(f"{label:>16s}  rmse {st.rmse_mean:.6g} +- {st.rmse_stderr:.2g}")
        else:
            rows = sweep(config, args.param, args.values, out_dir)
            for r in rows:
                print(f"{args.param}={r.value:<8g} {r.method:>16s}  rmse {r.rmse_mean:.6g} +- {r.rmse_stderr:.2g}")
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
