"""``pfode`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 check failure.
"""
import argparse
import os
import sys

from . import config as config_mod
from . import experiments, kernels
from .metrics import NonMonotoneMap
from .sampler import DegenerateJacobian

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="pfode", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(experiments.COMMANDS))
    p.add_argument("--config", metavar="PATH", help="TOML experiment config (defaults if omitted)")
    p.add_argument("--seed", type=int, metavar="N", help="override run.seed")
    p.add_argument("--out", metavar="PATH", help="CSV destination (overrides run.output_path; stdout if neither)")
    p.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads; never changes results")
    p.add_argument("--gnuplot-script", action="store_true", help="also write <out>.gp plotting the CSV")
    p.add_argument("--record-runtime", action="store_true",
                   help="fill scan runtime_seconds (breaks byte-identical reruns)")
    return p


def _resolve(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.resolve({"schedule": {}})
    if args.seed is not None:
        if args.seed < 0:
            raise config_mod.ConfigError("--seed must be >= 0")
        cfg["run"]["seed"] = args.seed
    out = args.out or cfg["run"]["output_path"]
    # the destination is not part of the experiment identity
    cfg["run"]["output_path"] = None
    return cfg, out


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise config_mod.ConfigError("--threads must be >= 1")
        cfg, out = _resolve(args)
        if args.gnuplot_script and not out:
            raise config_mod.ConfigError("--gnuplot-script needs --out or run.output_path")
        kernels.set_threads(args.threads)
        fn = experiments.COMMANDS[args.command]
        outcome = fn(cfg, record_runtime=True) if (args.command == "scan" and args.record_runtime) else fn(cfg)
    except (config_mod.ConfigError, experiments.ValidationError) as e:
        print(f"pfode: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DegenerateJacobian, NonMonotoneMap, ArithmeticError) as e:
        print(f"pfode: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"pfode: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    text = outcome.to_csv(experiments.preamble(args.command, cfg))
    if out:
        _write_atomic(out, text)
        if args.gnuplot_script:
            script = (f"set datafile separator ','\nset key autotitle columnhead\nDATA = '{out}'\n"
                      + outcome.gnuplot)
            _write_atomic(f"{out}.gp", script)
    else:
        sys.stdout.write(text)
    for name in outcome.notes:
        print(f"pfode: check failed: {name}", file=sys.stderr)
    return EXIT_OK if outcome.ok else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
