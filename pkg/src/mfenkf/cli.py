"""Command-line entry point: ``mfenkf {build-basis,run,sweep,rank-hist} -c CONFIG``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
1 any other package error.
"""

import argparse
import logging
import sys

from .errors import ConfigError, MfenkfError, NumericalDivergence

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", required=True, help="INI experiment file")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--scale", choices=("desk", "paper"), help="override experiment.scale")
    common.add_argument("-o", "--output", help="override experiment.output")
    common.add_argument("-j", "--workers", type=int, help="override experiment.workers")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mfenkf", description="Multifidelity EnKF twin experiments")
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("build-basis", parents=[common], help="build and archive the POD/Galerkin basis")
    b.add_argument("--force", action="store_true", help="rebuild even if the archive exists")
    sub.add_parser("run", parents=[common], help="run the configured filter")
    sub.add_parser("sweep", parents=[common], help="run every cell of the [sweep] grid")
    sub.add_parser("rank-hist", parents=[common], help="pooled rank histograms and KL to uniform")
    return p


def _overrides(args):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    if args.seed is not None:
        out["experiment.seed"] = str(args.seed)
    if args.scale is not None:
        out["experiment.scale"] = args.scale
    if args.output is not None:
        out["experiment.output"] = args.output
    if args.workers is not None:
        out["experiment.workers"] = str(args.workers)
    return out


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import experiment
    from .config import load_config

    try:
        cfg = load_config(args.config, _overrides(args))
        out = cfg.experiment.output
        if args.command == "build-basis":
            rom = experiment.build_basis(cfg, force=args.force)
            print(f"basis: {experiment.basis_path(cfg)} ({rom.r} modes)")
        elif args.command == "run":
            for k, res in enumerate(experiment.run_twin_experiment(cfg, out)):
                print(f"run {k} seed {res.seed}: rmse {res.rmse:.6g}")
        elif args.command == "sweep":
            rows = experiment.sweep(cfg, out)
            for row in rows:
                print(f"cell {row['cell']}: rmse {row['rmse']:.6g} {row['status']}")
        else:
            for name, h in experiment.rank_histograms(cfg, out).items():
                print(f"{name}: KL to uniform {h.kl_to_uniform():.4g} nats over {h.total} tallies")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MfenkfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
