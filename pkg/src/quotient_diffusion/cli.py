"""Command-line entry point: ``quotient-diffusion <command> [--config PATH] [--seed N] [--out DIR]``."""

import argparse
import json
import logging
import sys

from . import experiments
from .config import ConfigError, load_config

COMMANDS = ("verify", "so2-demo", "shape-demo", "gaussian-exact", "train", "sample")


def build_parser():
    parser = argparse.ArgumentParser(prog="quotient-diffusion", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    common.add_argument("--out", metavar="DIR", default=None, help="output directory (default runs/<command>)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--inject", choices=["curvature-sign"], help="deliberately break a component (test hook)")
        if name == "sample":
            p.add_argument("--checkpoint", metavar="PATH", help="model checkpoint written by `train`")
            p.add_argument("--mode", choices=["ode", "sde"])
            p.add_argument("--variant", choices=["conventional", "quotient"])
            p.add_argument("--n", type=int, help="number of samples")
    return parser


def _overrides(args):
    ov = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        ov["run.seed"] = args.seed
    if getattr(args, "inject", None):
        ov["verify.inject"] = args.inject
    for flag, key in (("mode", "sampler.mode"), ("variant", "sampler.variant"), ("n", "sampler.n_samples")):
        if getattr(args, flag, None) is not None:
            ov[key] = getattr(args, flag)
    return ov


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.command, args.config, _overrides(args))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or f"runs/{args.command}"
    try:
        if args.command == "verify":
            rep = experiments.run_verify(cfg, out)
            for c in rep["checks"]:
                print(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}  value={c['value']:.3e}  threshold={c['threshold']:.1e}")
            print(f"{sum(c['pass'] for c in rep['checks'])}/{rep['n_checks']} checks passed")
            return 0 if rep["passed"] else 1
        if args.command == "so2-demo":
            result = experiments.run_so2_demo(cfg, out)
        elif args.command == "shape-demo":
            result = experiments.run_shape_demo(cfg, out)
        elif args.command == "gaussian-exact":
            result = experiments.run_gaussian_exact(cfg, out)
        elif args.command == "train":
            result = experiments.run_train(cfg, out)
        else:
            result = experiments.run_sample(cfg, out, getattr(args, "checkpoint", None))
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result["metrics"], indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
