"""Command line entry point: one subcommand per experiment kind.

Exit codes: 0 success, 2 invalid spec or arguments, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import KINDS, ExperimentSpec, SpecError, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="clusterwalk", description="Percolation cluster random-walk experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--spec", help="YAML experiment spec")
        p.add_argument("--out", help="artifact directory")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None, help="master seed, overrides the spec")
        if kind == "report":
            p.add_argument("inputs", nargs="*", help="artifact directories to merge")
    return parser


def load_spec(args):
    data = {}
    if args.spec:
        import yaml
        try:
            with open(args.spec) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise SpecError({"spec": str(exc)}) from exc
        except yaml.YAMLError as exc:
            raise SpecError({"spec": f"not valid YAML: {exc}"}) from exc
        if not isinstance(data, dict):
            raise SpecError({"spec": "top level must be a mapping"})
    if data.get("kind", args.kind) != args.kind:
        raise SpecError({"kind": f"spec is {data['kind']!r} but subcommand is {args.kind!r}"})
    data["kind"] = args.kind
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["threads"] = args.threads
    if args.out is not None:
        data["out"] = args.out
    if args.kind == "report" and args.inputs:
        data["inputs"] = list(args.inputs)
    return ExperimentSpec.from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        spec = load_spec(args)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        out = run_experiment(spec)
    except Exception as exc:  # reported, mapped to the runtime exit code
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
