"""Run every spec in scripts/specs through the CLI and merge the results.

usage: python scripts/run_specs.py [OUT_DIR] [--threads N]
"""
import argparse
import sys
from pathlib import Path

from clusterwalk.cli import main

HERE = Path(__file__).resolve().parent


def run(out, threads):
    dirs = []
    for spec in sorted((HERE / "specs").glob("*.yaml")):
        kind = spec.read_text().split("kind:")[1].split()[0]
        target = out / spec.stem
        code = main([kind, "--spec", str(spec), "--out", str(target), "--threads", str(threads)])
        print(f"{spec.name}: exit {code}")
        if code:
            return code
        dirs.append(str(target))
    return main(["report", "--out", str(out / "report"), *dirs])


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="runs")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    sys.exit(run(Path(args.out), args.threads))
