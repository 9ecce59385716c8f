"""Command line entry point: ``slowfast-fbm <command> [options]``."""

import argparse
import os
import sys

from .errors import SlowFastError
from .experiments import COMMANDS, EXIT_CHECK, EXIT_OK, exit_code_for, load_config, run_experiment, with_overrides

_KIND = {2: "config", 3: "precondition", 4: "numerical"}


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(
        prog="slowfast-fbm", description="Slow-fast SDE experiments driven by fractional Brownian motion."
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI experiment file (default: built-in ou-quadratic setup)")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--seed", type=_seed, help="override run.seed")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--paths", type=int, help="override run.n_paths")
    ap.add_argument("--format", choices=("csv", "csv+svg"), help="override output.format")
    ap.add_argument("--check", action="store_true", help="exit 5 when the pipeline's acceptance check fails")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(path=args.config)
        cfg = with_overrides(cfg, seed=args.seed, n_paths=args.paths, fmt=args.format)
        ok, manifest = run_experiment(args.command, cfg, args.out, threads=max(1, args.threads))
    except SlowFastError as exc:
        code = exit_code_for(exc)
        print(f"error[{_KIND.get(code, 'internal')}]: {exc}", file=sys.stderr)
        return code
    verdict = "pass" if ok else "fail"
    print(f"{args.command}: check {verdict}; wrote {len(manifest['files'])} files to {args.out}")
    for key, val in (manifest.get("summary") or {}).items():
        print(f"  {key} = {val}")
    if args.check and not ok:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
