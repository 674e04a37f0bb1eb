"""Command line entry point: ``maskdiff run <config.json>`` and ``maskdiff list``."""

from __future__ import annotations

import argparse
import sys

from .experiments import EXPERIMENTS, ConfigError, OverwriteError, run


def _kappas(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskdiff", description="masked diffusion sampler experiments")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--trials", type=int)
    r.add_argument("--kappa", type=_kappas)
    r.add_argument("--force", action="store_true", help="overwrite outputs from a different config")
    sub.add_parser("list", help="list experiment names")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "list":
        for name, fn in sorted(EXPERIMENTS.items()):
            doc = (fn.__doc__ or "").strip().splitlines()
            print(f"{name}" + (f"  {doc[0]}" if doc else ""))
        return 0
    overrides = {"seed": args.seed, "out": args.out, "trials": args.trials, "kappa": args.kappa}
    try:
        return run(args.config, overrides, force=args.force)
    except (ConfigError, OverwriteError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
