"""Command-line entry point: ``syncmrac run|check|preset``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ConfigError, load_config, preset_text


def _load(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(h=args.h, out=args.out)


def _cmd_run(args) -> int:
    from .experiment import run_grid
    from .report import read_summary_csv

    cfg = _load(args)
    status = run_grid(cfg, workers=args.workers)
    if status == 0:
        rows = read_summary_csv(cfg.output.directory / "summary.csv")
        diverged = [r for r in rows if r["diverged"] == "true"]
        print(f"wrote {len(rows)} cells to {cfg.output.directory}"
              + (f" ({len(diverged)} diverged)" if diverged else ""))
    return status


def _cmd_check(args) -> int:
    from .acceptance import run_all

    cfg = _load(args)
    results = run_all(cfg, workers=args.workers)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def _cmd_preset(args) -> int:
    sys.stdout.write(preset_text(args.name))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="syncmrac", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in (("run", _cmd_run, "simulate every grid cell and write outputs"),
                              ("check", _cmd_check, "run the acceptance suite")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="TOML experiment config")
        p.add_argument("--workers", type=int, default=1, metavar="N", help="parallel processes")
        p.add_argument("--h", type=float, default=None, help="integration step override")
        p.add_argument("--out", default=None, metavar="DIR", help="output directory override")
        p.set_defaults(func=func)

    p = sub.add_parser("preset", help="print a built-in config")
    p.add_argument("name", choices=["f16"])
    p.set_defaults(func=_cmd_preset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
