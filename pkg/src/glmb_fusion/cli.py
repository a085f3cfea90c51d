"""Command-line entry point: ``glmb-fusion generate | run | verify``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, InputError, InvalidArgument, InvalidModel, NumericFailure
from .gibbs import MODES
from .runner import run, with_mode, write_artifacts
from .scenario import (
    attach_truth,
    default_config_path,
    generate_scenario,
    load_config,
    read_scans,
    read_truth,
    write_scans,
    write_truth,
)
from .verify import quick_checks

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4, 1

log = logging.getLogger("glmb_fusion")


def _parser():
    p = argparse.ArgumentParser(prog="glmb-fusion", description="Multi-sensor GLMB tracking with Gibbs truncation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate truth and per-sensor scans")
    g.add_argument("--config", type=Path, default=None, help="scenario TOML (default: bundled desk-scale scenario)")
    g.add_argument("--seed", type=int, default=None, help="override the config seed")
    g.add_argument("--out", type=Path, required=True, help="output directory for scans.csv and truth.csv")

    r = sub.add_parser("run", help="run the filter over a scan file")
    r.add_argument("--config", type=Path, default=None)
    r.add_argument("--scans", type=Path, required=True)
    r.add_argument("--truth", type=Path, default=None, help="truth CSV; enables OSPA and truth cardinality")
    r.add_argument("--mode", choices=MODES, default=None, help="sampler mode (default: from config)")
    r.add_argument("--out", type=Path, required=True)

    sub.add_parser("verify", help="quick oracle self-checks")
    return p


def _config(path):
    return load_config(path if path is not None else default_config_path())


def cmd_generate(args):
    cfg = _config(args.config)
    _, scans = generate_scenario(cfg, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_scans(args.out / "scans.csv", scans, cfg.n_axes)
    write_truth(args.out / "truth.csv", scans, cfg.n_axes)
    log.info("wrote %d scans to %s", len(scans), args.out)
    return EXIT_OK


def cmd_run(args):
    cfg = with_mode(_config(args.config), args.mode)
    model = cfg.system_model()
    scans = read_scans(args.scans, model, cfg.duration)
    if args.truth is not None:
        attach_truth(scans, read_truth(args.truth, cfg.n_axes, cfg.duration))
    res = run(cfg, scans)
    write_artifacts(res, cfg, args.out)
    log.info("%d updates in %.1f s (%s)", len(scans), sum(res.update_seconds), res.mode)
    return EXIT_OK


def cmd_verify(args):
    results = quick_checks()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"generate": cmd_generate, "run": cmd_run, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except (ConfigError, InvalidModel, InvalidArgument) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
