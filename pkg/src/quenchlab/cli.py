"""Command line entry point: ``quenchlab <pspin|train|analyze|sweep> --config PATH``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import load_config
from .errors import ConfigError, IdxFormatError, NumericalDivergenceError, SchemaError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
DEFAULT_OUT = "quenchlab_out"

log = logging.getLogger("quenchlab")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quenchlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("pspin", "Langevin quench of the spherical 3-spin model"),
                       ("train", "SGD training run with two-time measurements"),
                       ("analyze", "regime report and plots for a run directory"),
                       ("sweep", "train + analyze for every value of one [train] parameter")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, help="TOML experiment file")
        s.add_argument("--out-dir", default=None,
                       help=f"output directory (default: $QUENCHLAB_OUT or ./{DEFAULT_OUT})")
        s.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_out_dir(flag):
    if flag:
        return flag
    return os.environ.get("QUENCHLAB_OUT") or DEFAULT_OUT


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import experiments

    out = resolve_out_dir(args.out_dir)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        if args.command == "pspin":
            res = experiments.run_pspin(cfg, out, args.threads)
            print(f"pspin run {res['run_id']} -> {out}")
        elif args.command == "train":
            res = experiments.run_train(cfg, out, args.threads)
            print(f"train run {res['run_id']} -> {out}")
        elif args.command == "analyze":
            rep = experiments.run_analyze(cfg, out)
            print(f"t1={rep.t1} t2={rep.t2} collapse_pre={rep.collapse_score_pre} "
                  f"collapse_post={rep.collapse_score_post} late_slope={rep.late_slope} "
                  f"plateau_q={rep.plateau_q}")
        else:
            summary = experiments.run_sweep(cfg, out, args.threads)
            failed = sum(1 for s in summary if s["error"])
            print(f"sweep: {len(summary)} points, {failed} failed -> {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, IdxFormatError, SchemaError) as exc:
        if isinstance(exc, FileNotFoundError) and exc.filename:
            print(f"io error: file not found: {exc.filename}", file=sys.stderr)
        else:
            print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
