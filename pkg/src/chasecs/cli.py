"""``chase-cs`` command line: run one study and write its CSV/JSON artifacts."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from .errors import ConfigError
from .harness.config import ALGORITHMS, PRESETS, STUDIES, ExperimentConfig, load_config, preset
from .harness.studies import run_study

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

log = logging.getLogger("chasecs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chase-cs", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a study")
    run.add_argument("--config", help="TOML or JSON config file")
    run.add_argument("--preset", choices=sorted(PRESETS), help="base parameter set (default desk)")
    run.add_argument("--study", choices=STUDIES)
    run.add_argument("--k", type=int, help="sparsity; also replaces the k sweep")
    run.add_argument("--snr-db", type=float, help="noise level; also replaces the SNR sweep")
    run.add_argument("--algorithm", choices=ALGORITHMS, help="run only this method")
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--trials", type=int, help="trials per sweep point")
    run.add_argument("--jobs", type=int, help="worker processes")
    run.add_argument("--out", help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    base = preset(args.preset) if args.preset else None
    cfg = load_config(args.config, base) if args.config else (base or PRESETS["desk"])
    kw = {}
    if args.study:
        kw["study"] = args.study
    if args.k is not None:
        kw.update(k=args.k, k_list=(args.k,))
    if args.snr_db is not None:
        kw.update(snr_db=args.snr_db, snr_list=(args.snr_db,))
    if args.algorithm:
        kw["algorithms"] = (args.algorithm,)
    if args.seed is not None:
        kw["base_seed"] = args.seed
    if args.trials is not None:
        kw["trials_per_point"] = args.trials
    if args.jobs is not None:
        kw["jobs"] = args.jobs
    if args.out:
        kw["output_dir"] = args.out
    try:
        return replace(cfg, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        result = run_study(cfg)
    except ConfigError as exc:
        print(f"chase-cs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"chase-cs: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for name, path in result.paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
