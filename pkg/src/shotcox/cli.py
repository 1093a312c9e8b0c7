"""Command-line entry point.

    shotcox <stage> --config run.cfg [--out-dir DIR] [--seed N]

Stages: simulate, fit-glm, fit-marginal, fit-copula, filter, diagnose,
predict.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 stage dependency error, 5 runtime error; the stderr line carries a
machine-readable ``category=`` tag.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .io import DataError
from .pipeline import STAGES, StageDependencyError, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shotcox",
        description="Dependent shot-noise Cox count processes: simulate, fit, predict.",
    )
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="path to the key = value config file")
    parser.add_argument("--out-dir", default=".", help="artifact directory (default: cwd)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            config_text = fh.read()
    except OSError as exc:
        print(f"shotcox error category=config: {exc}", file=sys.stderr)
        return 2
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        outputs = run_pipeline(args.stage, config, args.out_dir, config_text)
    except ConfigError as exc:
        print(f"shotcox error category=config: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"shotcox error category=data: {exc}", file=sys.stderr)
        return 3
    except StageDependencyError as exc:
        print(f"shotcox error category=dependency: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime category
        print(f"shotcox error category=runtime: {exc}", file=sys.stderr)
        return 5
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
