"""``favc`` command-line entry point.

Exit codes: 0 success, 2 configuration or data-consistency error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import report
from .dataset import StoreError
from .model import CheckpointError
from .report import ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

COMMANDS = {
    "synth": report.run_synth,
    "train": report.run_train,
    "eval": report.run_clean_eval,
    "robust": report.run_robustness,
    "baseline": report.run_baselines,
    "sweep": report.run_sweep,
    "report": report.run_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="favc", description="Frequency-calibrated virtual EEG channel lab")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--checkpoint", help="checkpoint path (defaults to <out>/model.ckpt)")
    p.add_argument("--data", help="segment store directory (overrides synthetic data)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = ExperimentConfig.load(args.config).to_dict()
    for key in ("seed", "out", "checkpoint", "data"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    return ExperimentConfig.from_dict(raw)


def _summarise(command: str, result: dict) -> str:
    files = [str(f) for f in result.get("files", [])]
    for key in ("checkpoint", "log", "data"):
        if key in result:
            files.append(str(result[key]))
    return json.dumps({"command": command, "files": files})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except (ConfigError, StoreError, CheckpointError, KeyError, TypeError) as exc:
        print(f"favc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"favc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"favc: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summarise(args.command, result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
