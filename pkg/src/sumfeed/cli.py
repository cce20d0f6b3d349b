"""Command-line entry point.

Every configuration key has a same-name flag (dashes for underscores);
backend keys are prefixed with their section, e.g. --strong-judge-model-id.
Flags override the INI file given via --config, which overrides defaults.

Exit codes: 0 success, 1 configuration error, 2 finished with unit-level
failures (see errors.jsonl), 3 fatal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import (
    CONFIG_IDS,
    CRITERION_ALIASES,
    SFT_CRITERION_ALIASES,
    _BACKEND_KEYS,
    _BACKEND_SECTIONS,
    _SCALAR_KEYS,
    load_config,
)
from .errors import ConfigError, SumfeedError
from .pairing import EXPORT_FORMATS
from .pipeline import COMMANDS, RunContext

_COMMAND_HELP = {
    "ingest": "validate the input corpora and write normalized working copies",
    "keyfacts": "extract key facts from reference summaries with the strong judge",
    "summarize": "generate a candidate summary per document with the summarizer backend",
    "evaluate": "collect judge feedback for every candidate summary",
    "score": "turn raw feedback into metric scores and abstractiveness stats",
    "pair": "build preference pairs from scored feedback",
    "export": "write training-ready JSONL for preference pairs or SFT references",
    "agreement": "compare pipeline scores against human judgments",
    "stats": "write score histograms and chosen/rejected breakdowns as CSV",
}

_FLAG_CHOICES = {
    "configs": None,  # free-form comma list, validated by the config layer
    "criterion": sorted(set(CRITERION_ALIASES)),
    "format": sorted(EXPORT_FORMATS),
    "generated_category": None,
}


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="FILE", help="INI configuration file")
    parser.add_argument(
        "--config-id",
        choices=CONFIG_IDS,
        help="run only this feedback configuration (shorthand for --configs)",
    )
    group = parser.add_argument_group("configuration overrides")
    for key in _SCALAR_KEYS:
        group.add_argument(
            "--" + key.replace("_", "-"),
            dest=key,
            metavar="VALUE",
            choices=_FLAG_CHOICES.get(key),
            help=f"override config key {key}",
        )
    for section in _BACKEND_SECTIONS:
        for key in _BACKEND_KEYS:
            flag = f"--{section}-{key}".replace("_", "-")
            group.add_argument(
                flag,
                dest=f"{section}.{key}",
                metavar="VALUE",
                help=f"override [{section}] {key}",
            )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sumfeed",
        description="Batch pipeline for judge feedback, metric scores, and preference data.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _COMMAND_HELP.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        _add_config_flags(sub)
        if name == "export":
            sub.add_argument(
                "--kind",
                choices=("pairs", "sft"),
                default="pairs",
                help="export preference pairs or SFT reference selections",
            )
            sub.add_argument(
                "--sft-criterion",
                choices=sorted(SFT_CRITERION_ALIASES),
                default="composite",
                help="how the SFT reference is selected per document",
            )
    return parser


def _open_logger(out: Path) -> logging.Logger:
    logger = logging.getLogger("sumfeed.run")
    logger.setLevel(logging.INFO)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    file_handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)
    return logger


def _close_logger(logger: logging.Logger):
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: value
        for key, value in vars(args).items()
        if (key in _SCALAR_KEYS or "." in key) and value is not None
    }
    if args.config_id:
        overrides["configs"] = args.config_id

    try:
        config = load_config(args.config, overrides)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    logger = _open_logger(out)
    ctx = RunContext(
        config,
        out,
        logger,
        export_kind=getattr(args, "kind", "pairs"),
        sft_criterion=getattr(args, "sft_criterion", "composite"),
    )
    code = 0
    try:
        COMMANDS[args.command](ctx)
        if ctx.failures:
            logger.warning("%d unit(s) failed; see errors.jsonl", ctx.failures)
            code = 2
    except ConfigError as err:
        logger.error("config error: %s", err)
        code = 1
    except SumfeedError as err:
        logger.error("fatal: %s", err)
        code = 3
    except Exception:
        logger.exception("unexpected failure")
        code = 3
    finally:
        ctx.flush_manifest()
        _close_logger(logger)
    return code


if __name__ == "__main__":
    sys.exit(main())
