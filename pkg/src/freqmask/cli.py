"""Command-line driver: one subcommand per pipeline stage."""

import argparse
import logging
import sys

from . import pipeline
from .config import OUTPUT_ROOT_ENV, ConfigError, load_config

__all__ = ["build_parser", "main"]

_HELP = {
    "synth-data": "generate or ingest paired slices and split them by subject",
    "train-diffusion": "train the conditional diffusion denoiser",
    "fep": "compute frequency error priors for the training images",
    "train-joint": "train the network (and the mask logits for learned modes)",
    "binarize": "produce the discrete sampling mask",
    "finetune": "fine-tune the network under the discrete mask",
    "eval": "score the test split and write metric tables",
    "compare-masks": "export masks, column-density profiles and a summary table",
}


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="freqmask",
        description=f"Learned k-space sampling and multi-contrast reconstruction. "
                    f"Outputs go to output_dir, or ${OUTPUT_ROOT_ENV}/default when unset.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="flat key = value config file")
        p.add_argument("-o", "--output-dir", help="run directory (overrides output_dir)")
        p.add_argument("-s", "--set", dest="overrides", action="append", type=_override,
                       default=[], metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    overrides = dict(args.overrides)
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    try:
        cfg = load_config(args.config, overrides)
        pipeline.STAGES[args.command](cfg)
    except ConfigError as exc:
        print(f"freqmask {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"freqmask {args.command}: missing input: {exc}", file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"freqmask {args.command}: training diverged: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"freqmask {args.command}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: done ({cfg.resolved_output()})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
