"""Command-line entry point.

Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure.
Only ``count-params`` is served without importing numpy and scipy.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .counts import parameter_count_ar_gmm, parameter_count_full_gmm
from .errors import ConfigError, NumericalError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=default, help="master seed")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="argmm", description="AR-parameterized GMMs for WSS channel estimation")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = add("generate", "generate a channel dataset file")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--stream", default="train", help="seed stream name (train/test/...)")
    p.add_argument("--data-out", required=True)

    p = add("fit", "train a model on a dataset file and serialize it")
    p.add_argument("--data", required=True)
    p.add_argument("--estimator", default="ar_gmm", choices=["ar_gmm", "gmm_full", "gmm_toeplitz", "gmm_circulant", "lmmse"])
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--orders", type=_int_list, help="AR order(s), one value or one per component")
    p.add_argument("--lambdas", type=_float_list, help="decay factor(s), one value or one per component")
    p.add_argument("--model-out", required=True)

    p = add("estimate", "evaluate a serialized model on a dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--snr", type=_float_list, help="SNR value(s) in dB (default: config snr_db)")
    p.add_argument("--name", default=None, help="estimator name in the report")

    p = add("sweep", "run a benchmark sweep")
    p.add_argument("which", choices=["fig1a", "fig1b", "fig1c", "custom"])
    p.add_argument("--tuned", default=None, help="tuned hyperparameter file from `tune`")

    p = add("tune", "random search plus local refinement of AR orders and decay factors")
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)

    p = add("count-params", "parameter counts of the full GMM and the AR-GMM")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--orders", type=_int_list, required=True)
    return parser


def broadcast(values, K, name):
    if values is None:
        return None
    if len(values) == 1:
        return tuple(values) * K
    if len(values) != K:
        raise ConfigError(f"--{name} needs 1 or K={K} values, got {len(values)}")
    return tuple(values)


def cmd_count_params(args) -> int:
    orders = broadcast(args.orders, args.K, "orders")
    full = parameter_count_full_gmm(args.K, args.M)
    proposed = parameter_count_ar_gmm(orders)
    print(f"full={full} proposed={proposed}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.command == "count-params" and not args.config:
            return cmd_count_params(args)
        from . import commands  # noqa: PLC0415 (defers numpy/scipy)

        cfg = commands.load_config(args)
        if args.command == "count-params":
            return cmd_count_params(args)
        return commands.COMMANDS[args.command](args, cfg)
    except NumericalError as exc:
        print(f"argmm: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, OSError, KeyError, ValueError) as exc:
        print(f"argmm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
