"""Command line interface: ``gmmce {generate,fit,estimate,run,report}``.

Exit status is 0 on success, 2 on configuration errors (bad or missing
config, incompatible options, dataset dimensions that disagree with the
config) and 1 on any other failure. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .channel_sim import (
    SCENARIO_SPATIAL,
    TAG_OBSERVATIONS,
    TAG_OFDM,
    TAG_SPATIAL,
    Dataset,
    observe,
    read_dataset,
    snr_to_noise_var,
    write_dataset,
)
from .estimators import estimate_gmm
from .evaluation import (
    FITTABLE,
    ConfigError,
    EvalReport,
    fit_variant,
    generate_channels,
    load_config,
    noise_rng,
    run_experiment,
    with_overrides,
)
from .gmm_core import read_model, write_model

log = logging.getLogger("gmmce")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits by itself; route its failures through the same exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _pilot(text: str) -> tuple[int, int]:
    try:
        t, f = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("pilot configuration is written as TxF, e.g. 3x6") from None
    return t, f


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only report warnings and errors")

    parser = _Parser(prog="gmmce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a channel or observation dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--kind", choices=("channels", "observations"), default="observations")
    p.add_argument("--snr", type=float, help="SNR in dB (default: first configured value)")
    p.add_argument("--pilots", type=_pilot, help="TxF pattern (default: first configured one)")

    p = sub.add_parser("fit", parents=[common], help="train one model variant from a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True, choices=FITTABLE)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64)

    p = sub.add_parser("estimate", parents=[common], help="apply a model to an observation dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", parents=[common], help="run a full experiment and write its CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--train-snr", type=float, help="train every model at this SNR (dB)")

    p = sub.add_parser("report", parents=[common], help="merge CSV reports")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out")
    return parser


def _config(args):
    config = load_config(args.config)
    return with_overrides(config, seed=getattr(args, "seed", None),
                          train_snr_db=getattr(args, "train_snr", None))


def _pattern_index(config, pilots) -> int:
    if config.scenario == SCENARIO_SPATIAL:
        if pilots is not None:
            raise ConfigError("pilot patterns only apply to the ofdm scenario")
        return 0
    if pilots is None:
        return 0
    if pilots not in config.pilot_configs:
        raise ConfigError(f"pilot configuration {pilots[0]}x{pilots[1]} is not in the config")
    return config.pilot_configs.index(pilots)


def cmd_generate(args) -> int:
    config = _config(args)
    H, _ = generate_channels(config, args.split)
    if args.kind == "channels":
        tag = TAG_SPATIAL if config.scenario == SCENARIO_SPATIAL else TAG_OFDM
        dataset = Dataset(tag, H, config.dims)
    else:
        p_idx = _pattern_index(config, args.pilots)
        snr = config.snr_list[0] if args.snr is None else args.snr
        pattern = config.patterns()[p_idx]
        obs = observe(H, pattern, snr_to_noise_var(snr), noise_rng(config, args.split, p_idx, snr))
        dataset = Dataset(TAG_OBSERVATIONS, obs.y, config.dims, pattern, obs.noise_var)
    write_dataset(args.out, dataset)
    log.info("wrote %d %s records to %s", H.shape[0], args.kind, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _config(args)
    dataset = read_dataset(args.data)
    if tuple(dataset.dims) != tuple(config.dims):
        raise ConfigError(f"dataset grid {dataset.dims} does not match the config grid {config.dims}")
    if args.variant == "gmm_H":
        if dataset.is_observation:
            raise ConfigError("gmm_H trains on a channel dataset")
        fitted = fit_variant("gmm_H", None, dataset.data, None, 0.0, config.dims, config.fit_config())
    else:
        if not dataset.is_observation:
            raise ConfigError(f"{args.variant} trains on an observation dataset")
        fitted = fit_variant(args.variant, dataset.data, None, dataset.pattern, dataset.noise_var,
                             config.dims, config.fit_config())
    write_model(args.out, fitted, config.dims if fitted.structure is not None else None)
    log.info("wrote %s model with %d components to %s", args.variant, fitted.num_components, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    params, _ = read_model(args.model)
    dataset = read_dataset(args.data)
    if not dataset.is_observation:
        raise ConfigError("estimation needs an observation dataset")
    if dataset.total_dim != params.dim:
        raise ConfigError(f"model dimension {params.dim} does not match the dataset ({dataset.total_dim})")
    est = estimate_gmm(dataset.data, dataset.pattern, dataset.noise_var, params)
    tag = TAG_SPATIAL if dataset.dims[1] == 1 else TAG_OFDM
    write_dataset(args.out, Dataset(tag, np.atleast_2d(est), dataset.dims))
    log.info("wrote %d estimates to %s", dataset.data.shape[0], args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config(args)
    out = args.out or config.output
    report = run_experiment(config)
    if out:
        report.write_csv(out)
        log.info("wrote %d rows to %s", len(report.rows), out)
    else:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_report(args) -> int:
    report = EvalReport.merge(EvalReport.read_csv(path) for path in args.inputs)
    if args.out:
        report.write_csv(args.out)
    else:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "estimate": cmd_estimate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"gmmce: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"gmmce: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - every other failure is a runtime error
        print(f"gmmce: error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
