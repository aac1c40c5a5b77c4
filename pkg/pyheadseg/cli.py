"""
The `pyheadseg` command line: data generation, training, evaluation, paired comparison,
saliency and architecture accounting.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 non-finite values.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from pyheadseg.checkpoint import load_checkpoint
from pyheadseg.config import RunConfig, channel_ladder
from pyheadseg.dataset import Dataset, ImageSample, write_pgm
from pyheadseg.enums import Architecture, PublishedFigure
from pyheadseg.exceptions import ConfigError, DataError, HeadSegError, NonFiniteError, ReportMismatch
from pyheadseg.network import NetworkConfig, build, count_flops, count_parameters
from pyheadseg.phantom import generate_dataset
from pyheadseg.report import MetricsReport, evaluate
from pyheadseg.saliency import (
    SALIENCY_LAYERS,
    attach_concentration,
    attention_coefficient_maps,
    saliency_for_samples,
    write_saliency,
)
from pyheadseg.stats import COMPARISON_HEADER, COMPONENT_HEADER, compare_models
from pyheadseg.training import TrainConfig, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
DESK_BASE_CHANNELS = 16
PUBLISHED_BASE_CHANNELS = 64
CHECKPOINT_NAME = "model.ckpt"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_OUT = {
    "generate-data": "data/phantoms",
    "train": "runs/train",
    "eval": "runs/eval",
    "compare": "runs/compare",
    "saliency": "runs/saliency",
}


class ArgumentParser(argparse.ArgumentParser):
    """
    Reports usage errors as `ConfigError` so they share the exit-code mapping.
    """

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file with defaults for any option")
    common.add_argument("--seed", type=int, help="random seed (flag > RUNSEED > 42)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", default=None, help="overwrite existing output")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return common


def build_parser() -> ArgumentParser:
    common = _common_options()
    archs = [a.value for a in Architecture]
    parser = ArgumentParser(prog="pyheadseg", description="Attention-ResUNet head segmentation at desk scale")
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    generate = commands.add_parser("generate-data", parents=[common], help="write a synthetic phantom dataset")
    generate.add_argument("--n", type=int, help="number of phantoms (250)")
    generate.add_argument("--size", type=int, help="square image side in pixels (64)")
    generate.add_argument("--difficulty", choices=["easy", "hard"])

    fit = commands.add_parser("train", parents=[common], help="train one architecture")
    fit.add_argument("--data", help="dataset directory written by generate-data")
    fit.add_argument("--arch", choices=archs)
    fit.add_argument("--base-channels", type=int, dest="base_channels", help="first encoder width (16)")
    fit.add_argument("--attention-blocks", action=argparse.BooleanOptionalAction, dest="attention_blocks")
    fit.add_argument("--epochs", type=int)
    fit.add_argument("--lr", type=float)
    fit.add_argument("--batch", type=int)
    fit.add_argument("--val-every", type=int, dest="val_every")
    fit.add_argument("--patience", type=int)
    fit.add_argument("--augment", action=argparse.BooleanOptionalAction)

    score = commands.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    score.add_argument("--checkpoint")
    score.add_argument("--data")
    score.add_argument("--split", choices=["train", "val", "test"])
    score.add_argument("--threshold", type=float)

    compare = commands.add_parser("compare", parents=[common], help="paired statistics of two reports")
    compare.add_argument("--report-a", dest="report_a", help="eval directory or metrics.csv")
    compare.add_argument("--report-b", dest="report_b", help="eval directory or metrics.csv")

    saliency = commands.add_parser("saliency", parents=[common], help="Grad-CAM maps and concentration")
    saliency.add_argument("--checkpoint")
    saliency.add_argument("--data")
    saliency.add_argument("--split", choices=["train", "val", "test"])
    saliency.add_argument("--layer", choices=list(SALIENCY_LAYERS))
    saliency.add_argument("--concentration", choices=["mass", "count"])
    saliency.add_argument("--threshold", type=float)

    inspect = commands.add_parser("inspect", parents=[common], help="parameter and FLOP accounting")
    inspect.add_argument("--arch", choices=archs)
    inspect.add_argument("--base-channels", type=int, dest="base_channels", help="first encoder width (64)")
    inspect.add_argument("--input-size", type=int, dest="input_size")
    inspect.add_argument("--attention-blocks", action=argparse.BooleanOptionalAction, dest="attention_blocks")
    return parser


def _architecture(name: str) -> Architecture:
    try:
        return Architecture(name)
    except ValueError:
        raise ConfigError(f"unknown architecture {name!r}, choose from {Architecture.choices()}") from None


def _require(config: RunConfig, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(config, n)]
    if missing:
        raise ConfigError(f"{config.command} needs {', '.join(missing)}")


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split(dataset: Dataset, name: str) -> List[ImageSample]:
    if name not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {name!r}")
    samples = dataset.split(name)  # type: ignore[arg-type]
    if not samples:
        raise DataError(f"split {name!r} is empty")
    return samples


def _network_config(config: RunConfig, base_default: int, input_size) -> NetworkConfig:
    encoder, bottleneck = channel_ladder(config.base_channels or base_default)
    return NetworkConfig.for_architecture(
        _architecture(config.arch),
        encoder_channels=encoder,
        bottleneck_channels=bottleneck,
        input_size=tuple(input_size),
        use_attention_blocks=config.attention_blocks,
        seed=config.seed,
    ).validate()


def cmd_generate_data(config: RunConfig) -> int:
    out = Path(config.out)
    if out.exists() and any(out.iterdir()) and not config.force:
        raise ConfigError(f"{out} is not empty, pass --force to overwrite")
    size = (config.size, config.size)
    dataset = generate_dataset(config.n, size, config.difficulty, config.seed)  # type: ignore[arg-type]
    dataset.save(out, force=True)
    config.write(out)
    fractions = [row.foreground_fraction for row in dataset.manifest()]
    print(
        f"{len(dataset)} phantoms in {out}: train={len(dataset.train)} val={len(dataset.val)}, "
        f"mean foreground fraction {np.mean(fractions):.4f}"
    )
    return EXIT_OK


def cmd_train(config: RunConfig) -> int:
    _require(config, "data")
    dataset = Dataset.load(config.data)
    if not dataset.train:
        raise DataError(f"{config.data} has no training samples")
    network = build(_network_config(config, DESK_BASE_CHANNELS, dataset.train[0].size))
    train_config = TrainConfig(
        epochs=config.epochs,
        lr=config.lr,
        batch_size=config.batch,
        val_every=config.val_every,
        early_stop_patience=config.patience,
        seed=config.seed,
        augment=config.augment,
    )
    out = _output_dir(config)
    result = train(network, dataset, train_config, checkpoint_path=out / CHECKPOINT_NAME)
    result.write_history(out / "history.csv")
    config.write(out)
    print(
        f"{network.architecture.display_name}: best val dice {result.best_val_dice:.4f} "
        f"at epoch {result.best_epoch}{' (early stop)' if result.stopped_early else ''}, "
        f"checkpoint {out / CHECKPOINT_NAME}"
    )
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    _require(config, "checkpoint", "data")
    network, _ = load_checkpoint(config.checkpoint)
    samples = _split(Dataset.load(config.data), config.split)
    report = evaluate(network, samples, config.threshold, network.architecture.value)
    out = _output_dir(config)
    report.write(out)
    config.write(out)
    dice = report.aggregates["dice"]
    print(f"{network.architecture.display_name} on {config.split}: dice {dice.mean:.4f} ± {dice.sd:.4f} (n={dice.n})")
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    _require(config, "report_a", "report_b")
    report_a = MetricsReport.from_csv(config.report_a)
    report_b = MetricsReport.from_csv(config.report_b)
    result = compare_models(report_a, report_b)
    out = _output_dir(config)
    result.write(out / "comparison.json")
    table = [COMPARISON_HEADER, result.comparison_row(), "", COMPONENT_HEADER, result.component_row()]
    (out / "tables.txt").write_text("\n".join(table) + "\n")
    config.write(out)
    print("\n".join(table))
    return EXIT_OK


def cmd_saliency(config: RunConfig) -> int:
    _require(config, "checkpoint", "data")
    if config.concentration not in ("mass", "count"):
        raise ConfigError(f"unknown concentration mode {config.concentration!r}")
    network, _ = load_checkpoint(config.checkpoint)
    samples = _split(Dataset.load(config.data), config.split)
    out = _output_dir(config)
    maps_dir = out / "maps"

    maps = saliency_for_samples(network, samples, config.layer, config.concentration)  # type: ignore[arg-type]
    for sample, saliency in zip(samples, maps):
        write_saliency(maps_dir, saliency, sample.image)
    if network.config.use_attention_gates:
        for sample in samples:
            for level, alpha in enumerate(attention_coefficient_maps(network, sample.image), start=1):
                write_pgm(maps_dir / f"{sample.id}_alpha{level}.pgm", alpha)

    report = attach_concentration(evaluate(network, samples, config.threshold, network.architecture.value), maps)
    report.write(out)
    config.write(out)
    defined = report.values("concentration")
    foreground = float(np.mean([s.foreground_fraction for s in samples]))
    if defined:
        print(
            f"{network.architecture.display_name} {config.layer}: mean concentration {np.mean(defined):.4f} "
            f"over {len(defined)} maps, mean foreground fraction {foreground:.4f}"
        )
    else:
        print(f"{network.architecture.display_name} {config.layer}: every saliency map is empty")
    return EXIT_OK


def cmd_inspect(config: RunConfig) -> int:
    size = (config.input_size, config.input_size)
    network = build(_network_config(config, PUBLISHED_BASE_CHANNELS, size))
    parameters = count_parameters(network)
    flops = count_flops(network, size)
    title = network.architecture.display_name
    lines = [f"{title}, encoder {network.config.encoder_channels}, input {size[0]}x{size[1]}"]
    lines += ["", "parameters"] + parameters.lines()
    lines += ["", f"FLOPs per image ({flops.gflops:.3f} GFLOPs)"] + flops.lines()
    lines += [
        "",
        f"published figures: ≈{PublishedFigure.PARAMETERS.value / 1e6:.1f}M parameters, "
        f"≈{PublishedFigure.GFLOPS_256.value:.0f} GFLOPs at 256x256",
    ]
    if parameters.flagged or flops.flagged:
        lines.append("the analytic counts differ from the published figures by more than 10%")
    print("\n".join(lines))
    if config.out:
        out = _output_dir(config)
        (out / "inspect.txt").write_text("\n".join(lines) + "\n")
        config.write(out)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "saliency": cmd_saliency,
    "inspect": cmd_inspect,
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.resolve(vars(args), args.config)
    if not config.out:
        config.out = DEFAULT_OUT.get(config.command, "")
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    logging.captureWarnings(True)
    try:
        config = resolve_config(args)
        return COMMANDS[config.command](config)
    except NonFiniteError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, ReportMismatch) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except HeadSegError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
