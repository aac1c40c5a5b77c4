"""
Plain-text `key=value` configuration.

Every config in the package is a dataclass whose defaults fix the type of each field;
the same codec writes checkpoint headers, `config.txt` provenance files and reads the
optional `--config` file of the command line.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Type, TypeVar

from pyheadseg.exceptions import ConfigError

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "RUNSEED"
DEFAULT_SEED = 42

T = TypeVar("T")


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, like: Any, key: str) -> Any:
    """
    Parse `text` into the type of the default value `like`.
    """
    text = text.strip()
    try:
        if isinstance(like, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(like, tuple):
            items = [t for t in text.split(",") if t.strip()]
            element = like[0] if like else 0
            return tuple(parse_value(t, element, key) for t in items)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if like is None:
            return text or None
        return text
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {text!r}")


def parse_lines(lines: Iterable[str]) -> Dict[str, str]:
    """
    `key=value` lines to a dict; blank lines and `#` comments are skipped.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def dump_lines(obj: Any, prefix: str = "") -> List[str]:
    return [f"{prefix}{f.name}={format_value(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]


def from_mapping(cls: Type[T], values: Mapping[str, str], strict: bool = True) -> T:
    """
    Build a dataclass from string values; unknown keys are rejected when strict.
    """
    defaults = cls()  # type: ignore[call-arg]
    names = {f.name for f in dataclasses.fields(defaults)}
    unknown = sorted(set(values) - names)
    if unknown and strict:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = {k: parse_value(v, getattr(defaults, k), k) for k, v in values.items() if k in names}
    return dataclasses.replace(defaults, **kwargs)


def resolve_seed(flag_value: Optional[int]) -> int:
    """
    Seed precedence: explicit flag, then the RUNSEED environment variable, then 42.
    """
    if flag_value is not None:
        return flag_value
    if SEED_ENV_VAR in os.environ:
        try:
            return int(os.environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={os.environ[SEED_ENV_VAR]!r} is not an integer")
    return DEFAULT_SEED


@dataclass
class RunConfig:
    """
    Fully resolved settings of one command-line invocation.

    Values come from flags, an optional key=value file and defaults (flag > file > default;
    the seed additionally consults RUNSEED). The resolved config is echoed as
    `config.txt` into the output directory.
    """

    command: str = ""
    # data
    n: int = 250
    size: int = 64
    difficulty: str = "easy"
    data: str = ""
    split: str = "val"
    # model
    arch: str = "attresunet"
    # 0 picks 16 for train (desk scale) and 64 for inspect (published widths)
    base_channels: int = 0
    attention_blocks: bool = False
    checkpoint: str = ""
    input_size: int = 256
    # training
    epochs: int = 25
    lr: float = 1e-4
    batch: int = 8
    val_every: int = 5
    patience: int = 3
    augment: bool = True
    # evaluation / saliency
    threshold: float = 0.5
    layer: str = "D4"
    concentration: str = "mass"
    report_a: str = ""
    report_b: str = ""
    # common
    seed: int = DEFAULT_SEED
    out: str = ""
    force: bool = False

    @classmethod
    def resolve(
        cls,
        flags: Mapping[str, Any],
        config_file: Optional[str] = None,
    ) -> RunConfig:
        """
        Merge explicit flags (None means "not given") over a config file over defaults.
        """
        file_values: Dict[str, str] = {}
        if config_file:
            path = Path(config_file)
            if not path.is_file():
                raise ConfigError(f"config file {config_file} does not exist")
            file_values = parse_lines(path.read_text().splitlines())

        config = from_mapping(cls, file_values)
        names = {f.name for f in dataclasses.fields(cls)}
        given = {k: v for k, v in flags.items() if k in names and v is not None}
        config = dataclasses.replace(config, **given)
        seed_flag = flags.get("seed")
        if seed_flag is None and "seed" in file_values:
            seed_flag = config.seed
        config.seed = resolve_seed(seed_flag)
        return config

    def to_text(self) -> str:
        return "\n".join(dump_lines(self)) + "\n"

    def write(self, directory: Path) -> Path:
        path = Path(directory) / "config.txt"
        path.write_text(self.to_text())
        return path


def channel_ladder(base: int, depth: int = 4) -> Tuple[Tuple[int, ...], int]:
    """
    Encoder channels base, 2*base, ... and the bottleneck width for a base width.
    """
    encoder = tuple(base * 2**i for i in range(depth))
    return encoder, base * 2**depth


