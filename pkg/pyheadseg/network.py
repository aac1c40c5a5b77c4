"""
Encoder-decoder segmentation networks.

One `Network` class covers the four studied models; the residual and attention-gate
flags of `NetworkConfig` select plain or residual blocks and gated or raw skip features.
"""
from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from pyheadseg import functional as F
from pyheadseg.blocks import DEFAULT_MAX_TOKENS, AttentionBlock, AttentionGate, PlainBlock, ResidualBlock
from pyheadseg.config import dump_lines, from_mapping
from pyheadseg.enums import Architecture, PublishedFigure
from pyheadseg.exceptions import ConfigError, DataError, NonFiniteError, ShapeError
from pyheadseg.module import Conv2d, ConvTranspose2d, Module
from pyheadseg.tensor import Tensor, _as_array, no_grad
from pyheadseg.typed import DType, Mode, Size2D

logger = logging.getLogger(__name__)

# decoder levels (1 = coarsest) that receive a self-attention block
ATTENTION_BLOCK_LEVELS = (1, 2)
FLAG_TOLERANCE = 0.10


@dataclass
class NetworkConfig:
    encoder_channels: Tuple[int, ...] = (64, 128, 256, 512)
    bottleneck_channels: int = 1024
    input_size: Size2D = (256, 256)
    use_residual: bool = True
    use_attention_gates: bool = True
    use_attention_blocks: bool = False
    in_channels: int = 1
    out_channels: int = 1
    dtype: DType = "float32"
    bn_momentum: float = F.BN_MOMENTUM
    bn_eps: float = F.BN_EPS
    attention_block_max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int = 42

    def __post_init__(self) -> None:
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.input_size = tuple(int(s) for s in self.input_size)  # type: ignore[assignment]

    @property
    def architecture(self) -> Architecture:
        return Architecture.from_flags(self.use_residual, self.use_attention_gates)

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def decoder_channels(self) -> Tuple[int, ...]:
        return tuple(reversed(self.encoder_channels))

    def validate(self) -> NetworkConfig:
        if not self.encoder_channels or any(c <= 0 for c in self.encoder_channels):
            raise ConfigError(f"encoder channels must be positive, got {self.encoder_channels}")
        if self.bottleneck_channels <= 0 or self.in_channels <= 0 or self.out_channels <= 0:
            raise ConfigError("channel counts must be positive")
        if len(self.input_size) != 2:
            raise ConfigError(f"input_size must be (H, W), got {self.input_size}")
        factor = 2**self.depth
        if any(s <= 0 or s % factor for s in self.input_size):
            raise ConfigError(f"input size {self.input_size} is not divisible by {factor}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")
        return self

    @classmethod
    def for_architecture(cls, architecture: Architecture, **overrides) -> NetworkConfig:
        return cls(
            use_residual=architecture.use_residual,
            use_attention_gates=architecture.use_attention_gates,
            **overrides,
        )

    @classmethod
    def desk(cls, architecture: Architecture = Architecture.ATTRESUNET, **overrides) -> NetworkConfig:
        """
        Reduced-width configuration (16/32/64/128, bottleneck 256) at 64x64 for CPU runs.
        """
        values = dict(encoder_channels=(16, 32, 64, 128), bottleneck_channels=256, input_size=(64, 64))
        values.update(overrides)
        return cls.for_architecture(architecture, **values)

    def to_lines(self, prefix: str = "") -> List[str]:
        return dump_lines(self, prefix)

    @classmethod
    def from_values(cls, values: Dict[str, str]) -> NetworkConfig:
        return from_mapping(cls, values)


class Network(Module):
    """
    U-shaped encoder-decoder producing a single-channel probability map.

    Encoder level i holds `enc{i}`; decoder level i (1 = coarsest) holds `up{i}`,
    the optional `gate{i}`, `dec{i}` and the optional `attn{i}`. The gate of decoder
    level i weights encoder level depth+1-i with `g` = the up-sampled decoder feature,
    and the decoder block consumes the concatenation [gated skip, up-sampled].
    """

    def __init__(self, config: NetworkConfig) -> None:
        super().__init__()
        self.config = config.validate()
        rng = np.random.default_rng(config.seed)
        block = ResidualBlock if config.use_residual else PlainBlock
        bn = dict(bn_momentum=config.bn_momentum, bn_eps=config.bn_eps)

        previous = config.in_channels
        for level, channels in enumerate(config.encoder_channels, start=1):
            setattr(self, f"enc{level}", block(previous, channels, rng, **bn))
            previous = channels
        self.bottleneck = block(previous, config.bottleneck_channels, rng, **bn)

        previous = config.bottleneck_channels
        for level, channels in enumerate(config.decoder_channels, start=1):
            setattr(self, f"up{level}", ConvTranspose2d(previous, channels, rng))
            if config.use_attention_gates:
                setattr(self, f"gate{level}", AttentionGate(channels, channels, rng))
            setattr(self, f"dec{level}", block(2 * channels, channels, rng, **bn))
            if config.use_attention_blocks and level in ATTENTION_BLOCK_LEVELS:
                block_attention = AttentionBlock(
                    channels,
                    rng,
                    max_tokens=config.attention_block_max_tokens,
                    **bn,
                )
                setattr(self, f"attn{level}", block_attention)
            previous = channels
        self.head = Conv2d(previous, config.out_channels, 1, rng)

        self.astype(np.dtype(config.dtype))
        self.trace: Dict[str, Tensor] = {}

    @property
    def architecture(self) -> Architecture:
        return self.config.architecture

    @property
    def depth(self) -> int:
        return self.config.depth

    def module(self, name: str) -> Optional[Module]:
        value = getattr(self, name, None)
        return value if isinstance(value, Module) else None

    def gates(self) -> List[AttentionGate]:
        return [g for g in (self.module(f"gate{i}") for i in range(1, self.depth + 1)) if g is not None]

    def attention_blocks(self) -> List[AttentionBlock]:
        return [b for b in (self.module(f"attn{i}") for i in range(1, self.depth + 1)) if b is not None]

    def _check_input(self, image: Tensor) -> None:
        config = self.config
        if image.ndim != 4 or image.shape[1] != config.in_channels:
            raise ShapeError(f"expected B x {config.in_channels} x H x W input, got {image.shape}")
        factor = 2**self.depth
        if image.shape[2] % factor or image.shape[3] % factor:
            raise ShapeError(f"spatial size {image.shape[2:]} is not divisible by {factor}")
        if image.data.min() < 0.0 or image.data.max() > 1.0:
            raise DataError("image values must lie in [0, 1]")

    def forward(self, image: Tensor, mode: Optional[Mode] = None) -> Tensor:
        """
        Probability map S of shape B x out_channels x H x W, every value in (0, 1).

        The activations of the pass are kept in `trace` (E1..E4, B, U/A/alpha/D per decoder
        level, logits, S), which saliency and tests read.
        """
        if mode is not None:
            self.train(mode == "train")
        if not isinstance(image, Tensor):
            image = Tensor(_as_array(image, np.dtype(self.config.dtype)))
        self._check_input(image)

        trace: Dict[str, Tensor] = {}
        skips: List[Tensor] = []
        x = image
        for level in range(1, self.depth + 1):
            with _stage(f"E{level}"):
                x = getattr(self, f"enc{level}")(x)
            trace[f"E{level}"] = x
            skips.append(x)
            x = F.maxpool2d(x)

        with _stage("B"):
            x = self.bottleneck(x)
        trace["B"] = x

        for level in range(1, self.depth + 1):
            with _stage(f"U{level}"):
                up = getattr(self, f"up{level}")(x)
            trace[f"U{level}"] = up
            skip = skips[self.depth - level]
            gate = self.module(f"gate{level}")
            with _stage(f"A{level}"):
                if gate is not None:
                    skip, alpha = gate(skip, up)
                    trace[f"alpha{level}"] = alpha
            trace[f"A{level}"] = skip
            with _stage(f"D{level}"):
                x = getattr(self, f"dec{level}")(F.concat_channels([skip, up]))
                attention = self.module(f"attn{level}")
                if attention is not None:
                    x = attention(x)
            trace[f"D{level}"] = x

        with _stage("logits"):
            logits = self.head(x)
        trace["logits"] = logits
        with _stage("S"):
            probabilities = F.sigmoid(logits)
        trace["S"] = probabilities
        self.trace = trace
        return probabilities

    def predict(self, images: np.ndarray) -> np.ndarray:
        """
        Eval-mode probabilities for a B x H x W (or B x 1 x H x W) array, without the tape.
        """
        batch = np.asarray(images)
        if batch.ndim == 3:
            batch = batch[:, None]
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                return self.forward(Tensor(batch, dtype=np.dtype(self.config.dtype))).data[:, 0]
        finally:
            self.train(was_training)


@contextmanager
def _stage(name: str) -> Iterator[None]:
    try:
        yield
    except NonFiniteError as exc:
        raise NonFiniteError(f"{exc.context} in stage {name}") from exc


def build(config: NetworkConfig) -> Network:
    network = Network(config)
    logger.debug(
        "built %s: %d parameters, %d gates",
        config.architecture.display_name,
        network.num_parameters(),
        len(network.gates()),
    )
    return network


def build_architecture(architecture: Architecture, desk: bool = True, **overrides) -> Network:
    if desk:
        return build(NetworkConfig.desk(architecture, **overrides))
    return build(NetworkConfig.for_architecture(architecture, **overrides))


@dataclass
class AccountingReport:
    """
    Analytic count per top-level module, its total and the deviation from a cited figure.
    """

    per_module: Dict[str, int]
    total: int
    claim: float
    unit: str

    @property
    def deviation(self) -> float:
        return (self.total - self.claim) / self.claim

    @property
    def flagged(self) -> bool:
        return abs(self.deviation) > FLAG_TOLERANCE

    def lines(self) -> List[str]:
        rows = [f"{name:<12}{count:>16,}" for name, count in self.per_module.items()]
        rows.append(f"{'total':<12}{self.total:>16,}")
        note = "  (differs by more than 10%)" if self.flagged else ""
        rows.append(f"{'published':<12}{self.claim:>16,.0f}  deviation {self.deviation:+.1%}{note}")
        return rows


@dataclass
class ParameterReport(AccountingReport):
    claim: float = PublishedFigure.PARAMETERS.value
    unit: str = "parameters"


@dataclass
class FlopReport(AccountingReport):
    claim: float = PublishedFigure.GFLOPS_256.value * 1e9
    unit: str = "FLOPs"
    input_size: Size2D = (256, 256)

    @property
    def gflops(self) -> float:
        return self.total / 1e9


def count_parameters(network: Network) -> ParameterReport:
    per_module = {name: child.num_parameters() for name, child in network.children()}
    report = ParameterReport(per_module=per_module, total=sum(per_module.values()))
    if report.flagged:
        logger.info(
            "parameter count %d deviates %+.1f%% from the published %.1fM",
            report.total,
            100 * report.deviation,
            report.claim / 1e6,
        )
    return report


def count_flops(network: Network, input_size: Optional[Size2D] = None) -> FlopReport:
    """
    Analytic FLOPs (2 x multiply-accumulates of every conv and matmul) for one image.
    """
    h, w = input_size or network.config.input_size
    factor = 2**network.depth
    if h % factor or w % factor:
        raise ShapeError(f"input size {(h, w)} is not divisible by {factor}")

    per_module: Dict[str, int] = {}
    for level in range(1, network.depth + 1):
        per_module[f"enc{level}"] = getattr(network, f"enc{level}").flops(h, w)
        h, w = h // 2, w // 2
    per_module["bottleneck"] = network.bottleneck.flops(h, w)
    for level in range(1, network.depth + 1):
        per_module[f"up{level}"] = getattr(network, f"up{level}").flops(h, w)
        h, w = 2 * h, 2 * w
        for prefix in ("gate", "dec", "attn"):
            child = network.module(f"{prefix}{level}")
            if child is not None:
                per_module[f"{prefix}{level}"] = child.flops(h, w)
    per_module["head"] = network.head.flops(h, w)

    return FlopReport(
        per_module=per_module,
        total=sum(per_module.values()),
        input_size=tuple(input_size or network.config.input_size),
    )
