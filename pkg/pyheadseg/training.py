"""
Binary cross-entropy training with Adam and validation-Dice early stopping.
"""
from __future__ import annotations

import csv
import logging
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from pyheadseg import functional as F
from pyheadseg.augment import augment
from pyheadseg.checkpoint import save_checkpoint
from pyheadseg.dataset import Dataset, ImageSample, stack
from pyheadseg.exceptions import ConfigError, DataError, GradientError, NonFiniteError
from pyheadseg.metrics import dice
from pyheadseg.module import Parameter
from pyheadseg.network import Network
from pyheadseg.report import predict_samples
from pyheadseg.tensor import Tensor
from pyheadseg.typed import StateDict

logger = logging.getLogger(__name__)

SELECTION_THRESHOLD = 0.5


@dataclass
class TrainConfig:
    epochs: int = 25
    lr: float = 1e-4
    batch_size: int = 8
    val_every: int = 5
    early_stop_patience: int = 3
    seed: int = 42
    augment: bool = True
    progress: bool = True

    def validate(self) -> TrainConfig:
        for name in ("epochs", "batch_size", "val_every", "early_stop_patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.val_every > self.epochs:
            raise ConfigError(f"val_every ({self.val_every}) exceeds epochs ({self.epochs})")
        return self


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameters(cls, params: Sequence[Parameter], **hyper) -> AdamState:
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """
    One bias-corrected Adam update of `params` in place from their `.grad`.
    """
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise GradientError(f"{len(missing)} parameters have no gradient (first index {missing[0]})")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1 - b1**t
    correction2 = 1 - b2**t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4, **hyper) -> None:
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_parameters(self.params, **hyper)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr)


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    return F.binary_cross_entropy(pred, target)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: Optional[float] = None


@dataclass
class TrainResult:
    network: Network
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_dice: Optional[float] = None
    stopped_early: bool = False

    @property
    def losses(self) -> List[float]:
        return [r.train_loss for r in self.history]

    def write_history(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_dice"])
            for r in self.history:
                writer.writerow([r.epoch, repr(r.train_loss), "" if r.val_dice is None else repr(r.val_dice)])
        return path


def mean_dice(network: Network, samples: Sequence[ImageSample], threshold: float = SELECTION_THRESHOLD) -> float:
    probabilities = predict_samples(network, samples)
    scores = [dice((p >= threshold).astype(np.uint8), s.mask) for p, s in zip(probabilities, samples)]
    return float(np.mean(scores))


def _batches(samples: List[ImageSample], batch_size: int):
    for start in range(0, len(samples), batch_size):
        yield samples[start:start + batch_size]


@contextmanager
def frozen_buffers(network: Network) -> Iterator[None]:
    """
    Restore the batch-norm running statistics on exit, so train-mode forwards leave them untouched.
    """
    snapshot = {name: b.copy() for name, b in network.named_buffers()}
    try:
        yield
    finally:
        for name, buffer in network.named_buffers():
            buffer[...] = snapshot[name]


def train_step(network: Network, optimizer: Adam, batch: Sequence[ImageSample]) -> float:
    images, masks = stack(batch)
    dtype = np.dtype(network.config.dtype)
    optimizer.zero_grad()
    pred = network(Tensor(images, dtype=dtype), mode="train")
    loss = bce_loss(pred, Tensor(masks, dtype=dtype))
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train(
    network: Network,
    dataset: Dataset,
    config: Optional[TrainConfig] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train `network` on the train split, validating every `val_every` epochs.

    The state with the best validation Dice is restored into `network` before returning,
    and written to `checkpoint_path` when given. Training stops once `early_stop_patience`
    validation rounds in a row fail to improve the best Dice. With `lr == 0` neither the
    parameters nor the batch-norm running statistics change. Data order and augmentation
    draws come from one generator seeded with `config.seed`.
    """
    config = (config or TrainConfig()).validate()
    train_samples, val_samples = dataset.train, dataset.val
    if not train_samples or not val_samples:
        raise DataError(
            f"training needs non-empty train and val splits, got {len(train_samples)}/{len(val_samples)}"
        )

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(network.parameters(), lr=config.lr)
    result = TrainResult(network=network)
    best_state: Optional[StateDict] = None
    rounds_without_improvement = 0
    frozen = config.lr == 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_samples))
        epoch_samples = [train_samples[i] for i in order]
        if config.augment:
            seeds = rng.integers(0, 2**31 - 1, size=len(epoch_samples))
            epoch_samples = [augment(s, int(seed)) for s, seed in zip(epoch_samples, seeds)]

        total, count = 0.0, 0
        batches = tqdm(
            list(_batches(epoch_samples, config.batch_size)),
            desc=f"epoch {epoch}/{config.epochs}",
            leave=False,
            disable=None if config.progress else True,
        )
        for step, batch in enumerate(batches, start=1):
            try:
                with frozen_buffers(network) if frozen else nullcontext():
                    loss = train_step(network, optimizer, batch)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{exc.context} at epoch {epoch}, step {step}") from exc
            if not np.isfinite(loss):
                raise NonFiniteError(f"loss at epoch {epoch}, step {step}")
            total += loss * len(batch)
            count += len(batch)
        train_loss = total / count

        val_dice = None
        if epoch % config.val_every == 0:
            val_dice = mean_dice(network, val_samples)
            if result.best_val_dice is None or val_dice > result.best_val_dice:
                result.best_val_dice, result.best_epoch = val_dice, epoch
                best_state = network.state_dict()
                rounds_without_improvement = 0
            else:
                rounds_without_improvement += 1

        result.history.append(EpochRecord(epoch, train_loss, val_dice))
        logger.info(
            "epoch %d: train loss %.5f%s",
            epoch,
            train_loss,
            "" if val_dice is None else f", val dice {val_dice:.4f}",
        )
        if rounds_without_improvement >= config.early_stop_patience:
            result.stopped_early = True
            logger.info(
                "early stop after epoch %d, best dice %.4f at epoch %d",
                epoch,
                result.best_val_dice,
                result.best_epoch,
            )
            break

    if best_state is not None:
        network.load_state_dict(best_state)
    network.eval()
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            network,
            {"epoch": result.best_epoch, "val_dice": result.best_val_dice, "seed": config.seed},
        )
    return result
