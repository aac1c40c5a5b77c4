from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from pyheadseg import functional as F
from pyheadseg.exceptions import CheckpointError
from pyheadseg.tensor import Tensor
from pyheadseg.typed import StateDict


class Parameter(Tensor):
    """
    A trainable leaf tensor.
    """

    def __init__(self, data: np.ndarray) -> None:
        super().__init__(data, requires_grad=True)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.dtype})"


class Module:
    """
    Container of parameters, non-trainable buffers and child modules.

    Parameters and children are discovered from instance attributes in assignment order,
    which gives hierarchical names such as `enc1.conv1.weight`. Buffers (batch-norm running
    statistics) are the attributes listed in `_buffer_names`.
    """

    _buffer_names: Tuple[str, ...] = ()

    def __init__(self) -> None:
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[Tuple[str, Module]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> Module:
        """
        Convert parameters and buffers in place (float64 is used for gradient checks).
        """
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype) -> None:
        for name in self._buffer_names:
            setattr(self, name, getattr(self, name).astype(dtype))
        for _, child in self.children():
            child._cast_buffers(dtype)

    def state_dict(self) -> StateDict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: StateDict) -> None:
        targets: Dict[str, np.ndarray] = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))

        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise CheckpointError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, target in targets.items():
            if target.shape != state[name].shape:
                raise CheckpointError(f"{name}: stored shape {state[name].shape}, model expects {target.shape}")
            target[...] = state[name]


def kaiming_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        padding: int = 0,
        bias: bool = True,
    ) -> None:
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.padding = kernel_size, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias: Optional[Parameter] = Parameter(np.zeros(out_channels, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)

    def flops(self, h: int, w: int) -> int:
        """
        2 x multiply-accumulates of the convolution on an h x w input.
        """
        h_out = F.conv_output_size(h, self.kernel_size, 1, self.padding)
        w_out = F.conv_output_size(w, self.kernel_size, 1, self.padding)
        return 2 * self.kernel_size**2 * self.in_channels * self.out_channels * h_out * w_out

    def __repr__(self) -> str:
        k = self.kernel_size
        return f"Conv2d({self.in_channels}->{self.out_channels}, {k}x{k}, pad={self.padding})"


class ConvTranspose2d(Module):
    """
    2x2 / stride-2 up-convolution: doubles H and W.
    """

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.weight = Parameter(kaiming_normal(rng, (in_channels, out_channels, 2, 2), in_channels))
        self.bias = Parameter(np.zeros(out_channels, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, stride=2)

    def flops(self, h: int, w: int) -> int:
        return 2 * self.in_channels * self.out_channels * 4 * h * w

    def __repr__(self) -> str:
        return f"ConvTranspose2d({self.in_channels}->{self.out_channels})"


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = F.BN_MOMENTUM, eps: float = F.BN_EPS) -> None:
        super().__init__()
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, np.float32))
        self.beta = Parameter(np.zeros(channels, np.float32))
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    def __repr__(self) -> str:
        return f"BatchNorm2d({self.channels})"
