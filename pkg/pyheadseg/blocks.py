"""
Building blocks of the encoder-decoder: residual/plain convolution blocks, the additive
attention gate on skip connections, and the spatial self-attention block.
"""
from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from pyheadseg import functional as F
from pyheadseg.exceptions import ShapeError, SpatialCapExceeded
from pyheadseg.module import BatchNorm2d, Conv2d, Module, Parameter
from pyheadseg.tensor import Tensor

DEFAULT_MAX_TOKENS = 4096


def _check_channels(x: Tensor, expected: int, block: str) -> None:
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"{block} expects {expected} input channels, got shape {x.shape}")


class PlainBlock(Module):
    """
    Two 3x3 Conv-BN-ReLU layers, no shortcut (the standard U-Net block).
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        bn_momentum: float = F.BN_MOMENTUM,
        bn_eps: float = F.BN_EPS,
    ) -> None:
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(out_channels, bn_momentum, bn_eps)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_channels, bn_momentum, bn_eps)

    def main_path(self, x: Tensor) -> Tensor:
        _check_channels(x, self.in_channels, type(self).__name__)
        return self.bn2(self.conv2(F.relu(self.bn1(self.conv1(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.main_path(x))

    def flops(self, h: int, w: int) -> int:
        return self.conv1.flops(h, w) + self.conv2.flops(h, w)


class ResidualBlock(PlainBlock):
    """
    ReLU(BN(W2 ReLU(BN(W1 x))) + R(x)), where R is the identity when the channel
    count is kept and a 1x1 conv + BN projection otherwise.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        bn_momentum: float = F.BN_MOMENTUM,
        bn_eps: float = F.BN_EPS,
    ) -> None:
        super().__init__(in_channels, out_channels, rng, bn_momentum, bn_eps)
        self.shortcut_conv: Optional[Conv2d] = None
        self.shortcut_bn: Optional[BatchNorm2d] = None
        if in_channels != out_channels:
            self.shortcut_conv = Conv2d(in_channels, out_channels, 1, rng)
            self.shortcut_bn = BatchNorm2d(out_channels, bn_momentum, bn_eps)

    @property
    def has_projection(self) -> bool:
        return self.shortcut_conv is not None

    def shortcut(self, x: Tensor) -> Tensor:
        if self.shortcut_conv is None:
            return x
        return self.shortcut_bn(self.shortcut_conv(x))

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.main_path(x) + self.shortcut(x))

    def flops(self, h: int, w: int) -> int:
        total = super().flops(h, w)
        if self.shortcut_conv is not None:
            total += self.shortcut_conv.flops(h, w)
        return total


class AttentionGate(Module):
    """
    Additive attention gate on a skip connection.

    alpha = sigmoid(psi^T ReLU(W_x^T x + W_g^T g + b) + b_psi), a single-channel map
    with the spatial size of x; the gated skip feature is alpha broadcast over x's channels.
    """

    def __init__(
        self,
        x_channels: int,
        g_channels: int,
        rng: np.random.Generator,
        inter_channels: Optional[int] = None,
    ) -> None:
        super().__init__()
        self.x_channels, self.g_channels = x_channels, g_channels
        self.inter_channels = inter_channels or max(x_channels // 2, 1)
        c_int = self.inter_channels
        self.w_x = Conv2d(x_channels, c_int, 1, rng, bias=False)
        self.w_g = Conv2d(g_channels, c_int, 1, rng, bias=False)
        self.b = Parameter(np.zeros(c_int, np.float32))
        self.psi = Conv2d(c_int, 1, 1, rng, bias=False)
        self.b_psi = Parameter(np.zeros(1, np.float32))

    def forward(self, x: Tensor, g: Tensor) -> Tuple[Tensor, Tensor]:
        _check_channels(x, self.x_channels, "AttentionGate(x)")
        _check_channels(g, self.g_channels, "AttentionGate(g)")
        if x.shape[2:] != g.shape[2:]:
            raise ShapeError(f"attention gate needs matching spatial dims, got x {x.shape[2:]} and g {g.shape[2:]}")

        joint = self.w_x(x) + self.w_g(g) + self.b.reshape(1, self.inter_channels, 1, 1)
        alpha = F.sigmoid(self.psi(F.relu(joint)) + self.b_psi.reshape(1, 1, 1, 1))
        return x * alpha, alpha

    def flops(self, h: int, w: int) -> int:
        return self.w_x.flops(h, w) + self.w_g.flops(h, w) + self.psi.flops(h, w)


class AttentionBlock(Module):
    """
    Spatial self-attention over the H*W positions of a feature map.

    Q, K project to d_k channels, V keeps all C channels so the residual merge is
    shape-valid: y = fusion(x + V A^T) with A = softmax(Q K^T / sqrt(d_k)).
    """

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator,
        key_channels: Optional[int] = None,
        pre_projection: bool = True,
        fusion_kernel: int = 3,
        max_tokens: int = DEFAULT_MAX_TOKENS,
        bn_momentum: float = F.BN_MOMENTUM,
        bn_eps: float = F.BN_EPS,
    ) -> None:
        super().__init__()
        self.channels = channels
        self.key_channels = key_channels or max(channels // 8, 8)
        self.max_tokens = max_tokens
        self.pre_conv: Optional[Conv2d] = None
        self.pre_bn: Optional[BatchNorm2d] = None
        if pre_projection:
            self.pre_conv = Conv2d(channels, channels, 1, rng)
            self.pre_bn = BatchNorm2d(channels, bn_momentum, bn_eps)
        self.w_q = Conv2d(channels, self.key_channels, 1, rng)
        self.w_k = Conv2d(channels, self.key_channels, 1, rng)
        self.w_v = Conv2d(channels, channels, 1, rng)
        self.fusion = Conv2d(channels, channels, fusion_kernel, rng, padding=fusion_kernel // 2)
        self.attention: Optional[np.ndarray] = None  # last (B, HW, HW) attention matrix

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.channels, "AttentionBlock")
        B, C, H, W = x.shape
        tokens = H * W
        if tokens > self.max_tokens:
            raise SpatialCapExceeded(tokens, self.max_tokens)

        features = x
        if self.pre_conv is not None:
            features = self.pre_bn(F.relu(self.pre_conv(x)))

        d_k = self.key_channels
        q = self.w_q(features).reshape(B, d_k, tokens).transpose(0, 2, 1)
        k = self.w_k(features).reshape(B, d_k, tokens)
        v = self.w_v(features).reshape(B, C, tokens)

        attention = F.softmax((q @ k) / math.sqrt(d_k), axis=-1)
        self.attention = attention.data
        attended = (v @ attention.transpose(0, 2, 1)).reshape(B, C, H, W)
        return self.fusion(x + attended)

    def flops(self, h: int, w: int) -> int:
        n = h * w
        total = self.w_q.flops(h, w) + self.w_k.flops(h, w) + self.w_v.flops(h, w) + self.fusion.flops(h, w)
        if self.pre_conv is not None:
            total += self.pre_conv.flops(h, w)
        return total + 2 * n * n * self.key_channels + 2 * n * n * self.channels
