"""
Differentiable operations the segmentation networks are built from.

Convolutions run as im2col + one batched matrix multiply; the transposed
convolution is restricted to the 2x2 / stride-2 up-sampling the decoder uses.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit
from scipy.special import softmax as _softmax

from pyheadseg.exceptions import ShapeError
from pyheadseg.tensor import Function, Matmul, Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
BCE_EPS = 1e-7


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: Tuple[int, int], stride: int, out_hw: Tuple[int, int]) -> np.ndarray:
    """
    (B, C, H, W) padded input -> (B, C*kh*kw, H_out*W_out) patch columns.
    """
    x = np.ascontiguousarray(x)
    B, C = x.shape[:2]
    kh, kw = kernel
    h_out, w_out = out_hw
    sB, sC, sH, sW = x.strides
    patches = as_strided(
        x,
        shape=(B, C, kh, kw, h_out, w_out),
        strides=(sB, sC, sH, sW, stride * sH, stride * sW),
        writeable=False,
    )
    return patches.reshape(B, C * kh * kw, h_out * w_out)


def col2im(
    cols: np.ndarray,
    padded_shape: Tuple[int, int, int, int],
    kernel: Tuple[int, int],
    stride: int,
    out_hw: Tuple[int, int],
) -> np.ndarray:
    """
    Scatter-add patch columns back onto the padded input grid (adjoint of im2col).
    """
    B, C = padded_shape[:2]
    kh, kw = kernel
    h_out, w_out = out_hw
    image = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(B, C, kh, kw, h_out, w_out)
    for i in range(kh):
        for j in range(kw):
            image[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += cols[:, :, i, j]
    return image


class Conv2d(Function):
    def forward(self, x, weight, bias=None, stride=1, padding=0):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv2d expects BCHW input and OIkk weight, got {x.shape} and {weight.shape}")
        B, C, H, W = x.shape
        O, I, kh, kw = weight.shape
        if C != I:
            raise ShapeError(f"conv2d input has {C} channels but the weight expects {I}")
        if bias is not None and bias.shape != (O,):
            raise ShapeError(f"conv2d bias has shape {bias.shape}, expected ({O},)")
        h_out = conv_output_size(H, kh, stride, padding)
        w_out = conv_output_size(W, kw, stride, padding)
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"{kh}x{kw} kernel does not fit a {H}x{W} input padded by {padding}")

        if padding:
            x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        self.cols = im2col(x, (kh, kw), stride, (h_out, w_out))
        self.padded_shape = x.shape
        self.weight = weight
        self.stride, self.padding = stride, padding
        self.has_bias = bias is not None

        out = np.matmul(weight.reshape(O, -1), self.cols)
        if bias is not None:
            out += bias.reshape(1, O, 1)
        return out.reshape(B, O, h_out, w_out)

    def backward(self, grad):
        B, O, h_out, w_out = grad.shape
        kh, kw = self.weight.shape[2:]
        grad = grad.reshape(B, O, -1)

        grad_weight = np.tensordot(grad, self.cols, axes=([0, 2], [0, 2])).reshape(self.weight.shape)
        grad_cols = np.matmul(self.weight.reshape(O, -1).T, grad)
        grad_x = col2im(grad_cols, self.padded_shape, (kh, kw), self.stride, (h_out, w_out))
        p = self.padding
        if p:
            grad_x = grad_x[:, :, p:-p, p:-p]

        grads = [np.ascontiguousarray(grad_x), grad_weight]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2)))
        return grads


class ConvTranspose2d(Function):
    def forward(self, x, weight, bias=None, stride=2):
        if x.ndim != 4 or weight.ndim != 4:
            raise ShapeError(f"conv_transpose2d expects BCHW input and IOkk weight, got {x.shape} and {weight.shape}")
        if stride != 2 or weight.shape[2:] != (2, 2):
            raise ShapeError("only the 2x2, stride-2 transposed convolution (exact doubling) is supported")
        B, C, H, W = x.shape
        I, O = weight.shape[:2]
        if C != I:
            raise ShapeError(f"conv_transpose2d input has {C} channels but the weight expects {I}")
        self.x, self.weight = x, weight
        self.has_bias = bias is not None

        # (B, H, W, O, 2, 2) -> (B, O, H, 2, W, 2)
        out = np.tensordot(x, weight, axes=([1], [0])).transpose(0, 3, 1, 4, 2, 5)
        out = np.ascontiguousarray(out).reshape(B, O, 2 * H, 2 * W)
        if bias is not None:
            out += bias.reshape(1, O, 1, 1)
        return out

    def backward(self, grad):
        B, C, H, W = self.x.shape
        O = self.weight.shape[1]
        blocks = grad.reshape(B, O, H, 2, W, 2)
        grad_x = np.tensordot(blocks, self.weight, axes=([1, 3, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        grad_weight = np.tensordot(self.x, blocks, axes=([0, 2, 3], [0, 2, 4]))
        grads = [np.ascontiguousarray(grad_x), grad_weight]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads


class BatchNorm2d(Function):
    def forward(self, x, gamma, beta, running_mean, running_var, training, momentum, eps):
        C = x.shape[1]
        if gamma.shape != (C,) or beta.shape != (C,):
            raise ShapeError(f"batchnorm affine parameters sized {gamma.shape} for {C} channels")
        axes = (0, 2, 3)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // C
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * (var * n / (n - 1) if n > 1 else var)
        else:
            mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)

        self.inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(1, C, 1, 1)
        self.xhat = (x - mean.reshape(1, C, 1, 1)) * self.inv_std
        self.gamma = gamma.reshape(1, C, 1, 1)
        self.training = training
        return self.gamma * self.xhat + beta.reshape(1, C, 1, 1)

    def backward(self, grad):
        axes = (0, 2, 3)
        grad_gamma = (grad * self.xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        dxhat = grad * self.gamma
        if self.training:
            n = grad.size // grad.shape[1]
            grad_x = (self.inv_std / n) * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - self.xhat * (dxhat * self.xhat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = dxhat * self.inv_std
        return grad_x, grad_gamma, grad_beta


class MaxPool2d(Function):
    def forward(self, x, kernel=2, stride=2):
        if kernel != 2 or stride != 2:
            raise ShapeError("only 2x2, stride-2 max pooling is supported")
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ShapeError(f"max pooling needs even spatial dims, got {H}x{W}")
        self.shape = x.shape
        windows = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
        # argmax keeps the first maximum in row-major window order
        self.index = windows.argmax(axis=-1)[..., None]
        return np.take_along_axis(windows, self.index, axis=-1)[..., 0]

    def backward(self, grad):
        B, C, H, W = self.shape
        routed = np.zeros((B, C, H // 2, W // 2, 4), dtype=grad.dtype)
        np.put_along_axis(routed, self.index, grad[..., None], axis=-1)
        return (routed.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(self.shape),)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        self.out = expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Softmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        self.out = _softmax(x, axis=axis).astype(x.dtype)
        return self.out

    def backward(self, grad):
        inner = (grad * self.out).sum(axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class Concat(Function):
    def forward(self, *arrays, axis=1):
        reference = arrays[0].shape
        for array in arrays[1:]:
            others = [d for i, d in enumerate(array.shape) if i != axis]
            if array.ndim != len(reference) or others != [d for i, d in enumerate(reference) if i != axis]:
                raise ShapeError(f"cannot concatenate {array.shape} with {reference} along axis {axis}")
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return [np.ascontiguousarray(g) for g in np.split(grad, self.splits, axis=self.axis)]


class BinaryCrossEntropy(Function):
    def forward(self, pred, target, eps=BCE_EPS):
        if pred.shape != target.shape:
            raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
        self.inside = (pred >= eps) & (pred <= 1 - eps)
        self.p = np.clip(pred, eps, 1 - eps)
        self.t = target
        losses = -(target * np.log(self.p) + (1 - target) * np.log1p(-self.p))
        return np.asarray(losses.mean(), dtype=pred.dtype)

    def backward(self, grad):
        local = (self.p - self.t) / (self.p * (1 - self.p)) / self.p.size
        return grad * local * self.inside, None


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*inputs, stride=stride, padding=padding)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return ConvTranspose2d.apply(*inputs, stride=stride)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Train mode normalises with batch statistics and folds them into the running
    estimates (in place); eval mode normalises with the running estimates.
    """
    return BatchNorm2d.apply(
        x,
        gamma,
        beta,
        running_mean=running_mean,
        running_var=running_var,
        training=training,
        momentum=momentum,
        eps=eps,
    )


def maxpool2d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    return MaxPool2d.apply(x, kernel=kernel, stride=stride)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Matmul.apply(a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    return a * b


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return Concat.apply(*tensors, axis=1)


def binary_cross_entropy(pred: Tensor, target: Tensor, eps: float = BCE_EPS) -> Tensor:
    return BinaryCrossEntropy.apply(pred, target, eps=eps)
