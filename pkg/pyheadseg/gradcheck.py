"""
Finite-difference oracle for the hand-written backward passes.
"""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from pyheadseg.tensor import Tensor

# gradients whose combined norm falls below this are zero up to roundoff
ZERO_GRADIENT = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    ||a - n|| / (||a|| + ||n||): 0 for a perfect match, 1 for orthogonal gradients.

    Two gradients that are both below `ZERO_GRADIENT` in norm agree and score 0.
    """
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    if scale < ZERO_GRADIENT:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(fn: Callable[[], float], array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """
    Perturb `array` in place entry by entry and difference the scalar `fn`.

    Central differences at `step` and `step / 2` are combined by Richardson
    extrapolation, which cancels the second-order truncation term.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    out = grad.reshape(-1)

    def central(i: int, h: float) -> float:
        original = flat[i]
        flat[i] = original + h
        plus = fn()
        flat[i] = original - h
        minus = fn()
        flat[i] = original
        return (plus - minus) / (2 * h)

    for i in range(flat.size):
        coarse = central(i, step)
        fine = central(i, step / 2)
        out[i] = (4 * fine - coarse) / 3
    return grad


def check_gradients(
    forward: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    seed: int = 0,
    step: float = 1e-5,
) -> Dict[int, float]:
    """
    Compare backward gradients of `sum(forward() * R)` against finite differences.

    `R` is a fixed random projection; a plain sum of batch-normalised activations has
    zero gradient. Returns the relative error per tensor index; every tensor must be
    float64 and require grad.
    """
    reference = forward()
    projection = np.random.default_rng(seed).standard_normal(reference.shape)

    def loss() -> Tensor:
        return (forward() * Tensor(projection)).sum()

    for t in tensors:
        t.zero_grad()
    loss().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value() -> float:
        return float(loss().data)

    return {i: relative_error(analytic[i], numeric_gradient(value, t.data, step)) for i, t in enumerate(tensors)}
