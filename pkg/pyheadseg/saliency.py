"""
Grad-CAM saliency over captured network stages, attention-gate coefficient maps and the
spatial concentration of saliency inside the ground-truth mask.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.ndimage import zoom

from pyheadseg.dataset import ImageSample, write_pgm
from pyheadseg.exceptions import MethodNotAvailable, ShapeError, UnknownLayer
from pyheadseg.metrics import boundary
from pyheadseg.network import Network
from pyheadseg.report import MetricsReport
from pyheadseg.stats import TTestResult, paired_ttest
from pyheadseg.tensor import Tensor, no_grad
from pyheadseg.typed import ConcentrationMode, Size2D

logger = logging.getLogger(__name__)

DEFAULT_LAYER = "D4"
FOREGROUND_PROBABILITY = 0.5
COUNT_THRESHOLD = 0.5
SALIENCY_LAYERS = (
    "E1", "E2", "E3", "E4",
    "B",
    "U1", "U2", "U3", "U4",
    "A1", "A2", "A3", "A4",
    "D1", "D2", "D3", "D4",
)


@dataclass
class SaliencyMap:
    sample_id: str
    layer: str
    map: np.ndarray
    concentration: Optional[float] = None
    zero_map: bool = False


def upsample(array: np.ndarray, size: Size2D) -> np.ndarray:
    """
    Bilinear resize of a 2-D map to (H, W).
    """
    if array.shape == tuple(size):
        return array.astype(np.float64)
    factors = (size[0] / array.shape[0], size[1] / array.shape[1])
    return zoom(array.astype(np.float64), factors, order=1, mode="nearest", grid_mode=True)


def cam_from_gradients(activations: np.ndarray, gradients: np.ndarray, size: Size2D) -> np.ndarray:
    """
    ReLU(sum_c w_c A_c) with w_c the spatial mean of dScore/dA_c, resized to `size` and
    scaled to a maximum of 1 (an all-zero map stays zero).
    """
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise ShapeError(
            f"activations {activations.shape} and gradients {gradients.shape} must be equal C x h x w"
        )
    weights = gradients.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activations, axes=1), 0.0)
    cam = np.maximum(upsample(cam, size), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else np.zeros(size, dtype=np.float64)


def grad_cam(
    network: Network,
    image: np.ndarray,
    layer: str = DEFAULT_LAYER,
    sample_id: str = "",
) -> SaliencyMap:
    """
    Grad-CAM for the mean output logit over predicted-foreground pixels (all pixels when
    nothing is predicted) with respect to the activations of stage `layer`.
    """
    if layer not in SALIENCY_LAYERS:
        raise UnknownLayer(f"unknown layer {layer!r}, choose from {', '.join(SALIENCY_LAYERS)}")
    pixels = np.asarray(image, dtype=np.dtype(network.config.dtype))
    if pixels.ndim != 2:
        raise ShapeError(f"expected a single H x W image, got {pixels.shape}")

    network.eval()
    network.zero_grad()
    probabilities = network(Tensor(pixels[None, None]))
    activations = network.trace[layer]
    activations.retain_grad()
    logits = network.trace["logits"]

    foreground = probabilities.data > FOREGROUND_PROBABILITY
    if not foreground.any():
        foreground = np.ones_like(foreground)
    selector = foreground.astype(logits.dtype) / foreground.sum()
    score = (logits * Tensor(selector)).sum()
    score.backward()

    grads = activations.grad if activations.grad is not None else np.zeros_like(activations.data)
    cam = cam_from_gradients(activations.data[0], grads[0], pixels.shape)
    network.zero_grad()
    return SaliencyMap(sample_id, layer, cam, zero_map=not cam.any())


def concentration_index(
    saliency: Union[SaliencyMap, np.ndarray],
    mask: np.ndarray,
    mode: ConcentrationMode = "mass",
    threshold: float = COUNT_THRESHOLD,
) -> Optional[float]:
    """
    Share of saliency inside `mask`: activation mass inside over total mass ("mass"), or
    pixels at or above `threshold` inside over all such pixels ("count"). None when there
    is nothing to share.
    """
    values = saliency.map if isinstance(saliency, SaliencyMap) else np.asarray(saliency, dtype=np.float64)
    inside = np.asarray(mask).astype(bool)
    if values.shape != inside.shape:
        raise ShapeError(f"map {values.shape} and mask {inside.shape} differ")
    if mode == "count":
        active = values >= threshold
        total = int(active.sum())
        return int((active & inside).sum()) / total if total else None
    if mode != "mass":
        raise ValueError(f"unknown concentration mode {mode!r}")
    total = float(values.sum())
    if total <= 0:
        return None
    return float(values[inside].sum() / total)


def attention_coefficient_maps(network: Network, image: np.ndarray) -> List[np.ndarray]:
    """
    The gate coefficients alpha of every decoder level (coarsest first), resized to the
    input size.
    """
    if not network.config.use_attention_gates:
        raise MethodNotAvailable("attention_coefficient_maps", network.architecture.display_name)
    pixels = np.asarray(image, dtype=np.dtype(network.config.dtype))
    network.eval()
    with no_grad():
        network(Tensor(pixels[None, None]))
    maps = []
    for level in range(1, network.depth + 1):
        alpha = network.trace[f"alpha{level}"].data[0, 0]
        maps.append(np.clip(upsample(alpha, pixels.shape), 0.0, 1.0))
    return maps


def saliency_for_samples(
    network: Network,
    samples: Sequence[ImageSample],
    layer: str = DEFAULT_LAYER,
    mode: ConcentrationMode = "mass",
) -> List[SaliencyMap]:
    maps = []
    for sample in samples:
        saliency = grad_cam(network, sample.image, layer, sample.id)
        saliency.concentration = concentration_index(saliency, sample.mask, mode)
        maps.append(saliency)
    zero = sum(1 for m in maps if m.zero_map)
    if zero:
        logger.warning("%d of %d saliency maps are identically zero", zero, len(maps))
    return maps


def attach_concentration(report: MetricsReport, maps: Sequence[SaliencyMap]) -> MetricsReport:
    """
    Copy each map's concentration index into the report row of the same sample.
    """
    by_id: Dict[str, Optional[float]] = {m.sample_id: m.concentration for m in maps}
    rows = [replace(r, concentration=by_id.get(r.id, r.concentration)) for r in report.rows]
    return replace(report, rows=rows)


def compare_concentration(a: Sequence[SaliencyMap], b: Sequence[SaliencyMap]) -> TTestResult:
    """
    Paired t-test of concentration indices of two models over samples defined in both.
    """
    by_id = {m.sample_id: m.concentration for m in b}
    pairs = [
        (m.concentration, by_id[m.sample_id])
        for m in a
        if m.concentration is not None and by_id.get(m.sample_id) is not None
    ]
    return paired_ttest([p[0] for p in pairs], [p[1] for p in pairs])


def overlay(image: np.ndarray, saliency: np.ndarray, threshold: float = COUNT_THRESHOLD) -> np.ndarray:
    """
    The image with the outline of the thresholded saliency drawn in white.
    """
    out = np.asarray(image, dtype=np.float64).copy()
    outline = boundary((saliency >= threshold).astype(np.uint8))
    out[outline] = 1.0
    return out


def write_saliency(directory: Union[str, Path], saliency: SaliencyMap, image: np.ndarray) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    write_pgm(root / f"{saliency.sample_id}_{saliency.layer}.pgm", saliency.map)
    write_pgm(root / f"{saliency.sample_id}_{saliency.layer}_overlay.pgm", overlay(image, saliency.map))
    return root
