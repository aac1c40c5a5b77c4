"""
Paired training-time augmentation.

Parameters are drawn once per call into an `AugmentParams` and the same geometric
transform is then applied to the image (bilinear) and the mask (nearest neighbour),
so an image can never be flipped or rotated without its mask.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import rotate, zoom

from pyheadseg.dataset import ImageSample
from pyheadseg.exceptions import DataError

MAX_ROTATION = 30.0
SCALE_RANGE = (0.9, 1.1)
BRIGHTNESS_RANGE = (-0.1, 0.1)
CONTRAST_RANGE = (0.9, 1.1)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0
    scale: float = 1.0
    brightness: float = 0.0
    contrast: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self == AugmentParams()


def sample_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        hflip=bool(rng.random() < 0.5),
        vflip=bool(rng.random() < 0.5),
        angle=float(rng.uniform(-MAX_ROTATION, MAX_ROTATION)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        brightness=float(rng.uniform(*BRIGHTNESS_RANGE)),
        contrast=float(rng.uniform(*CONTRAST_RANGE)),
    )


def center_fit(array: np.ndarray, size) -> np.ndarray:
    """
    Center-crop or zero-pad a 2-D array to `size`.
    """
    out = np.zeros(size, dtype=array.dtype)
    src, dst = [], []
    for have, want in zip(array.shape, size):
        if have >= want:
            start = (have - want) // 2
            src.append(slice(start, start + want))
            dst.append(slice(0, want))
        else:
            start = (want - have) // 2
            src.append(slice(0, have))
            dst.append(slice(start, start + have))
    out[tuple(dst)] = array[tuple(src)]
    return out


def apply_geometry(array: np.ndarray, params: AugmentParams, order: int) -> np.ndarray:
    size = array.shape
    if params.hflip:
        array = array[:, ::-1]
    if params.vflip:
        array = array[::-1, :]
    if params.angle != 0.0:
        array = rotate(array, params.angle, reshape=False, order=order, mode="constant", cval=0.0)
    if params.scale != 1.0:
        array = center_fit(zoom(array, params.scale, order=order, mode="constant", cval=0.0), size)
    return np.ascontiguousarray(array)


def apply_augmentation(sample: ImageSample, params: AugmentParams) -> ImageSample:
    image = apply_geometry(sample.image.astype(np.float64), params, order=1)
    mask = apply_geometry(sample.mask, params, order=0)
    image = np.clip(image * params.contrast + params.brightness, 0.0, 1.0)
    return replace(sample, image=image.astype(np.float32), mask=(mask > 0).astype(np.uint8))


def augment(sample: ImageSample, seed: int) -> ImageSample:
    """
    Randomly flip, rotate (+-30 degrees), rescale (0.9-1.1) and adjust brightness and
    contrast of a training sample; the result is a pure function of (sample, seed).
    """
    if sample.split != "train":
        raise DataError(f"{sample.id}: only train-split samples are augmented, got {sample.split}")
    return apply_augmentation(sample, sample_augment_params(np.random.default_rng(seed)))
