"""
Synthetic fetal-head ultrasound phantoms.

A phantom is a filled rotated ellipse (the mask) drawn as a bright skull ring around a
dimmer interior on a dark background, degraded with multiplicative speckle, an optional
acoustic shadow over a sector of the boundary and a gaussian blur.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from pyheadseg.config import dump_lines, from_mapping
from pyheadseg.dataset import Dataset, ImageSample, assign_splits
from pyheadseg.exceptions import ConfigError, PhantomOutOfBounds
from pyheadseg.typed import Difficulty, Size2D

logger = logging.getLogger(__name__)

MARGIN = 1.0
SHADOW_MIN_RADIUS = 0.7
FOREGROUND_RANGE = (0.12, 0.45)
ASPECT_RANGE = (0.7, 0.95)


@dataclass
class PhantomParams:
    """
    Geometry and appearance of one phantom, in pixels and radians.

    x runs along columns and y along rows; pixel (x, y) sits at integer coordinates.
    The shadow is off while `shadow_width` is 0; otherwise the sector of angular width
    `shadow_width` starting at `shadow_start` (measured in the ellipse frame) is multiplied
    by `shadow_attenuation` from normalised radius 0.7 outwards.
    """

    cx: float = 32.0
    cy: float = 32.0
    a: float = 20.0
    b: float = 16.0
    theta: float = 0.0
    thickness: float = 2.0
    ring_brightness: float = 0.9
    interior_level: float = 0.35
    background_level: float = 0.05
    speckle_sigma: float = 0.0
    blur_radius: float = 0.0
    shadow_start: float = 0.0
    shadow_width: float = 0.0
    shadow_attenuation: float = 1.0

    @property
    def has_shadow(self) -> bool:
        return self.shadow_width > 0 and self.shadow_attenuation < 1

    def half_extents(self) -> Tuple[float, float]:
        """
        Half width and half height of the rotated ellipse's bounding box.
        """
        c, s = math.cos(self.theta), math.sin(self.theta)
        return math.hypot(self.a * c, self.b * s), math.hypot(self.a * s, self.b * c)

    def validate(self, size: Size2D) -> PhantomParams:
        height, width = size
        if not self.a >= self.b > 0:
            raise PhantomOutOfBounds(f"semi-axes must satisfy a >= b > 0, got a={self.a}, b={self.b}")
        if self.speckle_sigma < 0 or self.blur_radius < 0:
            raise PhantomOutOfBounds("speckle sigma and blur radius must be non-negative")
        if not 0 < self.thickness <= self.b:
            raise PhantomOutOfBounds(f"ring thickness {self.thickness} must lie in (0, b]")
        if not 0 <= self.shadow_attenuation <= 1:
            raise PhantomOutOfBounds("shadow attenuation must lie in [0, 1]")
        for name in ("ring_brightness", "interior_level", "background_level"):
            if not 0 <= getattr(self, name) <= 1:
                raise PhantomOutOfBounds(f"{name} must lie in [0, 1]")
        hx, hy = self.half_extents()
        if self.cx - hx < MARGIN or self.cx + hx > width - 1 - MARGIN:
            raise PhantomOutOfBounds(f"ellipse spans x {self.cx - hx:.1f}..{self.cx + hx:.1f} outside width {width}")
        if self.cy - hy < MARGIN or self.cy + hy > height - 1 - MARGIN:
            raise PhantomOutOfBounds(f"ellipse spans y {self.cy - hy:.1f}..{self.cy + hy:.1f} outside height {height}")
        return self

    def to_meta(self) -> Dict[str, str]:
        return dict(line.split("=", 1) for line in dump_lines(self))

    @classmethod
    def from_meta(cls, meta: Dict[str, str]) -> PhantomParams:
        known = {k: v for k, v in meta.items() if k in asdict(cls())}
        return from_mapping(cls, known)


def ellipse_frame(params: PhantomParams, size: Size2D) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel coordinates (u, v) along the ellipse's major and minor axes.
    """
    height, width = size
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = x - params.cx, y - params.cy
    c, s = math.cos(params.theta), math.sin(params.theta)
    return dx * c + dy * s, -dx * s + dy * c


def ellipse_mask(params: PhantomParams, size: Size2D) -> np.ndarray:
    u, v = ellipse_frame(params, size)
    return ((u / params.a) ** 2 + (v / params.b) ** 2 <= 1.0).astype(np.uint8)


def ring_mask(params: PhantomParams, size: Size2D) -> np.ndarray:
    """
    Pixels of the ellipse outside the inner ellipse shrunk by the ring thickness.
    """
    u, v = ellipse_frame(params, size)
    inner_a, inner_b = params.a - params.thickness, params.b - params.thickness
    outer = (u / params.a) ** 2 + (v / params.b) ** 2 <= 1.0
    if inner_b <= 0:
        return outer.astype(np.uint8)
    inner = (u / inner_a) ** 2 + (v / inner_b) ** 2 <= 1.0
    return (outer & ~inner).astype(np.uint8)


def shadow_mask(params: PhantomParams, size: Size2D) -> np.ndarray:
    if not params.has_shadow:
        return np.zeros(size, dtype=bool)
    u, v = ellipse_frame(params, size)
    radius = np.sqrt((u / params.a) ** 2 + (v / params.b) ** 2)
    angle = np.mod(np.arctan2(v, u) - params.shadow_start, 2 * math.pi)
    return (angle <= params.shadow_width) & (radius >= SHADOW_MIN_RADIUS)


def generate_phantom(
    params: PhantomParams,
    size: Size2D = (64, 64),
    seed: int = 0,
    sample_id: str = "phantom",
) -> ImageSample:
    params.validate(size)
    rng = np.random.default_rng(seed)

    mask = ellipse_mask(params, size)
    ring = ring_mask(params, size).astype(bool)
    image = np.full(size, params.background_level, dtype=np.float64)
    image[mask.astype(bool)] = params.interior_level
    image[ring] = params.ring_brightness

    if params.speckle_sigma > 0:
        image *= 1.0 + params.speckle_sigma * rng.standard_normal(size)
    if params.has_shadow:
        image[shadow_mask(params, size)] *= params.shadow_attenuation
    if params.blur_radius > 0:
        image = gaussian_filter(image, sigma=params.blur_radius, mode="nearest")
    image = np.clip(image, 0.0, 1.0)

    meta = params.to_meta()
    meta["seed"] = str(seed)
    return ImageSample(sample_id, image.astype(np.float32), mask, source="phantom", meta=meta)


def sample_params(rng: np.random.Generator, size: Size2D, difficulty: Difficulty = "easy") -> PhantomParams:
    """
    Draw phantom parameters; foreground covers 12-45% of the frame before discretisation.
    """
    height, width = size
    fraction = rng.uniform(*FOREGROUND_RANGE)
    aspect = rng.uniform(*ASPECT_RANGE)
    theta = rng.uniform(0.0, math.pi)
    a = math.sqrt(fraction * height * width / (math.pi * aspect))
    b = aspect * a

    params = PhantomParams(a=a, b=b, theta=theta)
    hx, hy = params.half_extents()
    shrink = min(
        1.0,
        (width - 1 - 2 * MARGIN) / (2 * hx + 1e-9),
        (height - 1 - 2 * MARGIN) / (2 * hy + 1e-9),
    )
    params.a, params.b = a * shrink * 0.999, b * shrink * 0.999
    hx, hy = params.half_extents()
    params.cx = rng.uniform(MARGIN + hx, width - 1 - MARGIN - hx)
    params.cy = rng.uniform(MARGIN + hy, height - 1 - MARGIN - hy)

    params.thickness = max(1.5, rng.uniform(0.06, 0.12) * params.b)
    params.ring_brightness = rng.uniform(0.75, 0.95)
    params.interior_level = rng.uniform(0.25, 0.45)
    params.background_level = rng.uniform(0.02, 0.1)
    if difficulty == "hard":
        params.speckle_sigma = rng.uniform(0.25, 0.45)
        params.blur_radius = rng.uniform(0.8, 1.5)
        params.shadow_start = rng.uniform(0.0, 2 * math.pi)
        params.shadow_width = rng.uniform(math.pi / 6, math.pi / 2)
        params.shadow_attenuation = rng.uniform(0.1, 0.4)
    else:
        params.speckle_sigma = rng.uniform(0.05, 0.15)
        params.blur_radius = rng.uniform(0.5, 1.0)
    return params


def generate_dataset(
    n: int,
    size: Size2D = (64, 64),
    difficulty: Difficulty = "easy",
    seed: int = 42,
) -> Dataset:
    """
    `n` phantoms with a seeded 80/20 train/val split, ids `phantom_0000`, `phantom_0001`, ...
    """
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    if difficulty not in ("easy", "hard"):
        raise ConfigError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(n):
        params = sample_params(rng, size, difficulty)
        noise_seed = int(rng.integers(2**31 - 1))
        sample = generate_phantom(params, size, noise_seed, f"phantom_{index:04d}")
        sample.meta["difficulty"] = difficulty
        samples.append(sample)

    splits = assign_splits([s.id for s in samples], seed)
    dataset = Dataset(s.with_split(splits[s.id]) for s in samples)
    logger.info("generated %d %s phantoms at %dx%d", n, difficulty, *size)
    return dataset
