"""
Image/mask samples, the split-aware `Dataset` container and its on-disk layout.

    <root>/images/<id>.pgm      8-bit binary PGM, image * 255
    <root>/masks/<id>.pgm       8-bit binary PGM, mask * 255
    <root>/meta/<id>.txt        key=value generator parameters or source path
    <root>/manifest.csv         id,split,source,foreground_fraction
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.model_selection import train_test_split

from pyheadseg.config import parse_lines
from pyheadseg.exceptions import DataError, MissingCounterpart, SampleNotFound, UnreadableImage
from pyheadseg.typed import Size2D, SplitName

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "split", "source", "foreground_fraction")
IMAGE_SUFFIXES = (".pgm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")
VAL_FRACTION = 0.2


@dataclass
class ImageSample:
    """
    A grayscale image in [0, 1] and its binary mask, both H x W.
    """

    id: str
    image: np.ndarray
    mask: np.ndarray
    split: SplitName = "train"
    source: str = "phantom"
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.image = np.asarray(self.image, dtype=np.float32)
        self.mask = np.asarray(self.mask).astype(np.uint8)
        if self.image.ndim != 2 or self.image.shape != self.mask.shape:
            raise DataError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} must be equal 2-D shapes")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise DataError(f"{self.id}: image values outside [0, 1]")
        if not np.isin(self.mask, (0, 1)).all():
            raise DataError(f"{self.id}: mask is not binary")

    @property
    def size(self) -> Size2D:
        return self.image.shape  # type: ignore[return-value]

    @property
    def foreground_fraction(self) -> float:
        return float(self.mask.mean())

    def with_split(self, split: SplitName) -> ImageSample:
        return replace(self, split=split)


@dataclass(frozen=True)
class ManifestRow:
    id: str
    split: SplitName
    source: str
    foreground_fraction: float

    def as_csv_row(self) -> List[str]:
        return [self.id, self.split, self.source, f"{self.foreground_fraction:.6f}"]


class Dataset:
    """
    An ordered collection of samples addressed by id.

    ```
    dataset = generate_dataset(250, (64, 64), "easy", seed=42)
    len(dataset.train), len(dataset.val)   # 200, 50
    dataset["phantom_0007"].mask
    for sample in dataset:                 # manifest order
        ...
    dataset.save("data/phantoms")
    Dataset.load("data/phantoms")
    ```
    """

    def __init__(self, samples: Iterable[ImageSample]) -> None:
        self._samples: List[ImageSample] = list(samples)
        self._index: Dict[str, int] = {}
        for position, sample in enumerate(self._samples):
            if sample.id in self._index:
                raise DataError(f"duplicate sample id {sample.id}")
            self._index[sample.id] = position

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self) -> Iterator[ImageSample]:
        return iter(self._samples)

    def __getitem__(self, sample_id: str) -> ImageSample:
        if sample_id not in self._index:
            raise SampleNotFound(sample_id)
        return self._samples[self._index[sample_id]]

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def __repr__(self) -> str:
        counts = ", ".join(f"{name}={len(self.split(name))}" for name in ("train", "val", "test"))
        return f"<Dataset {len(self)} samples: {counts}>"

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self._samples]

    def split(self, name: SplitName) -> List[ImageSample]:
        return [s for s in self._samples if s.split == name]

    @property
    def train(self) -> List[ImageSample]:
        return self.split("train")

    @property
    def val(self) -> List[ImageSample]:
        return self.split("val")

    @property
    def test(self) -> List[ImageSample]:
        return self.split("test")

    def manifest(self) -> List[ManifestRow]:
        return [ManifestRow(s.id, s.split, s.source, s.foreground_fraction) for s in self._samples]

    def save(self, directory: Union[str, Path], force: bool = False) -> Path:
        """
        Write the dataset layout; an existing manifest is only replaced with `force`.
        """
        root = Path(directory)
        if (root / "manifest.csv").exists() and not force:
            raise DataError(f"{root} already holds a dataset, pass force to overwrite")
        for sub in ("images", "masks", "meta"):
            (root / sub).mkdir(parents=True, exist_ok=True)

        for sample in self._samples:
            write_pgm(root / "images" / f"{sample.id}.pgm", sample.image)
            write_pgm(root / "masks" / f"{sample.id}.pgm", sample.mask.astype(np.float32))
            meta = [f"{key}={value}" for key, value in sample.meta.items()]
            (root / "meta" / f"{sample.id}.txt").write_text("\n".join(meta) + "\n")

        write_manifest(root / "manifest.csv", self.manifest())
        logger.info("saved %d samples to %s", len(self), root)
        return root

    @classmethod
    def load(cls, directory: Union[str, Path]) -> Dataset:
        """
        Read a layout written by `save`; images come back quantised to multiples of 1/255.
        """
        root = Path(directory)
        rows = read_manifest(root / "manifest.csv")
        samples = []
        for row in rows:
            image = read_grayscale(root / "images" / f"{row.id}.pgm", row.id, "images")
            mask = read_grayscale(root / "masks" / f"{row.id}.pgm", row.id, "masks") > 0.5
            meta_path = root / "meta" / f"{row.id}.txt"
            meta = parse_lines(meta_path.read_text().splitlines()) if meta_path.exists() else {}
            samples.append(ImageSample(row.id, image, mask, row.split, row.source, meta))
        return cls(samples)


def write_pgm(path: Path, array: np.ndarray) -> None:
    pixels = np.rint(np.clip(array, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")


def read_grayscale(
    path: Path,
    sample_id: str,
    folder: str,
    size: Optional[Size2D] = None,
    nearest: bool = False,
) -> np.ndarray:
    """
    8-bit grayscale file to a float32 array in [0, 1], optionally resized to (H, W).
    """
    if not path.exists():
        raise MissingCounterpart(sample_id, folder)
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if size is not None and img.size != (size[1], size[0]):
                resample = Image.Resampling.NEAREST if nearest else Image.Resampling.BILINEAR
                img = img.resize((size[1], size[0]), resample=resample)
            return np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise UnreadableImage(f"{path}: {exc}") from exc


def write_manifest(path: Path, rows: Sequence[ManifestRow]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv_row())


def read_manifest(path: Path) -> List[ManifestRow]:
    if not path.exists():
        raise DataError(f"{path} does not exist")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(MANIFEST_COLUMNS)}")
        return [
            ManifestRow(r["id"], r["split"], r["source"], float(r["foreground_fraction"]))  # type: ignore[arg-type]
            for r in reader
        ]


def assign_splits(ids: Sequence[str], seed: int, val_fraction: float = VAL_FRACTION) -> Dict[str, SplitName]:
    """
    Seeded random train/val split; the validation share is ceil(val_fraction * n).
    """
    n = len(ids)
    n_val = int(np.ceil(val_fraction * n)) if n >= 2 else 0
    if n_val == 0:
        return {i: "train" for i in ids}
    train_ids, val_ids = train_test_split(list(ids), test_size=n_val, random_state=seed, shuffle=True)
    splits: Dict[str, SplitName] = {i: "train" for i in train_ids}
    splits.update({i: "val" for i in val_ids})
    return splits


def _find_image_files(folder: Path) -> Dict[str, Path]:
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_hc18_layout(
    directory: Union[str, Path],
    size: Size2D = (256, 256),
    seed: int = 42,
) -> Dataset:
    """
    Ingest an `images/` + `masks/` folder pair of equally named 8-bit grayscale files.

    Images are resized bilinearly and scaled to [0, 1]; masks are resized with nearest
    neighbour and binarised at 0.5. A mask covering more than half of the frame is taken
    to have inverted polarity and is flipped. Masks that end up empty are skipped with a
    warning.
    """
    root = Path(directory)
    for sub in ("images", "masks"):
        if not (root / sub).is_dir():
            raise DataError(f"{root} has no {sub}/ folder")
    images = _find_image_files(root / "images")
    masks = _find_image_files(root / "masks")
    orphans = sorted(set(masks) - set(images))
    if orphans:
        raise MissingCounterpart(orphans[0], "images")

    samples: List[ImageSample] = []
    for stem, image_path in images.items():
        if stem not in masks:
            raise MissingCounterpart(stem, "masks")
        image = read_grayscale(image_path, stem, "images", size)
        mask = (read_grayscale(masks[stem], stem, "masks", size, nearest=True) > 0.5).astype(np.uint8)
        if mask.mean() > 0.5:
            logger.info("%s: foreground covers %.0f%% of the frame, inverting polarity", stem, 100 * mask.mean())
            mask = 1 - mask
        if not mask.any():
            warnings.warn(f"{stem}: empty mask after polarity correction, sample skipped")
            logger.warning("%s: degenerate mask skipped", stem)
            continue
        meta = {"source_image": str(image_path), "source_mask": str(masks[stem])}
        samples.append(ImageSample(stem, image, mask, "train", "hc18", meta))

    splits = assign_splits([s.id for s in samples], seed)
    return Dataset(s.with_split(splits[s.id]) for s in samples)


def stack(samples: Sequence[ImageSample]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Samples to (B, 1, H, W) float32 images and (B, 1, H, W) float32 masks.
    """
    images = np.stack([s.image for s in samples])[:, None].astype(np.float32)
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    return images, masks
