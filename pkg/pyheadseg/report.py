"""
Per-sample evaluation of a network on a dataset split, aggregation and report files.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from pyheadseg import metrics
from pyheadseg.dataset import ImageSample, stack
from pyheadseg.exceptions import DataError, ReportMismatch
from pyheadseg.metrics import ConfusionCounts, Curves

if TYPE_CHECKING:
    from pyheadseg.network import Network

logger = logging.getLogger(__name__)

METRIC_NAMES = ("dice", "iou", "precision", "recall", "f1", "specificity", "error_rate", "hd_px", "asd_px")
EVAL_BATCH = 8

EMPTY_CONVENTION = (
    "two empty masks score dice = iou = 1; hd/asd are undefined when either mask is empty "
    "and are excluded from their aggregates"
)


@dataclass
class SampleMetrics:
    id: str
    dice: float
    iou: float
    precision: float
    recall: float
    f1: float
    specificity: float
    error_rate: float
    hd_px: Optional[float]
    asd_px: Optional[float]
    empty_both: bool = False
    concentration: Optional[float] = None

    @classmethod
    def compute(cls, sample_id: str, pred: np.ndarray, target: np.ndarray) -> SampleMetrics:
        counts = metrics.confusion(pred, target)
        return cls(
            id=sample_id,
            dice=metrics.dice(pred, target),
            iou=metrics.iou(pred, target),
            precision=counts.precision,
            recall=counts.recall,
            f1=counts.f1,
            specificity=counts.specificity,
            error_rate=counts.error_rate,
            hd_px=metrics.hausdorff(pred, target),
            asd_px=metrics.asd(pred, target),
            empty_both=metrics.both_empty(pred, target),
        )


@dataclass
class Aggregate:
    mean: float
    sd: float
    median: float
    iqr: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Optional[Aggregate]:
        if not values:
            return None
        array = np.asarray(values, dtype=np.float64)
        q1, q3 = np.percentile(array, [25, 75])
        sd = float(array.std(ddof=1)) if array.size > 1 else 0.0
        return cls(float(array.mean()), sd, float(np.median(array)), float(q3 - q1), int(array.size))


@dataclass
class MetricsReport:
    """
    Per-sample rows in evaluation order plus aggregates and degenerate-case counts.
    """

    rows: List[SampleMetrics]
    threshold: float = 0.5
    pooled: Optional[ConfusionCounts] = None
    curves: Optional[Curves] = None
    label: str = ""
    meta: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.rows]

    def values(self, metric: str) -> List[float]:
        """
        Defined values of one metric in row order (undefined distances are skipped).
        """
        return [getattr(r, metric) for r in self.rows if getattr(r, metric) is not None]

    def column(self, metric: str) -> np.ndarray:
        """
        One metric over all rows, NaN where undefined.
        """
        values = [getattr(r, metric) for r in self.rows]
        return np.array([np.nan if v is None else v for v in values], dtype=np.float64)

    @property
    def aggregates(self) -> Dict[str, Optional[Aggregate]]:
        names = list(METRIC_NAMES)
        if any(r.concentration is not None for r in self.rows):
            names.append("concentration")
        return {name: Aggregate.of(self.values(name)) for name in names}

    @property
    def undefined_distances(self) -> int:
        return sum(1 for r in self.rows if r.hd_px is None)

    @property
    def empty_both(self) -> int:
        return sum(1 for r in self.rows if r.empty_both)

    def mean(self, metric: str) -> float:
        aggregate = self.aggregates[metric]
        return aggregate.mean if aggregate else float("nan")

    def aligned(self, other: MetricsReport, metric: str):
        """
        Paired values of `metric` for the common id set, in this report's order.
        """
        if set(self.ids) != set(other.ids):
            only_a = sorted(set(self.ids) - set(other.ids))
            only_b = sorted(set(other.ids) - set(self.ids))
            raise ReportMismatch(
                f"reports cover different samples: only in first {only_a[:5]}, only in second {only_b[:5]}"
            )
        by_id = {r.id: r for r in other.rows}
        b = MetricsReport(rows=[by_id[i] for i in self.ids])
        return self.column(metric), b.column(metric)

    def summary(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "label": self.label,
            "threshold": self.threshold,
            "n": len(self.rows),
            "aggregates": {k: (asdict(v) if v else None) for k, v in self.aggregates.items()},
            "degenerate": {"empty_both": self.empty_both, "undefined_distances": self.undefined_distances},
            "convention": EMPTY_CONVENTION,
        }
        if self.pooled is not None:
            out["pooled"] = {
                **asdict(self.pooled),
                "precision": self.pooled.precision,
                "recall": self.pooled.recall,
                "specificity": self.pooled.specificity,
                "error_rate": self.pooled.error_rate,
            }
        if self.curves is not None:
            out["auc_roc"] = self.curves.auc_roc
            out["auc_pr"] = self.curves.auc_pr
        return out

    def write(self, directory: Union[str, Path]) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        self.to_csv(root / "metrics.csv")
        (root / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        if self.curves is not None:
            _write_columns(root / "roc.csv", {"fpr": self.curves.fpr, "tpr": self.curves.tpr})
            _write_columns(root / "pr.csv", {"recall": self.curves.recall, "precision": self.curves.precision})
        return root

    def to_csv(self, path: Union[str, Path]) -> None:
        names = [f.name for f in fields(SampleMetrics)]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in self.rows:
                writer.writerow([_format(getattr(row, name)) for name in names])

    @classmethod
    def from_csv(cls, path: Union[str, Path], label: str = "") -> MetricsReport:
        path = Path(path)
        if path.is_dir():
            path = path / "metrics.csv"
        if not path.exists():
            raise DataError(f"{path} does not exist")
        parsers: Dict[str, Callable[[str], object]] = {"id": str, "empty_both": lambda v: v == "true"}
        rows = []
        with path.open(newline="") as fh:
            for record in csv.DictReader(fh):
                values = {}
                for f in fields(SampleMetrics):
                    raw = record.get(f.name, "")
                    parse = parsers.get(f.name, float)
                    values[f.name] = None if raw == "" and parse is float else parse(raw)
                rows.append(SampleMetrics(**values))  # type: ignore[arg-type]
        summary = path.parent / "summary.json"
        if not label and summary.exists():
            label = json.loads(summary.read_text()).get("label", "")
        return cls(rows=rows, label=label or path.parent.name)


def _format(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_columns(path: Path, columns: Dict[str, np.ndarray]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(columns))
        for values in zip(*columns.values()):
            writer.writerow([repr(float(v)) for v in values])


def report_from_predictions(
    samples: Sequence[ImageSample],
    probabilities: np.ndarray,
    threshold: float = 0.5,
    label: str = "",
) -> MetricsReport:
    """
    Build a report from B x H x W probabilities aligned with `samples`.
    """
    if len(samples) != len(probabilities):
        raise ReportMismatch(f"{len(probabilities)} predictions for {len(samples)} samples")
    rows = []
    pooled = ConfusionCounts(0, 0, 0, 0)
    for sample, prob in zip(samples, probabilities):
        pred = (prob >= threshold).astype(np.uint8)
        rows.append(SampleMetrics.compute(sample.id, pred, sample.mask))
        pooled = pooled + metrics.confusion(pred, sample.mask)
    targets = np.stack([s.mask for s in samples])
    curves = metrics.roc_pr_curves(np.clip(probabilities, 0.0, 1.0), targets)
    return MetricsReport(rows=rows, threshold=threshold, pooled=pooled, curves=curves, label=label)


def evaluate(
    network: Network,
    samples: Sequence[ImageSample],
    threshold: float = 0.5,
    label: str = "",
) -> MetricsReport:
    """
    Metrics of `network` (eval mode, no tape) on `samples` at a fixed threshold.
    """
    if not samples:
        raise DataError("nothing to evaluate: the split is empty")
    probabilities = predict_samples(network, samples)
    report = report_from_predictions(samples, probabilities, threshold, label or network.architecture.value)
    logger.info(
        "%s: mean dice %.4f over %d samples (%d with undefined distances)",
        report.label,
        report.mean("dice"),
        len(report),
        report.undefined_distances,
    )
    return report


def predict_samples(network: Network, samples: Sequence[ImageSample], batch_size: int = EVAL_BATCH) -> np.ndarray:
    outputs = []
    for start in range(0, len(samples), batch_size):
        images, _ = stack(samples[start:start + batch_size])
        outputs.append(network.predict(images))
    return np.concatenate(outputs)
