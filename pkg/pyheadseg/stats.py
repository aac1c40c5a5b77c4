"""
Paired comparison of two models' per-sample scores.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats as scipy_stats

from pyheadseg.enums import Architecture
from pyheadseg.exceptions import StatisticsError
from pyheadseg.report import MetricsReport

CONFIDENCE = 0.95
MIN_IQR_SAMPLES = 4
# differences whose spread is at rounding level count as constant
ZERO_SD = 1e-12


def _pair(a: Sequence[float], b: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise StatisticsError(f"paired scores need equal 1-D lengths, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise StatisticsError(f"at least 2 paired samples are needed, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise StatisticsError("scores contain undefined values")
    return x, y


def _t_critical(df: int, confidence: float = CONFIDENCE) -> float:
    return float(scipy_stats.t.ppf(0.5 + confidence / 2, df))


@dataclass(frozen=True)
class TTestResult:
    n: int
    delta_mean: float
    sd: float
    t_stat: float
    p_value: float
    ci95: Tuple[float, float]
    zero_variance: bool = False


def paired_ttest(a: Sequence[float], b: Sequence[float], confidence: float = CONFIDENCE) -> TTestResult:
    """
    Two-sided paired t-test on d = a - b with n - 1 degrees of freedom.

    When every difference is equal the statistic is undefined: t is 0 with p = 1 for a zero
    mean difference and +-inf with p = 0 otherwise, the interval collapses onto the mean,
    and `zero_variance` is set.
    """
    x, y = _pair(a, b)
    d = x - y
    n = d.size
    mean, sd = float(d.mean()), float(d.std(ddof=1))
    if sd <= ZERO_SD * max(1.0, abs(mean)):
        t_stat = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        p_value = 1.0 if mean == 0.0 else 0.0
        return TTestResult(n, mean, 0.0, t_stat, p_value, (mean, mean), zero_variance=True)

    se = sd / math.sqrt(n)
    t_stat = mean / se
    p_value = float(min(1.0, 2 * scipy_stats.t.sf(abs(t_stat), n - 1)))
    half = _t_critical(n - 1, confidence) * se
    return TTestResult(n, mean, sd, t_stat, p_value, (mean - half, mean + half))


def pooled_sd(sd_a: float, sd_b: float) -> float:
    return math.sqrt((sd_a**2 + sd_b**2) / 2)


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """
    (mean(a) - mean(b)) / sqrt((sd_a^2 + sd_b^2) / 2), sample SDs; a zero pooled SD gives
    0 for equal means and +-inf otherwise.
    """
    x, y = _pair(a, b)
    return cohens_d_from_summary(float(x.mean() - y.mean()), float(x.std(ddof=1)), float(y.std(ddof=1)))


def cohens_d_from_summary(delta: float, sd_a: float, sd_b: float) -> float:
    pooled = pooled_sd(sd_a, sd_b)
    if pooled == 0.0:
        return 0.0 if delta == 0.0 else math.copysign(math.inf, delta)
    return delta / pooled


def summary_interval(
    n: int,
    delta_mean: float,
    t_stat: float,
    confidence: float = CONFIDENCE,
) -> Tuple[float, float]:
    """
    Confidence interval implied by a published (n, mean difference, t) triple.
    """
    if n < 2 or t_stat == 0:
        raise StatisticsError("need n >= 2 and a non-zero t statistic")
    half = _t_critical(n - 1, confidence) * abs(delta_mean / t_stat)
    return delta_mean - half, delta_mean + half


def iqr(scores: Sequence[float]) -> float:
    """
    Q3 - Q1 with linearly interpolated quantiles (numpy's default, Hyndman-Fan type 7).
    """
    values = np.asarray(scores, dtype=np.float64)
    if values.size < MIN_IQR_SAMPLES:
        raise StatisticsError(f"IQR needs at least {MIN_IQR_SAMPLES} scores, got {values.size}")
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


def _iqr_or_nan(values: np.ndarray) -> float:
    return iqr(values) if values.size >= MIN_IQR_SAMPLES else float("nan")


def _architecture(label: str) -> Optional[Architecture]:
    try:
        return Architecture(label)
    except ValueError:
        return None


def _percent(value: float) -> str:
    return f"{100 * value:.3f}"


@dataclass(frozen=True)
class ComparisonResult:
    model_a: str
    model_b: str
    metric: str
    n: int
    delta_mean: float
    t_stat: float
    p_value: float
    cohens_d: float
    ci95: Tuple[float, float]
    mean_a: float
    sd_a: float
    iqr_a: float
    mean_b: float
    sd_b: float
    iqr_b: float
    zero_variance: bool = False
    zero_pooled_sd: bool = False

    @property
    def display_a(self) -> str:
        arch = _architecture(self.model_a)
        return arch.display_name if arch else self.model_a

    @property
    def display_b(self) -> str:
        arch = _architecture(self.model_b)
        return arch.display_name if arch else self.model_b

    def comparison_row(self) -> str:
        """
        `comparison | mean +- SD (%) of a | t | p | d | 95% CI (%)` for the mean difference.
        """
        p = "<0.001" if self.p_value < 0.001 else f"{self.p_value:.3f}"
        lo, hi = self.ci95
        flag = " (zero variance)" if self.zero_variance else ""
        return (
            f"{self.display_a} vs {self.display_b} | {_percent(self.mean_a)} ± {_percent(self.sd_a)} | "
            f"{self.t_stat:.3f} | {p} | {self.cohens_d:.3f} | [{_percent(lo)}, {_percent(hi)}]{flag}"
        )

    def component_row(self) -> str:
        arch = _architecture(self.model_a)
        component = arch.component_label if arch else self.model_a
        return f"{component} | {self.display_a} | {_percent(self.mean_a)} | {100 * self.delta_mean:+.3f}"

    def to_dict(self) -> Dict[str, object]:
        out = asdict(self)
        out["ci95"] = list(self.ci95)
        out["comparison_row"] = self.comparison_row()
        out["component_row"] = self.component_row()
        return out

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


COMPARISON_HEADER = "Comparison | Mean ± SD (%) | t-stat | p-value | Cohen's d | 95% CI (%)"
COMPONENT_HEADER = "Components | Model | Dice (%) | Δ vs baseline (%)"


def compare_models(report_a: MetricsReport, report_b: MetricsReport, metric: str = "dice") -> ComparisonResult:
    """
    Paired statistics of `metric` between two reports over the same sample ids.
    """
    a, b = report_a.aligned(report_b, metric)
    test = paired_ttest(a, b)
    sd_a, sd_b = float(a.std(ddof=1)), float(b.std(ddof=1))
    return ComparisonResult(
        model_a=report_a.label,
        model_b=report_b.label,
        metric=metric,
        n=test.n,
        delta_mean=test.delta_mean,
        t_stat=test.t_stat,
        p_value=test.p_value,
        cohens_d=cohens_d(a, b),
        ci95=test.ci95,
        mean_a=float(a.mean()),
        sd_a=sd_a,
        iqr_a=_iqr_or_nan(a),
        mean_b=float(b.mean()),
        sd_b=sd_b,
        iqr_b=_iqr_or_nan(b),
        zero_variance=test.zero_variance,
        zero_pooled_sd=pooled_sd(sd_a, sd_b) == 0.0,
    )


def component_table(reports: Mapping[Architecture, MetricsReport], metric: str = "dice") -> List[str]:
    """
    The residual x attention grid against the Standard U-Net, one formatted line per model.
    """
    if Architecture.UNET not in reports:
        raise StatisticsError("the component grid needs the Standard U-Net baseline")
    baseline = reports[Architecture.UNET].mean(metric)
    lines = [COMPONENT_HEADER]
    for arch in Architecture:
        if arch not in reports:
            continue
        value = reports[arch].mean(metric)
        delta = f"{100 * (value - baseline):+.3f}"
        lines.append(f"{arch.component_label} | {arch.display_name} | {_percent(value)} | {delta}")
    return lines


@dataclass(frozen=True)
class Correlation:
    r: float
    p_value: float
    n: int


def boundary_correlation(report: MetricsReport) -> Correlation:
    """
    Pearson correlation between per-sample Hausdorff distance and ASD over samples where
    both are defined.
    """
    pairs = [(r.hd_px, r.asd_px) for r in report.rows if r.hd_px is not None and r.asd_px is not None]
    if len(pairs) < 3:
        raise StatisticsError(f"correlation needs at least 3 defined samples, got {len(pairs)}")
    hd, asd = np.array(pairs, dtype=np.float64).T
    if hd.std() == 0 or asd.std() == 0:
        raise StatisticsError("correlation is undefined for constant distances")
    r, p = scipy_stats.pearsonr(hd, asd)
    return Correlation(float(r), float(p), len(pairs))
