import json
import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from pyheadseg.enums import Architecture
from pyheadseg.exceptions import ReportMismatch, StatisticsError
from pyheadseg.report import MetricsReport, SampleMetrics
from pyheadseg.stats import (
    COMPONENT_HEADER,
    boundary_correlation,
    cohens_d,
    cohens_d_from_summary,
    compare_models,
    component_table,
    iqr,
    paired_ttest,
    summary_interval,
)


def report_of(dices, label="", distances=None):
    distances = distances or [(1.0, 0.5)] * len(dices)
    rows = [
        SampleMetrics(f"s{i:03d}", d, d / (2 - d), 1.0, 1.0, 1.0, 1.0, 0.0, hd, asd)
        for i, (d, (hd, asd)) in enumerate(zip(dices, distances))
    ]
    return MetricsReport(rows=rows, label=label)


class TestPairedTTest:
    def test_hand_case(self):
        result = paired_ttest([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert result.delta_mean == 2.0
        assert result.sd == 1.0
        assert result.t_stat == pytest.approx(3.4641, abs=1e-4)
        assert result.n == 3

    def test_matches_scipy(self, rng):
        for _ in range(50):
            a, b = rng.random(30), rng.random(30)
            ours = paired_ttest(a, b)
            reference = scipy_stats.ttest_rel(a, b)
            assert ours.t_stat == pytest.approx(reference.statistic, rel=1e-9)
            assert ours.p_value == pytest.approx(reference.pvalue, rel=1e-9)

    def test_interval_contains_mean(self, rng):
        result = paired_ttest(rng.random(20), rng.random(20))
        lo, hi = result.ci95
        assert lo < result.delta_mean < hi
        assert (lo + hi) / 2 == pytest.approx(result.delta_mean)

    def test_interval_shrinks_with_root_n(self, rng):
        widths = {}
        for n in (10, 40, 160):
            z = rng.normal(size=n)
            d = 0.02 + 0.05 * (z - z.mean()) / z.std(ddof=1)
            lo, hi = paired_ttest(d, np.zeros(n)).ci95
            widths[n] = hi - lo
            critical = scipy_stats.t.ppf(0.975, n - 1)
            assert widths[n] * math.sqrt(n) / critical == pytest.approx(2 * 0.05, rel=1e-9)
        assert widths[10] > widths[40] > widths[160]

    def test_antisymmetry(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            a, b = rng.random(n), rng.random(n)
            forward, backward = paired_ttest(a, b), paired_ttest(b, a)
            assert forward.t_stat == pytest.approx(-backward.t_stat, abs=1e-9)
            assert forward.p_value == pytest.approx(backward.p_value, abs=1e-12)
            assert forward.ci95[0] == pytest.approx(-backward.ci95[1], abs=1e-12)

    def test_identical_scores(self):
        result = paired_ttest([0.8, 0.9, 0.95], [0.8, 0.9, 0.95])
        assert result.zero_variance
        assert result.t_stat == 0.0 and result.p_value == 1.0
        assert result.ci95 == (0.0, 0.0)

    def test_constant_shift(self):
        b = np.array([0.1, 0.2, 0.3, 0.4])
        result = paired_ttest(b + 0.5, b)
        assert result.zero_variance
        assert result.t_stat == math.inf and result.p_value == 0.0
        assert result.ci95[0] == pytest.approx(0.5) and result.ci95[0] == result.ci95[1]

    @pytest.mark.parametrize(
        "a, b",
        [([1.0, 2.0], [1.0]), ([1.0], [2.0]), ([1.0, float("nan")], [1.0, 2.0])],
    )
    def test_invalid_input(self, a, b):
        with pytest.raises(StatisticsError):
            paired_ttest(a, b)


class TestSummaryFigures:
    def test_interval_from_published_triple(self):
        lo, hi = summary_interval(200, 0.032, 12.948)
        assert lo == pytest.approx(0.0271, abs=1e-4)
        assert hi == pytest.approx(0.0369, abs=1e-4)

    def test_effect_size_from_published_triple(self):
        d = cohens_d_from_summary(1.833, 0.14, 0.14)
        assert d == pytest.approx(13.09, abs=0.01)
        assert d == pytest.approx(13.159, rel=0.01)

    def test_zero_t_rejected(self):
        with pytest.raises(StatisticsError):
            summary_interval(200, 0.0, 0.0)


class TestCohensD:
    def test_unit_shift(self):
        x = np.array([-1.0, 0.0, 1.0])
        assert cohens_d(x + 1.0, x) == pytest.approx(1.0)

    def test_zero_pooled_sd(self):
        assert cohens_d([0.5, 0.5], [0.5, 0.5]) == 0.0
        assert cohens_d([0.7, 0.7], [0.5, 0.5]) == math.inf


class TestIQR:
    def test_hand_case(self):
        assert iqr([1.0, 2.0, 3.0, 4.0]) == 1.5

    def test_constant(self):
        assert iqr([0.9] * 10) == 0.0

    def test_translation_invariant(self, rng):
        values = rng.random(25)
        assert iqr(values + 3.0) == pytest.approx(iqr(values), abs=1e-12)

    def test_too_few(self):
        with pytest.raises(StatisticsError):
            iqr([1.0, 2.0, 3.0])


class TestCompareModels:
    def test_self_comparison(self, rng):
        report = report_of(list(rng.uniform(0.8, 1.0, 10)), label="attresunet")
        result = compare_models(report, report)
        assert result.delta_mean == 0.0
        assert result.cohens_d == 0.0
        assert result.zero_variance
        assert "(zero variance)" in result.comparison_row()

    def test_fields_and_rows(self, rng, tmp_path):
        base = rng.uniform(0.85, 0.95, 40)
        a = report_of(list(np.clip(base + 0.03 + rng.normal(0, 0.005, 40), 0, 1)), label="attresunet")
        b = report_of(list(base), label="unet")
        result = compare_models(a, b)
        assert result.n == 40
        assert result.delta_mean == pytest.approx(0.03, abs=0.005)
        assert result.p_value < 0.001
        assert result.comparison_row().startswith("Attention-ResUNet vs Standard U-Net | ")
        assert "| <0.001 |" in result.comparison_row()
        assert result.component_row().startswith("+ Both | Attention-ResUNet | ")

        written = json.loads(result.write(tmp_path / "comparison.json").read_text())
        assert written["model_b"] == "unet"
        assert written["ci95"] == list(result.ci95)

    def test_unknown_labels_pass_through(self):
        result = compare_models(report_of([0.9, 0.8, 0.7], "mine"), report_of([0.8, 0.8, 0.6], "theirs"))
        assert result.comparison_row().startswith("mine vs theirs | ")
        assert math.isnan(result.iqr_a)

    def test_different_samples(self):
        a = report_of([0.9, 0.8, 0.7])
        b = MetricsReport(rows=report_of([0.9, 0.8]).rows)
        with pytest.raises(ReportMismatch):
            compare_models(a, b)


class TestComponentTable:
    def test_grid(self):
        reports = {
            Architecture.UNET: report_of([0.90, 0.90]),
            Architecture.RESUNET: report_of([0.92, 0.92]),
            Architecture.ATTUNET: report_of([0.91, 0.91]),
            Architecture.ATTRESUNET: report_of([0.95, 0.95]),
        }
        lines = component_table(reports)
        assert lines[0] == COMPONENT_HEADER
        assert lines[1] == "Baseline | Standard U-Net | 90.000 | +0.000"
        assert [line.split(" | ")[0] for line in lines[2:]] == ["+ Residual", "+ Attention", "+ Both"]
        assert lines[-1].endswith("+5.000")

    def test_needs_baseline(self):
        with pytest.raises(StatisticsError):
            component_table({Architecture.RESUNET: report_of([0.9])})


class TestBoundaryCorrelation:
    def test_related_distances(self, rng):
        asd = rng.uniform(0.5, 3.0, 30)
        hd = 2.5 * asd + rng.normal(0, 0.1, 30)
        result = boundary_correlation(report_of([0.9] * 30, distances=list(zip(hd, asd))))
        assert result.n == 30
        assert result.r > 0.95

    def test_skips_undefined(self):
        distances = [(None, None), (1.0, 0.5), (2.0, 0.9), (4.0, 2.1)]
        assert boundary_correlation(report_of([0.9] * 4, distances=distances)).n == 3

    def test_too_few(self):
        with pytest.raises(StatisticsError):
            boundary_correlation(report_of([0.9, 0.9], distances=[(1.0, 0.5), (2.0, 1.0)]))
