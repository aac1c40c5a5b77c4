import json

import numpy as np
import pytest

from pyheadseg.dataset import ImageSample
from pyheadseg.exceptions import DataError, ReportMismatch
from pyheadseg.report import Aggregate, MetricsReport, SampleMetrics, evaluate, report_from_predictions


@pytest.fixture
def samples(phantoms):
    return phantoms.val


def masks_of(samples):
    return np.stack([s.mask for s in samples]).astype(np.float64)


class TestReportFromPredictions:
    def test_perfect_prediction(self, samples):
        report = report_from_predictions(samples, masks_of(samples))
        assert report.mean("dice") == 1.0
        assert report.mean("hd_px") == 0.0
        assert report.curves.auc_roc == 1.0
        assert report.pooled.fp == report.pooled.fn == 0

    def test_empty_prediction(self, samples):
        report = report_from_predictions(samples, np.zeros(masks_of(samples).shape))
        assert report.mean("dice") == 0.0
        assert report.mean("recall") == 0.0
        assert report.undefined_distances == len(samples)
        assert report.aggregates["hd_px"] is None

    def test_means_match_rows(self, samples, rng):
        probabilities = rng.random(masks_of(samples).shape)
        report = report_from_predictions(samples, probabilities, threshold=0.7)
        for metric in ("dice", "iou", "precision", "recall", "specificity"):
            by_hand = sum(getattr(r, metric) for r in report.rows) / len(report.rows)
            assert report.mean(metric) == pytest.approx(by_hand)
        assert report.ids == [s.id for s in samples]
        assert report.pooled.total == sum(s.mask.size for s in samples)

    def test_both_empty_counted(self):
        empty = ImageSample("blank", np.zeros((8, 8)), np.zeros((8, 8)))
        report = report_from_predictions([empty], np.zeros((1, 8, 8)))
        assert report.rows[0].dice == 1.0
        assert report.empty_both == 1
        assert report.undefined_distances == 1
        assert report.summary()["degenerate"] == {"empty_both": 1, "undefined_distances": 1}

    def test_length_mismatch(self, samples):
        with pytest.raises(ReportMismatch):
            report_from_predictions(samples, masks_of(samples)[:-1])


class TestAggregate:
    def test_values(self):
        aggregate = Aggregate.of([1.0, 2.0, 3.0, 4.0])
        assert aggregate.mean == 2.5
        assert aggregate.median == 2.5
        assert aggregate.iqr == 1.5
        assert aggregate.sd == pytest.approx(np.std([1, 2, 3, 4], ddof=1))

    def test_single_and_empty(self):
        assert Aggregate.of([0.7]).sd == 0.0
        assert Aggregate.of([]) is None


class TestReportFiles:
    def test_round_trip(self, samples, rng, tmp_path):
        report = report_from_predictions(samples, rng.random(masks_of(samples).shape), label="resunet")
        report.rows[0].hd_px = report.rows[0].asd_px = None
        report.write(tmp_path)
        assert {p.name for p in tmp_path.iterdir()} == {"metrics.csv", "summary.json", "roc.csv", "pr.csv"}

        loaded = MetricsReport.from_csv(tmp_path)
        assert loaded.label == "resunet"
        assert loaded.rows == report.rows
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n"] == len(samples)
        assert summary["aggregates"]["dice"]["mean"] == pytest.approx(report.mean("dice"))
        assert "convention" in summary

    def test_label_falls_back_to_folder(self, samples, tmp_path):
        folder = tmp_path / "run-a"
        folder.mkdir()
        report_from_predictions(samples, masks_of(samples)).to_csv(folder / "metrics.csv")
        assert MetricsReport.from_csv(folder / "metrics.csv").label == "run-a"

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            MetricsReport.from_csv(tmp_path / "nothing.csv")


class TestAligned:
    def rows(self, ids, value):
        return [SampleMetrics(i, value, value, 1, 1, 1, 1, 0, 1.0, 1.0) for i in ids]

    def test_reorders_by_id(self):
        a = MetricsReport(self.rows(["x", "y"], 0.5))
        b = MetricsReport([SampleMetrics("y", 0.2, 0, 1, 1, 1, 1, 0, None, None), *self.rows(["x"], 0.9)])
        left, right = a.aligned(b, "dice")
        assert list(left) == [0.5, 0.5]
        assert list(right) == [0.9, 0.2]
        _, hd = a.aligned(b, "hd_px")
        assert np.isnan(hd[1])

    def test_mismatched_ids(self):
        a = MetricsReport(self.rows(["x", "y"], 0.5))
        b = MetricsReport(self.rows(["x", "z"], 0.5))
        with pytest.raises(ReportMismatch, match="only in first"):
            a.aligned(b, "dice")


class TestEvaluate:
    def test_deterministic(self, tiny_net, samples):
        network = tiny_net()
        first = evaluate(network, samples)
        second = evaluate(network, samples)
        assert first.label == "attresunet"
        assert first.rows == second.rows

    def test_empty_split(self, tiny_net):
        with pytest.raises(DataError):
            evaluate(tiny_net(), [])
