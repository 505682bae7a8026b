import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenegnn.evaluator import (MetricsReport, baseline_reports, compare, evaluate, fde, improvement_str,
                                merge_reports, read_report_csv, report_csv, report_json, write_report)
from scenegnn.models import ModelOutput, predict_baseline
from scenegnn.scenegraph import CooGraph
from scenegnn.trainer import LossMode, Sample


def sample(labels, ego_index=None):
    labels = list(labels)
    n = len(labels)
    g = CooGraph(np.zeros((n, 8)), np.zeros((0, 5)), np.zeros((2, 0), dtype=np.int64),
                 np.array([0.0 if v is None else v for v in labels]), np.array([v is not None for v in labels]),
                 list(range(1, n + 1)), ego_index=ego_index)
    return Sample([g])


class Fixed:
    """Predictor returning preset values per sample, in call order."""

    def __init__(self, preds):
        self.preds = list(preds)

    def __call__(self, s):
        p = np.asarray(self.preds.pop(0), dtype=float)
        return ModelOutput(p, np.ones(len(p), dtype=bool))


def report(l1, mse=1.0, name="m", dataset="d"):
    return MetricsReport(name, dataset, l1, mse, 10, fde(l1))


def test_perfect_predictor():
    samples = [sample([0.5, -1.0]), sample([2.0])]
    r = evaluate(Fixed([[0.5, -1.0], [2.0]]), samples)
    assert (r.l1, r.mse, r.count) == (0.0, 0.0, 3)


def test_zero_on_plus_minus_one():
    r = evaluate(predict_baseline("zero"), [sample([-1.0, 1.0])])
    assert (r.l1, r.mse) == (1.0, 1.0)


def test_recomputation_oracle():
    rng = np.random.default_rng(0)
    labels = rng.normal(size=100)
    preds = rng.normal(size=100)
    samples = [sample(labels[k:k + 10]) for k in range(0, 100, 10)]
    r = evaluate(Fixed([preds[k:k + 10] for k in range(0, 100, 10)]), samples)
    l1 = sum(abs(p - y) for p, y in zip(preds, labels)) / 100
    mse = sum((p - y) ** 2 for p, y in zip(preds, labels)) / 100
    assert r.l1 == pytest.approx(l1, abs=1e-12)
    assert r.mse == pytest.approx(mse, abs=1e-12)
    assert r.fde3 == pytest.approx(4.5 * l1, abs=1e-12)


def test_unlabelled_entities_are_skipped():
    r = evaluate(Fixed([[9.0, 1.0]]), [sample([None, 0.0])])
    assert (r.l1, r.count) == (1.0, 1)


def test_ego_mode():
    samples = [sample([1.0, 5.0], ego_index=0), sample([2.0], ego_index=None)]
    r = evaluate(predict_baseline("zero"), samples, LossMode.EgoOnly)
    assert (r.l1, r.count, r.mode) == (1.0, 1, "ego")


def test_no_labels_is_an_error():
    with pytest.raises(ValueError):
        evaluate(predict_baseline("zero"), [sample([None])])
    with pytest.raises(ValueError):
        MetricsReport("m", "d", 0.1, 0.1, 0, 0.0)
    with pytest.raises(ValueError):
        MetricsReport("m", "d", -0.1, 0.1, 1, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=1, max_size=50))
def test_baseline_identities(labels):
    y = np.array(labels)
    samples = [sample(y)]
    assert evaluate(predict_baseline("zero"), samples).l1 == np.mean(np.abs(y))
    mean_row = baseline_reports(samples)["Baseline Mean"]
    assert mean_row.mse == pytest.approx(np.var(y), rel=1e-12, abs=1e-15)


def test_baseline_rows():
    test = [sample([1.0, 3.0])]
    train = [sample([0.0])]
    rows = baseline_reports(test, train, train_mean=True)
    assert list(rows) == ["Baseline Mean", "Baseline Zero", "Baseline Mean (train)"]
    assert rows["Baseline Mean"].l1 == 1.0
    assert rows["Baseline Zero"].l1 == 2.0
    assert rows["Baseline Mean (train)"].l1 == 2.0


def test_fde_examples():
    assert fde(0.170, 3.0) == pytest.approx(0.765, abs=1e-12)
    assert fde(0.0) == 0.0 and fde(0.3, 0.0) == 0.0
    with pytest.raises(ValueError):
        fde(0.1, -1.0)


@given(st.floats(0, 10), st.floats(0, 10))
def test_fde_is_quadratic_in_horizon(l1, h):
    assert fde(l1, 2 * h) == pytest.approx(4 * fde(l1, h), rel=1e-12, abs=1e-300)
    assert fde(l1, h + 1.0) >= fde(l1, h)


def test_compare_examples():
    assert compare(report(0.3), report(0.3)) == {"l1": 0.0, "mse": 0.0}
    assert compare(report(0.170), report(0.654))["l1"] == pytest.approx(74.0, abs=0.05)
    assert compare(report(0.494), report(0.552))["l1"] == pytest.approx(10.5, abs=0.05)
    assert compare(report(0.1), report(0.0, mse=0.0)) == {"l1": None, "mse": None}
    with pytest.raises(ValueError):
        compare(report(0.1), report(0.2, dataset="other"))


@given(st.floats(0.01, 10), st.floats(0.01, 10))
def test_compare_sign_flips_on_swap(a, b):
    ab, ba = compare(report(a), report(b))["l1"], compare(report(b), report(a))["l1"]
    assert np.sign(ab) == -np.sign(ba)


def test_csv_and_json(tmp_path):
    r = report(0.2, 0.1, name="Single Step", dataset="synthetic")
    r.baselines = {"Baseline Zero": report(0.5, 0.4, "Baseline Zero", "synthetic")}
    r.ablation = report(0.25, 0.15, "Single Step no edge data", "synthetic")
    text = report_csv(r.rows())
    assert text.splitlines()[0] == "model,dataset,l1,mse"
    assert [row["model"] for row in read_report_csv(text)] == ["Single Step", "Single Step no edge data",
                                                               "Baseline Zero"]
    doc = report_json(r)
    assert doc["improvements"]["Baseline Zero"]["l1"] == pytest.approx(60.0)
    assert doc["improvements"]["Single Step no edge data"]["l1"] == pytest.approx(20.0)
    assert doc["rows"][0]["fde3"] == pytest.approx(0.9)
    csv_path, json_path = write_report(r, tmp_path, "out")
    assert json.loads(json_path.read_text()) == json.loads(json.dumps(doc, sort_keys=True))
    other = tmp_path / "b.csv"
    other.write_text(report_csv([report(0.3, 0.2, "Recurrent", "synthetic"), r.baselines["Baseline Zero"]]))
    merged = read_report_csv(merge_reports([csv_path, other]))
    assert [m["model"] for m in merged] == ["Single Step", "Single Step no edge data", "Baseline Zero", "Recurrent"]


def test_improvement_str():
    assert improvement_str(None) == "undefined"
    assert improvement_str(74.02) == "74.0%"
