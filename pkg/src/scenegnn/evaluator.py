"""Evaluation: L1/MSE rows, constant baselines, relative improvements and FDE.

The report layout mirrors a results table with one row per model
(model, dataset, L1, MSE); a JSON companion holds the derived quantities.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .models import predict_baseline
from .trainer import LossMode, Sample, forward, target_rows

FDE_HORIZON_S = 3.0


@dataclass
class MetricsReport:
    model: str
    dataset: str
    l1: float
    mse: float
    count: int
    fde3: float
    baselines: dict[str, "MetricsReport"] = field(default_factory=dict)
    ablation: "MetricsReport | None" = None
    mode: str = LossMode.AllEntities.value

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("a report needs at least one labelled entity")
        if self.l1 < 0 or self.mse < 0:
            raise ValueError("metrics must be non-negative")

    def row(self) -> dict:
        return {"model": self.model, "dataset": self.dataset, "l1": self.l1, "mse": self.mse}

    def rows(self) -> list["MetricsReport"]:
        """This report followed by its ablation and baseline rows."""
        out = [self]
        if self.ablation is not None:
            out.append(self.ablation)
        out += list(self.baselines.values())
        return out

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("baselines", "ablation")}
        d["baselines"] = {k: b.to_dict() for k, b in self.baselines.items()}
        d["ablation"] = None if self.ablation is None else self.ablation.to_dict()
        return d


def fde(l1: float, horizon_s: float = FDE_HORIZON_S) -> float:
    """Terminal displacement of a constant acceleration error ``l1`` over ``horizon_s``."""
    if horizon_s < 0:
        raise ValueError("horizon must be non-negative")
    return l1 * horizon_s ** 2 / 2.0


def errors(predictor, samples: Sequence[Sample], mode: LossMode = LossMode.AllEntities) -> np.ndarray:
    """Signed prediction errors of every target entity, in sample order."""
    out = []
    with dc.no_grad():
        for s in samples:
            rows = target_rows(s.final, mode)
            if rows.size == 0:
                continue
            pred = forward(predictor, s).values
            out.append(pred[rows] - s.final.label_vector[rows])
    return np.concatenate(out) if out else np.zeros(0)


def target_labels(samples: Sequence[Sample], mode: LossMode = LossMode.AllEntities) -> np.ndarray:
    vals = [s.final.label_vector[target_rows(s.final, mode)] for s in samples]
    return np.concatenate(vals) if vals else np.zeros(0)


def evaluate(predictor, samples: Sequence[Sample], mode: LossMode = LossMode.AllEntities,
             name: str = "model", dataset: str = "synthetic") -> MetricsReport:
    """L1 and MSE over all labelled entities (or ego entities only)."""
    err = errors(predictor, samples, mode)
    if err.size == 0:
        raise ValueError("no labelled entities to evaluate")
    l1 = float(np.mean(np.abs(err)))
    mse = float(np.mean(err ** 2))
    return MetricsReport(name, dataset, l1, mse, int(err.size), fde(l1), mode=mode.value)


def compare(a: MetricsReport, b: MetricsReport) -> dict[str, float | None]:
    """Relative improvement of ``a`` over ``b`` in percent; None where b's metric is zero."""
    if a.dataset != b.dataset or a.mode != b.mode:
        raise ValueError("reports must share dataset and entity mode")
    out: dict[str, float | None] = {}
    for key in ("l1", "mse"):
        mb, ma = getattr(b, key), getattr(a, key)
        out[key] = None if mb == 0 else (mb - ma) / mb * 100.0
    return out


def baseline_reports(test: Sequence[Sample], train: Sequence[Sample] = (),
                     mode: LossMode = LossMode.AllEntities, dataset: str = "synthetic",
                     train_mean: bool = False) -> dict[str, MetricsReport]:
    """Mean (over test labels) and Zero rows; ``train_mean`` adds a train-mean row."""
    out = {
        "Baseline Mean": evaluate(predict_baseline("mean", target_labels(test, mode)), test, mode,
                                  "Baseline Mean", dataset),
        "Baseline Zero": evaluate(predict_baseline("zero"), test, mode, "Baseline Zero", dataset),
    }
    if train_mean:
        out["Baseline Mean (train)"] = evaluate(predict_baseline("mean", target_labels(train, mode)), test,
                                                mode, "Baseline Mean (train)", dataset)
    return out


def report_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "l1", "mse"])
    for r in reports:
        w.writerow([r.model, r.dataset, f"{r.l1:.6f}", f"{r.mse:.6f}"])
    return buf.getvalue()


def read_report_csv(text: str) -> list[dict]:
    return [{"model": r["model"], "dataset": r["dataset"], "l1": float(r["l1"]), "mse": float(r["mse"])}
            for r in csv.DictReader(io.StringIO(text))]


def report_json(report: MetricsReport) -> dict:
    """Derived quantities: FDE3 of every row plus improvements over each reference row."""
    doc = {"rows": [], "improvements": {}}
    for r in report.rows():
        doc["rows"].append({**r.row(), "count": r.count, "fde3": r.fde3, "mode": r.mode})
    refs = dict(report.baselines)
    if report.ablation is not None:
        refs[report.ablation.model] = report.ablation
    for name, ref in refs.items():
        doc["improvements"][name] = compare(report, ref)
    return doc


def write_report(report: MetricsReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    csv_path.write_text(report_csv(report.rows()))
    json_path.write_text(json.dumps(report_json(report), indent=1, sort_keys=True))
    return csv_path, json_path


def merge_reports(paths: Sequence[str | Path]) -> str:
    """Concatenate report CSVs into one table; duplicate rows (same model, dataset) keep the first."""
    seen, rows = set(), []
    for p in paths:
        for r in read_report_csv(Path(p).read_text()):
            key = (r["model"], r["dataset"])
            if key in seen:
                continue
            seen.add(key)
            rows.append(r)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "dataset", "l1", "mse"])
    for r in rows:
        w.writerow([r["model"], r["dataset"], f"{r['l1']:.6f}", f"{r['mse']:.6f}"])
    return buf.getvalue()


def improvement_str(value: float | None) -> str:
    return "undefined" if value is None or math.isnan(value) else f"{value:.1f}%"
