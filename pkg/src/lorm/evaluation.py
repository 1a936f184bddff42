"""Wear tables, window labelling, classification metrics, detection deviation.

A wear table maps each monitored window (1-based index, matching
HealthRecord.window_index) to a ring cut and each cut to a measured wear in
micrometres. A window is abnormal when its cut's wear strictly exceeds the
limit. Alarm flags against those labels give the usual confusion-matrix
metrics; the detection deviation is how far the wear at the first alarm sat
from the limit.

Everything here is pure and safe to call from any thread.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "WearEntry",
    "WearTable",
    "ConfusionCounts",
    "MetricReport",
    "label_windows",
    "compute_metrics",
    "detection_deviation",
    "format_metrics_table",
    "write_metrics_json",
]


@dataclass
class WearEntry:
    """One ring cut: measured wear plus the inclusive window span it covers."""

    cut_id: int
    wear_um: float
    first_window: int
    last_window: int

    def __post_init__(self) -> None:
        if self.wear_um < 0:
            raise ValueError(f"cut {self.cut_id}: wear must be >= 0")
        if self.first_window > self.last_window:
            raise ValueError(f"cut {self.cut_id}: empty window span")


@dataclass
class WearTable:
    """Ordered cuts with disjoint window spans; every window maps to one cut."""

    entries: list[WearEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("empty input")
        seen = set()
        prev_last = None
        for e in sorted(self.entries, key=lambda x: x.first_window):
            if e.cut_id in seen:
                raise ValueError(f"duplicate cut id {e.cut_id}")
            seen.add(e.cut_id)
            if prev_last is not None and e.first_window <= prev_last:
                raise ValueError(f"cut {e.cut_id}: window span overlaps the previous cut")
            prev_last = e.last_window
        self.entries = sorted(self.entries, key=lambda x: x.first_window)

    def cut_ids(self) -> list[int]:
        return [e.cut_id for e in self.entries]

    def covers(self, window_index: int) -> bool:
        return any(e.first_window <= window_index <= e.last_window for e in self.entries)

    def cut_of(self, window_index: int) -> int:
        for e in self.entries:
            if e.first_window <= window_index <= e.last_window:
                return e.cut_id
        raise ValueError(f"window {window_index} is not covered by any cut")

    def wear_of_cut(self, cut_id: int) -> float:
        for e in self.entries:
            if e.cut_id == cut_id:
                return e.wear_um
        raise ValueError(f"unknown cut id {cut_id}")

    def wear_of_window(self, window_index: int) -> float:
        return self.wear_of_cut(self.cut_of(window_index))

    def wear_by_cut(self) -> dict[int, float]:
        return {e.cut_id: e.wear_um for e in self.entries}

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("cut_id,wear_um,first_window,last_window\n")
            for e in self.entries:
                fh.write(f"{e.cut_id},{e.wear_um!r},{e.first_window},{e.last_window}\n")

    @classmethod
    def from_csv(cls, path: str) -> "WearTable":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if not lines or lines[0] != "cut_id,wear_um,first_window,last_window":
            raise ValueError(f"{path}: expected wear-table header")
        entries = []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}: bad wear row {ln!r}")
            entries.append(
                WearEntry(
                    cut_id=int(parts[0]),
                    wear_um=float(parts[1]),
                    first_window=int(parts[2]),
                    last_window=int(parts[3]),
                )
            )
        return cls(entries=entries)


@dataclass
class ConfusionCounts:
    """tp/tn/fp/fn over the labelled windows."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_pairs(cls, predictions: Sequence[bool], labels: Sequence[bool]) -> "ConfusionCounts":
        if len(predictions) != len(labels):
            raise ValueError("predictions and labels must have equal length")
        pred = np.asarray(predictions, dtype=bool)
        lab = np.asarray(labels, dtype=bool)
        return cls(
            tp=int(np.sum(pred & lab)),
            tn=int(np.sum(~pred & ~lab)),
            fp=int(np.sum(pred & ~lab)),
            fn=int(np.sum(~pred & lab)),
        )


@dataclass
class MetricReport:
    """Classification metrics; degenerate lists metrics whose denominator was 0
    (those are reported as 0)."""

    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "counts": {
                "tp": self.counts.tp,
                "tn": self.counts.tn,
                "fp": self.counts.fp,
                "fn": self.counts.fn,
            },
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "fpr": self.fpr,
            "degenerate": list(self.degenerate),
        }


def label_windows(
    wear: WearTable, limit_um: float, window_indices: Sequence[int]
) -> np.ndarray:
    """Boolean abnormal labels: wear of the window's cut strictly above limit."""
    return np.asarray([wear.wear_of_window(i) > limit_um for i in window_indices], dtype=bool)


def _ratio(num: int, den: int, name: str, degenerate: list[str]) -> float:
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def compute_metrics(predictions: Sequence[bool], labels: Sequence[bool]) -> MetricReport:
    """Accuracy, precision, recall, F1, and false-positive rate.

    acc = (tp+tn)/total, p = tp/(tp+fp), r = tp/(tp+fn),
    f1 = 2pr/(p+r), fpr = fp/(fp+tn); any zero denominator yields 0 and the
    metric's name in the degenerate list.
    """
    c = ConfusionCounts.from_pairs(predictions, labels)
    degenerate: list[str] = []
    accuracy = _ratio(c.tp + c.tn, c.total, "accuracy", degenerate)
    precision = _ratio(c.tp, c.tp + c.fp, "precision", degenerate)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", degenerate)
    if precision + recall == 0.0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    fpr = _ratio(c.fp, c.fp + c.tn, "fpr", degenerate)
    return MetricReport(
        counts=c,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=fpr,
        degenerate=degenerate,
    )


def detection_deviation(
    first_alarm_window: int | None, wear: WearTable, limit_um: float
) -> float | None:
    """|wear at the first alarm - limit|, or None when no alarm ever fired."""
    if first_alarm_window is None:
        return None
    return abs(wear.wear_of_window(first_alarm_window) - limit_um)


def format_metrics_table(report: MetricReport, deviation_um: float | None = None) -> str:
    """Aligned plain-text rendering of a metric report."""
    rows = [
        ("accuracy", f"{report.accuracy:.6f}"),
        ("precision", f"{report.precision:.6f}"),
        ("recall", f"{report.recall:.6f}"),
        ("f1", f"{report.f1:.6f}"),
        ("fpr", f"{report.fpr:.6f}"),
        ("tp/tn/fp/fn", f"{report.counts.tp}/{report.counts.tn}/{report.counts.fp}/{report.counts.fn}"),
    ]
    if deviation_um is not None:
        rows.append(("detection_deviation_um", f"{deviation_um:.6f}"))
    width = max(len(name) for name, _ in rows)
    lines = []
    for name, value in rows:
        flag = "  (zero denominator)" if name in report.degenerate else ""
        lines.append(f"{name.ljust(width)}  {value}{flag}")
    return "\n".join(lines)


def write_metrics_json(payload: dict, path: str, merge: bool = True) -> None:
    """Write (or update) a JSON metrics file; existing top-level keys survive."""
    doc: dict = {}
    if merge and os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: expected a JSON object")
    doc.update(payload)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
