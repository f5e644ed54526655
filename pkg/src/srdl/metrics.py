"""Multi-label evaluation: mAP and the overall / per-class precision, recall, F1."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np


class UndefinedAP(ValueError):
    pass


def average_precision(scores, labels) -> float:
    """Mean over positives of precision at the positive's rank.

    Items are ranked by descending score, ties by ascending item index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    npos = labels.sum()
    if npos == 0:
        raise UndefinedAP("no positive labels")
    ranked = labels[np.argsort(-scores, kind="stable")]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float((hits[ranked] / ranks[ranked]).sum() / npos)


def binarize(scores, rule: str = "threshold", threshold: float = 0.5, k: int = 3) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if rule == "threshold":
        return scores >= threshold
    if rule == "top3" or rule == "topk":
        out = np.zeros(scores.shape, dtype=bool)
        if scores.size:
            order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
            np.put_along_axis(out, order, True, axis=1)
        return out
    raise ValueError(f"unknown binarization rule {rule!r}")


def _safe_div(num, den, warnings, what):
    if den == 0:
        warnings.append(what)
        return 0.0
    return num / den


def _f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def counting_metrics(pred, labels, warnings: list | None = None) -> dict[str, float]:
    """OP, OR, OF1, CP, CR, CF1 from binary predictions ``pred`` (N x C)."""
    warnings = [] if warnings is None else warnings
    pred = np.asarray(pred).astype(bool)
    labels = np.asarray(labels).astype(bool)
    n_correct = (pred & labels).sum(0)
    n_pred = pred.sum(0)
    n_gt = labels.sum(0)
    C = labels.shape[1]
    cp = [_safe_div(n_correct[i], n_pred[i], warnings, f"class {i}: no predicted positives; CP term set to 0")
          for i in range(C)]
    cr = [_safe_div(n_correct[i], n_gt[i], warnings, f"class {i}: no ground-truth positives; CR term set to 0")
          for i in range(C)]
    OP = _safe_div(n_correct.sum(), n_pred.sum(), warnings, "no positive predictions at all; OP set to 0")
    OR = _safe_div(n_correct.sum(), n_gt.sum(), warnings, "no ground-truth positives at all; OR set to 0")
    CP = float(np.sum(cp)) / C if C else 0.0
    CR = float(np.sum(cr)) / C if C else 0.0
    return dict(OP=float(OP), OR=float(OR), OF1=float(_f1(OP, OR)), CP=CP, CR=CR, CF1=float(_f1(CP, CR)),
                _per_class_precision=cp, _per_class_recall=cr)


@dataclass
class MetricsReport:
    mAP: float
    OP: float
    OR: float
    OF1: float
    CP: float
    CR: float
    CF1: float
    per_class_ap: list
    per_class_precision: list
    per_class_recall: list
    warnings: list = field(default_factory=list)
    top3: dict | None = None

    def headline(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("mAP", "OP", "OR", "OF1", "CP", "CR", "CF1")}

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_keyvalue(self) -> str:
        lines = [f"{k}={v!r}" for k, v in self.headline().items()]
        for i, ap in enumerate(self.per_class_ap):
            lines.append(f"AP.{i}={ap!r}")
        if self.top3:
            lines += [f"top3.{k}={v!r}" for k, v in self.top3.items()]
        lines.append(f"warnings={len(self.warnings)}")
        return "\n".join(lines) + "\n"

    def save(self, prefix) -> None:
        prefix = str(prefix)
        Path(prefix + ".json").write_text(self.to_json())
        Path(prefix + ".kv").write_text(self.to_keyvalue())


def evaluate(scores, labels, rule: str = "threshold", threshold: float = 0.5,
             report_top3: bool = False) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    if scores.ndim != 2:
        raise ValueError("expected N x C arrays")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    warnings: list[str] = []
    C = scores.shape[1]
    aps: list = []
    for c in range(C):
        try:
            aps.append(average_precision(scores[:, c], labels[:, c]))
        except UndefinedAP:
            aps.append(None)
            warnings.append(f"class {c}: no positives; excluded from mAP")
    defined = [a for a in aps if a is not None]
    if defined:
        mAP = float(np.mean(defined))
    else:
        mAP = 0.0
        warnings.append("no class has positives; mAP set to 0")
    counts = counting_metrics(binarize(scores, rule, threshold), labels, warnings)
    top3 = None
    if report_top3 and rule != "top3":
        t = counting_metrics(binarize(scores, "top3"), labels, [])
        top3 = {k: v for k, v in t.items() if not k.startswith("_")}
    return MetricsReport(
        mAP=mAP, OP=counts["OP"], OR=counts["OR"], OF1=counts["OF1"],
        CP=counts["CP"], CR=counts["CR"], CF1=counts["CF1"],
        per_class_ap=aps, per_class_precision=counts["_per_class_precision"],
        per_class_recall=counts["_per_class_recall"], warnings=warnings, top3=top3)


class MetricAccumulator:
    """Collects shards of (scores, labels); ``merge`` is associative and order-free
    up to row order, which none of the metrics depend on except for AP tie-breaks."""

    def __init__(self, num_categories: int):
        self.C = num_categories
        self._scores: list[np.ndarray] = []
        self._labels: list[np.ndarray] = []

    def update(self, scores, labels) -> None:
        self._scores.append(np.asarray(scores, dtype=np.float64).reshape(-1, self.C))
        self._labels.append(np.asarray(labels).reshape(-1, self.C).astype(np.int64))

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        out = MetricAccumulator(self.C)
        out._scores = self._scores + other._scores
        out._labels = self._labels + other._labels
        return out

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._scores:
            return np.zeros((0, self.C)), np.zeros((0, self.C), dtype=np.int64)
        return np.concatenate(self._scores), np.concatenate(self._labels)

    def report(self, **kwargs) -> MetricsReport:
        return evaluate(*self.arrays(), **kwargs)


def write_prediction_dump(path, names: Sequence[str], ids: Sequence[str], scores, labels) -> None:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(names) + "\n")
        for i, image_id in enumerate(ids):
            fields = [image_id] + [repr(float(s)) for s in scores[i]] + [str(int(v)) for v in labels[i]]
            fh.write("\t".join(fields) + "\n")


def read_prediction_dump(path):
    """Returns ``(names, ids, scores, labels)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty prediction dump (missing header)")
    names = lines[0].split("\t")
    C = len(names)
    ids, scores, labels = [], [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 1 + 2 * C:
            raise ValueError(f"{path}:{lineno}: expected {1 + 2 * C} fields, got {len(fields)}")
        ids.append(fields[0])
        scores.append([float(v) for v in fields[1:1 + C]])
        labels.append([int(v) for v in fields[1 + C:]])
    return (names, ids, np.asarray(scores, dtype=np.float64).reshape(-1, C),
            np.asarray(labels, dtype=np.int64).reshape(-1, C))
