"""Token-level scoring: confusion matrices, precision/recall/F1, comparisons.

Zero-denominator conventions: precision, recall, and F1 are reported as 0
(never NaN) when their denominators vanish. Both micro and macro averages
are always computed; macro-F1 is the headline metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalReport:
    class_names: tuple[str, ...]
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float
    n_instances: int

    def to_obj(self) -> dict:
        return {
            "classes": list(self.class_names),
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                }
                for i, name in enumerate(self.class_names)
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "micro": {
                "precision": self.micro_precision,
                "recall": self.micro_recall,
                "f1": self.micro_f1,
            },
            "accuracy": self.accuracy,
            "n_instances": self.n_instances,
        }


def _safe_div(num: np.ndarray | float, den: np.ndarray | float) -> np.ndarray | float:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report_from_confusion(confusion: np.ndarray, class_names: tuple[str, ...]) -> EvalReport:
    """Build a full report from a (gold row, predicted column) count grid."""
    confusion = np.asarray(confusion, dtype=np.int64)
    k = len(class_names)
    if confusion.shape != (k, k):
        raise ValueError(f"confusion shape {confusion.shape} does not match {k} classes")
    n = int(confusion.sum())
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp

    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    f1 = _safe_div(2 * precision * recall, precision + recall)

    micro_p = float(_safe_div(tp.sum(), tp.sum() + fp.sum()))
    micro_r = float(_safe_div(tp.sum(), tp.sum() + fn.sum()))
    micro_f1 = float(_safe_div(2 * micro_p * micro_r, micro_p + micro_r))
    return EvalReport(
        class_names=tuple(class_names),
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(precision.mean()) if k else 0.0,
        macro_recall=float(recall.mean()) if k else 0.0,
        macro_f1=float(f1.mean()) if k else 0.0,
        micro_precision=micro_p,
        micro_recall=micro_r,
        micro_f1=micro_f1,
        accuracy=float(_safe_div(tp.sum(), n)),
        n_instances=n,
    )


def score(gold: np.ndarray, pred: np.ndarray, class_names: tuple[str, ...] | list[str]) -> EvalReport:
    """Score aligned gold/predicted class sequences (values in 1..K)."""
    gold = np.asarray(gold, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gold.shape != pred.shape or gold.ndim != 1:
        raise ValueError(f"gold and predictions must align, got {gold.shape} vs {pred.shape}")
    k = len(class_names)
    for name, arr in (("gold", gold), ("predicted", pred)):
        if len(arr) and (arr.min() < 1 or arr.max() > k):
            raise ValueError(f"{name} labels must lie in 1..{k}")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (gold - 1, pred - 1), 1)
    return report_from_confusion(confusion, tuple(class_names))


def format_report(report: EvalReport) -> str:
    headers = ("class", "precision", "recall", "f1")
    rows = [
        (
            name,
            f"{report.precision[i]:.4f}",
            f"{report.recall[i]:.4f}",
            f"{report.f1[i]:.4f}",
        )
        for i, name in enumerate(report.class_names)
    ]
    rows.append(("macro", f"{report.macro_precision:.4f}", f"{report.macro_recall:.4f}", f"{report.macro_f1:.4f}"))
    rows.append(("micro", f"{report.micro_precision:.4f}", f"{report.micro_recall:.4f}", f"{report.micro_f1:.4f}"))
    widths = [max(len(h), *(len(r[c]) for r in rows)) for c, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.ljust(widths[c]) for c, v in enumerate(r)) for r in rows)
    lines.append("")
    lines.append(f"accuracy: {report.accuracy:.4f}   instances: {report.n_instances}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MetricDelta:
    metric: str
    a: float
    b: float
    delta: float
    flagged: bool


def compare(
    report_a: EvalReport, report_b: EvalReport, flag_threshold: float = 0.005
) -> list[MetricDelta]:
    """Per-metric differences b - a; |delta| above the threshold is flagged."""
    if report_a.class_names != report_b.class_names:
        raise ValueError("reports use different class vocabularies")
    pairs: list[tuple[str, float, float]] = [
        ("accuracy", report_a.accuracy, report_b.accuracy),
        ("macro_f1", report_a.macro_f1, report_b.macro_f1),
        ("micro_f1", report_a.micro_f1, report_b.micro_f1),
    ]
    for i, name in enumerate(report_a.class_names):
        pairs.append((f"f1[{name}]", float(report_a.f1[i]), float(report_b.f1[i])))
    return [
        MetricDelta(metric=m, a=a, b=b, delta=b - a, flagged=abs(b - a) > flag_threshold)
        for m, a, b in pairs
    ]


def format_compare(deltas: list[MetricDelta], label_a: str = "a", label_b: str = "b") -> str:
    headers = ("metric", label_a, label_b, "delta", "")
    rows = [
        (d.metric, f"{d.a:.4f}", f"{d.b:.4f}", f"{d.delta:+.4f}", "*" if d.flagged else "")
        for d in deltas
    ]
    widths = [max(len(h), *(len(r[c]) for r in rows)) for c, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(headers)).rstrip()]
    lines.append("  ".join("-" * max(w, 1) for w in widths))
    lines.extend("  ".join(v.ljust(widths[c]) for c, v in enumerate(r)).rstrip() for r in rows)
    return "\n".join(lines) + "\n"
