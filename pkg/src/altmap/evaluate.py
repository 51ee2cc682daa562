"""Accuracy, F1, confusion matrices, ROC/AUC and training-curve export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "EvalReport",
    "confusion_matrix",
    "accuracy",
    "f1_per_class",
    "macro_f1",
    "roc_curve",
    "auc",
    "evaluate_predictions",
    "evaluate_model",
    "ground_truth_accuracy",
    "export_history",
    "read_history",
    "write_roc_csv",
]


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    """Counts with rows indexed by true class and columns by predicted class."""
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    if truth.shape != pred.shape:
        raise ValueError(f"truth has {truth.size} labels, predictions {pred.size}")
    for name, arr in (("truth", truth), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} labels must lie in [0, {n_classes})")
    return np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if cm.size == 0 or total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


def f1_per_class(cm) -> tuple[np.ndarray, list[int]]:
    """Per-class F1 and the classes absent from both truth and predictions (scored 0)."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.size == 0 or cm.sum() == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros_like(tp), where=true_pos > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    absent = [int(c) for c in np.flatnonzero((pred_pos == 0) & (true_pos == 0))]
    return f1, absent


def macro_f1(cm) -> float:
    """Unweighted mean of the per-class F1 scores."""
    return float(f1_per_class(cm)[0].mean())


def roc_curve(scores, truth, cls: int):
    """One-vs-rest ROC for ``cls``.

    Thresholds sweep the distinct scores from high to low; equal scores move
    the curve in a single step. The curve starts at (0, 0) and ends at (1, 1).

    Returns:
        ``(fpr, tpr, thresholds)``, thresholds[0] being +inf.

    Raises:
        ValueError: the class has no positive or no negative sample.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2:
        scores = scores[:, cls]
    positive = np.asarray(truth).reshape(-1) == cls
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"class {cls} needs both positive and negative samples for a ROC curve")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positive[order]
    tps = np.cumsum(p)
    fps = np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    fpr = np.r_[0.0, fps[last] / n_neg]
    tpr = np.r_[0.0, tps[last] / n_pos]
    thresholds = np.r_[np.inf, s[last]]
    return fpr, tpr, thresholds


def auc(fpr, tpr) -> float:
    """Trapezoid-rule area under a ROC curve."""
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class EvalReport:
    confusion: list
    accuracy: float
    f1_per_class: list
    macro_f1: float
    auc_per_class: dict
    macro_auc: Optional[float]
    roc: dict = field(default_factory=dict)
    absent_classes: list = field(default_factory=list)
    n_samples: int = 0
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def evaluate_predictions(truth, pred, probs, n_classes: int, metadata: Optional[dict] = None) -> EvalReport:
    cm = confusion_matrix(truth, pred, n_classes)
    f1, absent = f1_per_class(cm)
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth)
    aucs, roc = {}, {}
    for c in range(n_classes):
        try:
            fpr, tpr, _ = roc_curve(probs[:, c], truth, c)
        except ValueError:
            aucs[str(c)] = None
            continue
        aucs[str(c)] = auc(fpr, tpr)
        roc[str(c)] = {"fpr": fpr.tolist(), "tpr": tpr.tolist()}
    present = [v for v in aucs.values() if v is not None]
    return EvalReport(
        confusion=cm.tolist(),
        accuracy=accuracy(cm),
        f1_per_class=f1.tolist(),
        macro_f1=float(f1.mean()),
        auc_per_class=aucs,
        macro_auc=float(np.mean(present)) if present else None,
        roc=roc,
        absent_classes=absent,
        n_samples=int(len(truth)),
        metadata=dict(metadata or {}),
    )


def evaluate_model(model, table, stack=None, metadata: Optional[dict] = None) -> EvalReport:
    """Evaluate a trained model on a sample table (the CNN also needs the scaled stack)."""
    from .classifiers.model import sample_inputs

    pred, probs = model.predict_inputs(sample_inputs(model, table, stack))
    meta = {"model": model.kind, **model.provenance, **(metadata or {})}
    return evaluate_predictions(table.classes, pred, probs, model.n_classes, meta)


def ground_truth_accuracy(model, gt_samples, stack=None) -> float:
    """Plain accuracy of ``model`` over an independently labeled sample table."""
    from .classifiers.model import sample_inputs

    if model.kind != "cnn" and gt_samples.n_features != model.n_bands:
        raise ValueError(f"samples have {gt_samples.n_features} features, model expects {model.n_bands}")
    pred, _ = model.predict_inputs(sample_inputs(model, gt_samples, stack))
    if len(pred) == 0:
        raise ValueError("no ground-truth samples")
    return float(np.mean(pred == gt_samples.classes))


HISTORY_FIELDS = ("epoch", "train_acc", "test_acc", "train_loss", "test_loss")


def export_history(history: Sequence, path, plot_path=None) -> None:
    """Write ``epoch,train_acc,test_acc,train_loss,test_loss`` rows; optionally a PNG plot."""
    if not history:
        raise ValueError("empty training history")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow([int(rec.epoch)] + [repr(float(getattr(rec, k))) for k in HISTORY_FIELDS[1:]])
    if plot_path is not None:
        _plot_history(history, plot_path)


def read_history(path) -> list:
    from .classifiers.model import EpochRecord

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochRecord(int(row["epoch"]), *(float(row[k]) for k in HISTORY_FIELDS[1:]))
            for row in reader
        ]


def _plot_history(history, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r.train_acc for r in history], label="train")
    ax.plot(epochs, [r.test_acc for r in history], label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_roc_csv(report: EvalReport, directory, prefix: str = "roc") -> list[Path]:
    """One ``fpr,tpr`` CSV per class that has a defined ROC curve."""
    out = []
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for cls, pts in sorted(report.roc.items()):
        path = directory / f"{prefix}_class{cls}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fpr", "tpr"])
            for f, t in zip(pts["fpr"], pts["tpr"]):
                writer.writerow([repr(f), repr(t)])
        out.append(path)
    return out
