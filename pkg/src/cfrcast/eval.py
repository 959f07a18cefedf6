"""Per-step error tables, ROC curves and the fresh-channel generalisation check."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetSplit, apply_split_scaling
from .errors import DegenerateInputError, ShapeError
from .models import predict
from .nn import Network
from .sim import CfrSeries


@dataclass(frozen=True)
class StepMseReport:
    mse: np.ndarray  # mse[d - 1] for step ahead d
    n_examples: int = 0

    @property
    def rows(self) -> list[tuple[int, float]]:
        return [(d + 1, float(v)) for d, v in enumerate(self.mse)]

    def overall(self) -> float:
        return float(np.mean(self.mse))

    def flatness(self) -> float:
        """max / min across steps ahead."""
        return float(self.mse.max() / self.mse.min())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mse"])
        for d, v in self.rows:
            w.writerow([d, f"{v:.9g}"])
        return buf.getvalue()


def per_step_mse(pred: np.ndarray, labels: np.ndarray) -> StepMseReport:
    if pred.shape != labels.shape or pred.ndim != 4 or pred.shape[2] != 1:
        raise ShapeError(f"expected matching (B, F, 1, D) tensors, got {pred.shape} and {labels.shape}")
    diff = pred - labels
    return StepMseReport(np.mean(diff * diff, axis=(0, 1, 2)), pred.shape[0])


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    step_ahead: int = 0
    band_index: int | None = None

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, labels, *, step_ahead: int = 0, band_index: int | None = None) -> RocCurve:
    """Threshold sweep over distinct scores, ties grouped into one point.

    A sample is called positive when its score is >= the threshold.  The
    sweep starts at +inf, i.e. (0, 0), and ends at (1, 1).  AUC is the
    trapezoidal area under the staircase.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError(f"need both classes, got {n_pos} positive and {n_neg} negative")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    # last index of every run of equal scores
    last = np.r_[np.nonzero(s[1:] != s[:-1])[0], s.size - 1]
    tpr = np.r_[0.0, tp[last] / n_pos]
    fpr = np.r_[0.0, fp[last] / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(fpr, tpr, thresholds, auc, step_ahead, band_index)


def step_roc_curves(prob: np.ndarray, labels: np.ndarray, band: int | None = None) -> list[RocCurve]:
    """One curve per step ahead; ``band=None`` pools all frequency bins."""
    if prob.shape != labels.shape or prob.ndim != 4:
        raise ShapeError("probabilities and labels must be matching (B, F, 1, D) tensors")
    sel = slice(None) if band is None else slice(band, band + 1)
    return [roc_curve(prob[:, sel, 0, d], labels[:, sel, 0, d], step_ahead=d + 1, band_index=band)
            for d in range(prob.shape[3])]


def roc_csv(curves: list[RocCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "fpr", "tpr"])
    for c in curves:
        for x, y in zip(c.fpr, c.tpr):
            w.writerow([c.step_ahead, f"{x:.9g}", f"{y:.9g}"])
    return buf.getvalue()


def auc_csv(curves: list[RocCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "auc"])
    for c in curves:
        w.writerow([c.step_ahead, f"{c.auc:.9g}"])
    return buf.getvalue()


def default_band(n_bins: int) -> int:
    return n_bins // 2


def fresh_channel_check(net: Network, new_series: CfrSeries, split: DatasetSplit,
                        max_examples: int | None = None) -> StepMseReport:
    """Per-step MSE of a trained predictor on an unseen series.

    The series is scaled with the training split's stored factor; nothing is
    refitted on the new data.
    """
    x, y, _ = apply_split_scaling(new_series, split)
    if max_examples is not None:
        x, y = x[:max_examples], y[:max_examples]
    return per_step_mse(predict(net, np.ascontiguousarray(x)), y)
