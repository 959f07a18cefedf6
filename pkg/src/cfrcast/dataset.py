"""Windowing CFR series into network tensors, labels, splits and persistence.

Tensors follow the (batch, frequency, time, channel) layout throughout.  An
example indexed by ``j`` (the most recent observed snapshot) holds snapshots
``j-T+1 .. j`` as real/imaginary planes and is labelled with the magnitudes of
snapshots ``j+1 .. j+D``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import container
from .errors import ConfigError, FormatError, InsufficientDataError
from .sim import CfrSeries

# container role tags
ROLE_X_TRAIN, ROLE_X_TEST = 1, 2
ROLE_YP_TRAIN, ROLE_YP_TEST = 3, 4
ROLE_YC_TRAIN, ROLE_YC_TEST = 5, 6
ROLE_SERIES, ROLE_SERIES_META, ROLE_FINGERPRINT = 16, 17, 18

DEFAULT_PERCENTILE = 10.0


def n_examples(length: int, t_len: int, span_d: int) -> int:
    return length - t_len - span_d + 1


def min_length(n_total: int, t_len: int, span_d: int) -> int:
    """Snapshots needed for ``n_total`` windowed examples."""
    return n_total + t_len + span_d - 1


def _check_window(length: int, t_len: int, span_d: int) -> None:
    if t_len < 1 or span_d < 1:
        raise ConfigError("t_len and span_d must be >= 1")
    if length < t_len + span_d:
        raise InsufficientDataError(
            f"series of {length} snapshots is too short for T={t_len}, D={span_d} "
            f"(need at least {t_len + span_d})")


def _planes(values: np.ndarray) -> np.ndarray:
    return np.stack([values.real, values.imag], axis=-1)


def tensorize(series: CfrSeries | np.ndarray, t_len: int, span_d: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(inputs, future)``.

    ``inputs`` has shape (N, F, T, 2); ``future`` is complex with shape
    (N, F, D), where N = len(series) - T - D + 1.  Both are read-only views
    onto the series data.
    """
    values = series.values if isinstance(series, CfrSeries) else np.asarray(series, dtype=complex)
    length = values.shape[0]
    _check_window(length, t_len, span_d)
    n = n_examples(length, t_len, span_d)
    # windows[j] covers snapshots j..j+T-1, shape (n_win, F, 2, T)
    windows = sliding_window_view(_planes(values), t_len, axis=0)
    inputs = windows[:n].transpose(0, 1, 3, 2)
    future = sliding_window_view(values[t_len:], span_d, axis=0)[:n]
    return inputs, future


def make_predictor_labels(future: np.ndarray, scale: float) -> np.ndarray:
    if not scale > 0:
        raise ConfigError("scale must be positive")
    return (scale * np.abs(future))[:, :, None, :]


def make_classifier_labels(future: np.ndarray, scale: float, threshold: float) -> np.ndarray:
    if threshold < 0:
        raise ConfigError("threshold must be non-negative")
    return (scale * np.abs(future) < threshold).astype(np.float64)[:, :, None, :]


@dataclass
class DatasetSplit:
    x_train: np.ndarray
    x_test: np.ndarray
    y_pred_train: np.ndarray
    y_pred_test: np.ndarray
    y_cls_train: np.ndarray
    y_cls_test: np.ndarray
    scale: float
    threshold: float

    def __post_init__(self):
        if self.x_train.shape[0] != self.y_pred_train.shape[0] or \
                self.x_test.shape[0] != self.y_pred_test.shape[0]:
            raise FormatError("input and label batch sizes disagree")
        if self.y_pred_train.shape != self.y_cls_train.shape or \
                self.y_pred_test.shape != self.y_cls_test.shape:
            raise FormatError("predictor and classifier label shapes disagree")
        if not self.scale > 0:
            raise FormatError("scale must be positive")

    @property
    def t_len(self) -> int:
        return self.x_train.shape[2]

    @property
    def span_d(self) -> int:
        return self.y_pred_train.shape[3]

    @property
    def n_bins(self) -> int:
        return self.x_train.shape[1]

    def labels(self, head: str, part: str) -> np.ndarray:
        return getattr(self, f"y_{'pred' if head == 'predictor' else 'cls'}_{part}")


def split_train_test(runs: Sequence[CfrSeries], n_train_per_run: int, n_test_per_run: int,
                     t_len: int, span_d: int, *, threshold: float | None = None,
                     percentile: float = DEFAULT_PERCENTILE) -> DatasetSplit:
    """Time-ordered per-run split; runs are concatenated, never shuffled.

    The global scale is 1 / RMS of the training label magnitudes and is applied
    to inputs and predictor labels alike.  Unless given, the classifier
    threshold is the ``percentile`` of the scaled training magnitudes.
    """
    if not runs:
        raise ConfigError("no runs given")
    if n_train_per_run < 1 or n_test_per_run < 1:
        raise ConfigError("per-run train and test counts must be >= 1")
    need = min_length(n_train_per_run + n_test_per_run, t_len, span_d)
    parts = []
    for i, run in enumerate(runs):
        if len(run) < need:
            raise InsufficientDataError(
                f"run {i} has {len(run)} snapshots; need at least {need} for "
                f"{n_train_per_run}+{n_test_per_run} examples with T={t_len}, D={span_d}")
        if run.n_bins != runs[0].n_bins:
            raise ConfigError("runs have different bin counts")
        parts.append(tensorize(run, t_len, span_d))
    n_tr = n_train_per_run
    n_te = n_test_per_run
    fut_train = np.concatenate([f[:n_tr] for _, f in parts])
    fut_test = np.concatenate([f[n_tr:n_tr + n_te] for _, f in parts])
    mags = np.abs(fut_train)
    rms = float(np.sqrt(np.mean(mags * mags)))
    if not rms > 0:
        raise InsufficientDataError("training magnitudes are all zero")
    scale = 1.0 / rms
    x_train = np.concatenate([x[:n_tr] for x, _ in parts])
    x_train *= scale
    x_test = np.concatenate([x[n_tr:n_tr + n_te] for x, _ in parts])
    x_test *= scale
    yp_train = make_predictor_labels(fut_train, scale)
    yp_test = make_predictor_labels(fut_test, scale)
    if threshold is None:
        threshold = float(np.percentile(yp_train, percentile))
    return DatasetSplit(
        x_train, x_test, yp_train, yp_test,
        make_classifier_labels(fut_train, scale, threshold),
        make_classifier_labels(fut_test, scale, threshold),
        scale, float(threshold))


def apply_split_scaling(series: CfrSeries, split: DatasetSplit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensorize a new series with a training split's frozen scale and threshold."""
    x, fut = tensorize(series, split.t_len, split.span_d)
    if x.shape[1] != split.n_bins:
        raise ConfigError(f"series has {x.shape[1]} bins, dataset expects {split.n_bins}")
    return (x * split.scale, make_predictor_labels(fut, split.scale),
            make_classifier_labels(fut, split.scale, split.threshold))


def tensor_slice_csv(tensor: np.ndarray, index: tuple = ()) -> str:
    """CSV of ``tensor[index]`` with one row per element: its full index, then the value."""
    part = np.asarray(tensor)[index]
    lead = np.indices(np.asarray(tensor).shape)
    coords = [np.asarray(c[index]).ravel() for c in lead]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"i{k}" for k in range(len(coords))] + ["value"])
    for row in zip(*coords, np.asarray(part).ravel()):
        w.writerow([int(c) for c in row[:-1]] + [f"{row[-1]:.9g}"])
    return buf.getvalue()


# -- persistence -------------------------------------------------------------

def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    with open(path, "wb") as fh:
        for role, arr in ((ROLE_X_TRAIN, split.x_train), (ROLE_X_TEST, split.x_test),
                          (ROLE_YP_TRAIN, split.y_pred_train), (ROLE_YP_TEST, split.y_pred_test),
                          (ROLE_YC_TRAIN, split.y_cls_train), (ROLE_YC_TEST, split.y_cls_test)):
            container.write_block(fh, role, arr)
        container.write_footer(fh, split.scale, split.threshold)


def load_dataset(path: str | Path) -> DatasetSplit:
    blocks, scale, threshold = container.read_container(path)
    needed = (ROLE_X_TRAIN, ROLE_X_TEST, ROLE_YP_TRAIN, ROLE_YP_TEST, ROLE_YC_TRAIN, ROLE_YC_TEST)
    missing = [r for r in needed if r not in blocks]
    if missing:
        raise FormatError(f"not a dataset file: missing roles {missing}")
    if any(blocks[r].ndim != 4 or blocks[r].dtype != np.float64 for r in needed):
        raise FormatError("dataset tensors must be rank-4 float64")
    return DatasetSplit(*(blocks[r] for r in needed), scale=scale, threshold=threshold)


def save_series(series: CfrSeries, path: str | Path) -> None:
    meta = np.array([series.delta_t, series.band_hz[0], series.band_hz[1], float(series.t_start)])
    with open(path, "wb") as fh:
        container.write_block(fh, ROLE_SERIES, _planes(series.values))
        container.write_block(fh, ROLE_SERIES_META, meta)
        container.write_block(fh, ROLE_FINGERPRINT,
                              np.frombuffer(series.scenario_fingerprint.encode(), dtype=np.uint8))
        container.write_footer(fh, 1.0, 0.0)


def load_series(path: str | Path) -> CfrSeries:
    blocks, _, _ = container.read_container(path)
    if ROLE_SERIES not in blocks or ROLE_SERIES_META not in blocks:
        raise FormatError("not a CFR series file")
    planes = blocks[ROLE_SERIES]
    if planes.ndim != 3 or planes.shape[2] != 2:
        raise FormatError("series tensor must be (J, F, 2)")
    meta = blocks[ROLE_SERIES_META]
    fp = blocks.get(ROLE_FINGERPRINT, np.zeros(0, np.uint8)).tobytes().decode()
    return CfrSeries(planes[..., 0] + 1j * planes[..., 1], float(meta[0]),
                     (float(meta[1]), float(meta[2])), fp, int(meta[3]))
