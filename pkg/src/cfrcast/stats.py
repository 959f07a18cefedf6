"""Normalised covariance diagnostics for simulated channels."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError, DegenerateInputError
from .sim import CfrSeries


@dataclass(frozen=True)
class CovarianceProfile:
    lags: np.ndarray
    values: np.ndarray
    kind: Literal["auto", "cross"]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def first_lag_below(self, level: float) -> int | None:
        below = np.nonzero(self.values < level)[0]
        return int(self.lags[below[0]]) if below.size else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lag", "value", "kind"])
        for lag, v in zip(self.lags, self.values):
            w.writerow([int(lag), f"{v:.9g}", self.kind])
        return buf.getvalue()


def normalized_covariance(x, y, max_lag: int, *, estimator: str = "unbiased",
                          kind: str | None = None) -> CovarianceProfile:
    """R(tau) = sum_j (x_j - mean x)(y_{j-tau} - mean y) / (n_tau * sqrt(var x * var y)).

    ``estimator="unbiased"`` uses ``n_tau = N - tau``; ``"biased"`` uses
    ``n_tau = N``, which keeps ``|R| <= 1`` for every input (Cauchy-Schwarz)
    at the cost of shrinking long lags towards zero.  Only ``tau >= 0`` is
    returned; swap the arguments for negative lags.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ConfigError("x and y must be 1-D and of equal length")
    n = x.size
    if n < 2:
        raise ConfigError("need at least two samples")
    if not 0 <= max_lag < n:
        raise ConfigError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    if estimator not in ("unbiased", "biased"):
        raise ConfigError(f"unknown estimator {estimator!r}")
    xc = x - x.mean()
    yc = y - y.mean()
    var_x = np.mean(xc * xc)
    var_y = np.mean(yc * yc)
    if var_x == 0 or var_y == 0:
        raise DegenerateInputError("zero-variance input")
    norm = np.sqrt(var_x * var_y)
    lags = np.arange(max_lag + 1)
    values = np.empty(max_lag + 1)
    for tau in lags:
        s = np.dot(xc[tau:], yc[: n - tau])
        values[tau] = s / ((n - tau if estimator == "unbiased" else n) * norm)
    if kind is None:
        kind = "auto" if x is y or np.array_equal(x, y) else "cross"
    if kind == "auto":
        values[0] = 1.0  # exact by definition; removes rounding in the ratio
    return CovarianceProfile(lags, values, kind)


def band_power_series(series: CfrSeries) -> np.ndarray:
    """Total in-band power sum_f |H_j(f)|^2, one value per snapshot."""
    v = series.values
    return np.sum(v.real**2 + v.imag**2, axis=1)


def per_bin_covariance(a: CfrSeries, b: CfrSeries, max_lag: int, *,
                       estimator: str = "unbiased") -> np.ndarray:
    """Covariance of |H(f)| traces bin by bin; returns a (F, max_lag + 1) array."""
    if a.values.shape != b.values.shape:
        raise ConfigError("series shapes differ")
    ma, mb = np.abs(a.values), np.abs(b.values)
    kind = "auto" if a is b else "cross"
    return np.stack([
        normalized_covariance(ma[:, f], mb[:, f], max_lag, estimator=estimator, kind=kind).values
        for f in range(a.n_bins)
    ])


def fade_depth_db(series: CfrSeries) -> np.ndarray:
    """Per snapshot, 20 log10(min_f |H| / mean_f |H|); more negative is deeper.

    A snapshot whose bins are all zero gives NaN.
    """
    mag = np.abs(series.values)
    mean = mag.mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 20.0 * np.log10(mag.min(axis=1) / mean)


def count_deep_fades(series: CfrSeries, depth_db: float = 20.0) -> int:
    """Number of snapshots with some bin at least ``depth_db`` below the snapshot mean."""
    return int(np.sum(fade_depth_db(series) <= -depth_db))
