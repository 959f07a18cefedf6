"""Geometric 2-D reflection-point channel simulator.

A transmitter, a (moving) receiver and a cloud of reflection points live on a
plane.  Every reflection point defines one propagation path.  For each time
step the received baseband samples of a band-limited sinc excitation are
synthesised, noise is added, and the in-band DFT bins are kept as the channel
frequency response (CFR).  Positions are then advanced linearly in time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, GeometryError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Scene geometry and RF settings.  Defaults reproduce Table II values.

    Variances are in squared units of their means.  ``snr_db=None`` disables
    receiver noise.  ``window_start`` is the time of the first sample relative
    to the shortest-path arrival; ``None`` centres the window on that arrival.
    """

    p_tx: tuple[float, float] = (-200.0, 0.0)
    p_rx_init: tuple[float, float] = (200.0, 0.0)
    n_r: int = 256
    n_m: int = 63
    f_c: float = 900e6
    f_s: float = 51.2e6
    bandwidth_b: float = 12.8e6
    window_p: float = 10e-6
    mu_p: float = 0.0
    sigma2_p: float = 70.0**2
    mu_rx: float = 1.0
    sigma2_rx: float = 4.0
    mu_s: float = 0.0
    sigma2_s: float = 100.0
    snr_db: float | None = 12.0
    delta_t: float = 500e-6
    seed: int = 0
    window_start: float | None = None
    explicit_doppler: bool = False

    def __post_init__(self):
        object.__setattr__(self, "p_tx", tuple(float(v) for v in self.p_tx))
        object.__setattr__(self, "p_rx_init", tuple(float(v) for v in self.p_rx_init))
        if len(self.p_tx) != 2 or len(self.p_rx_init) != 2:
            raise ConfigError("positions must be 2-D")
        if self.n_r < 1:
            raise ConfigError(f"n_r must be >= 1, got {self.n_r}")
        if not 0 <= self.n_m <= self.n_r:
            raise ConfigError(f"need 0 <= n_m <= n_r, got n_m={self.n_m}, n_r={self.n_r}")
        for name in ("f_c", "f_s", "bandwidth_b", "window_p", "delta_t"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sigma2_p", "sigma2_rx", "sigma2_s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        k = self.f_s * self.window_p
        if round(k) < 1 or abs(k - round(k)) > 1e-6:
            raise ConfigError(f"f_s * window_p = {k} is not a positive integer sample count")
        f = round(k) * self.bandwidth_b / self.f_s
        if round(f) < 1 or abs(f - round(f)) > 1e-6:
            raise ConfigError(f"K * B / f_s = {f} is not a positive integer bin count")
        if round(f) > round(k):
            raise ConfigError("transmitted band is wider than the sampled spectrum")

    @property
    def n_samples(self) -> int:
        """K, samples per receive window."""
        return int(round(self.f_s * self.window_p))

    @property
    def n_bins(self) -> int:
        """F, DFT bins covering the transmitted band."""
        return int(round(self.n_samples * self.bandwidth_b / self.f_s))

    @property
    def t0(self) -> float:
        return -self.window_p / 2 if self.window_start is None else self.window_start

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["p_tx"] = list(self.p_tx)
        d["p_rx_init"] = list(self.p_rx_init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "ScenarioConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        d.update(overrides)
        return cls.from_dict(d)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Scene:
    p_rx: np.ndarray  # (2,)
    s_rx: np.ndarray  # (2,)
    p_r: np.ndarray  # (n_r, 2)
    s: np.ndarray  # (n_r, 2); rows outside ``mobile`` are zero
    mobile: np.ndarray  # (n_r,) bool
    t_now: float = 0.0

    def copy(self) -> "Scene":
        return Scene(self.p_rx.copy(), self.s_rx.copy(), self.p_r.copy(),
                     self.s.copy(), self.mobile.copy(), self.t_now)


@dataclass
class Multipath:
    """Per-path parameters, one array entry per reflection point."""

    length_l: np.ndarray
    delay_tau: np.ndarray
    phase_phi: np.ndarray
    amplitude_a: np.ndarray
    doppler_d: np.ndarray

    def __len__(self) -> int:
        return len(self.length_l)


@dataclass(frozen=True)
class CfrSnapshot:
    values: np.ndarray  # complex (F,)
    t_index: int
    band_hz: tuple[float, float]


@dataclass
class CfrSeries:
    """CFR of consecutive time steps, stored as a (J, F) complex array."""

    values: np.ndarray
    delta_t: float
    band_hz: tuple[float, float]
    scenario_fingerprint: str = ""
    t_start: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ValueError("CFR series values must be (J, F)")
        self.values.setflags(write=False)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, j: int) -> CfrSnapshot:
        if j < 0:
            j += len(self)
        return CfrSnapshot(self.values[j], self.t_start + j, self.band_hz)

    def __iter__(self) -> Iterator[CfrSnapshot]:
        for j in range(len(self)):
            yield self[j]


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent (positions, velocities, noise) generators from one seed."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def init_scene(config: ScenarioConfig) -> Scene:
    pos_rng, vel_rng, _ = _streams(config.seed)
    p_r = pos_rng.normal(config.mu_p, math.sqrt(config.sigma2_p), size=(config.n_r, 2))
    s_rx = vel_rng.normal(config.mu_rx, math.sqrt(config.sigma2_rx), size=2)
    idx = vel_rng.permutation(config.n_r)[: config.n_m]
    mobile = np.zeros(config.n_r, dtype=bool)
    mobile[idx] = True
    s = np.zeros((config.n_r, 2))
    s[np.sort(idx)] = vel_rng.normal(config.mu_s, math.sqrt(config.sigma2_s), size=(config.n_m, 2))
    return Scene(np.array(config.p_rx_init), s_rx, p_r, s, mobile, 0.0)


def path_geometry(scene: Scene, config: ScenarioConfig) -> Multipath:
    """Length, normalised delay, carrier phase and free-space gain per path."""
    p_tx = np.asarray(config.p_tx)
    to_rx = scene.p_r - scene.p_rx
    to_tx = scene.p_r - p_tx
    d_rx = np.hypot(to_rx[:, 0], to_rx[:, 1])
    d_tx = np.hypot(to_tx[:, 0], to_tx[:, 1])
    length = d_rx + d_tx
    if np.any(length <= 0):
        raise GeometryError("reflection point coincides with both transmitter and receiver")
    delay = length / SPEED_OF_LIGHT
    delay = delay - delay.min()
    phase = np.mod(-2 * np.pi * config.f_c * length / SPEED_OF_LIGHT, 2 * np.pi)
    phase[phase >= 2 * np.pi] = 0.0
    amplitude = SPEED_OF_LIGHT / (4 * np.pi * config.f_c * length)
    if config.explicit_doppler:
        # rate of change of each path length from point and receiver motion
        with np.errstate(invalid="ignore", divide="ignore"):
            u_rx = np.where(d_rx[:, None] > 0, to_rx / d_rx[:, None], 0.0)
            u_tx = np.where(d_tx[:, None] > 0, to_tx / d_tx[:, None], 0.0)
        rate = np.einsum("ij,ij->i", u_rx, scene.s - scene.s_rx) + np.einsum("ij,ij->i", u_tx, scene.s)
        doppler = -rate * config.f_c / SPEED_OF_LIGHT
    else:
        doppler = np.zeros_like(length)
    return Multipath(length, delay, phase, amplitude, doppler)


def sample_times(config: ScenarioConfig) -> np.ndarray:
    return config.t0 + np.arange(config.n_samples) / config.f_s


def synthesize_received(paths: Multipath, config: ScenarioConfig,
                        noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """Sampled received baseband signal for a sinc(B t) excitation.

    Noise is circular complex Gaussian, scaled so that the mean signal power
    over this window divided by the noise variance equals the configured SNR.
    Without ``noise_rng`` (or with ``snr_db=None``) the result is noiseless.
    """
    if len(paths) == 0:
        raise GeometryError("cannot synthesise a signal from an empty scene")
    t = sample_times(config)
    phase = paths.phase_phi[:, None] + 2 * np.pi * paths.doppler_d[:, None] * t[None, :]
    pulses = np.sinc(config.bandwidth_b * (t[None, :] - paths.delay_tau[:, None]))
    signal = np.sum(paths.amplitude_a[:, None] * np.exp(1j * phase) * pulses, axis=0)
    if noise_rng is None or config.snr_db is None:
        return signal
    power = np.mean(np.abs(signal) ** 2)
    sigma = math.sqrt(power / 10 ** (config.snr_db / 10) / 2)
    noise = noise_rng.normal(0.0, sigma, size=(2, signal.size))
    return signal + noise[0] + 1j * noise[1]


def band_slice(config: ScenarioConfig) -> slice:
    """Indices of the in-band bins within an fftshift-ed K-point spectrum."""
    k, f = config.n_samples, config.n_bins
    lo = k // 2 - f // 2
    return slice(lo, lo + f)


def band_edges(config: ScenarioConfig) -> tuple[float, float]:
    df = config.f_s / config.n_samples
    return (-(config.n_bins // 2) * df, (config.n_bins - config.n_bins // 2 - 1) * df)


def compute_cfr(samples: np.ndarray, config: ScenarioConfig, t_index: int = 0) -> CfrSnapshot:
    samples = np.asarray(samples)
    if samples.shape != (config.n_samples,):
        raise ConfigError(f"expected {config.n_samples} samples, got {samples.shape}")
    spectrum = np.fft.fftshift(np.fft.fft(samples))
    return CfrSnapshot(spectrum[band_slice(config)].copy(), t_index, band_edges(config))


def advance_scene(scene: Scene, delta_t: float) -> Scene:
    if not delta_t > 0:
        raise ConfigError("delta_t must be positive")
    out = scene.copy()
    out.p_rx = scene.p_rx + scene.s_rx * delta_t
    out.p_r = scene.p_r + scene.s * delta_t
    out.t_now = scene.t_now + delta_t
    return out


def run_simulation(config: ScenarioConfig, n_steps: int) -> CfrSeries:
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    _, _, noise_rng = _streams(config.seed)
    scene = init_scene(config)
    out = np.empty((n_steps, config.n_bins), dtype=np.complex128)
    for j in range(n_steps):
        rx = synthesize_received(path_geometry(scene, config), config, noise_rng)
        out[j] = compute_cfr(rx, config, j).values
        scene = advance_scene(scene, config.delta_t)
    return CfrSeries(out, config.delta_t, band_edges(config), config.fingerprint())
