"""Log-Mel filterbank features, left-context stacking and frame downsampling."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, InvalidArgumentError, ShapeError, TooShortError
from .synth import SAMPLE_RATE, Waveform
from .validation import check_waveforms

N_FFT = 512


@dataclass(frozen=True)
class FeatureConfig:
    n_mels: int = 64
    window_ms: float = 25.0
    shift_ms: float = 10.0
    stack_left: int = 2
    downsample: int = 3
    log_floor: float = 1e-10
    normalize: bool = False

    def __post_init__(self):
        if not self.window_ms > self.shift_ms > 0:
            raise ConfigurationError("need window_ms > shift_ms > 0")
        if self.n_mels < 2:
            raise ConfigurationError("n_mels must be >= 2")
        if self.stack_left < 0 or self.downsample < 1:
            raise ConfigurationError("need stack_left >= 0 and downsample >= 1")
        if self.window_samples > N_FFT:
            raise ConfigurationError(f"window of {self.window_samples} samples exceeds the {N_FFT}-point transform")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * SAMPLE_RATE / 1000))

    @property
    def shift_samples(self) -> int:
        return int(round(self.shift_ms * SAMPLE_RATE / 1000))

    @property
    def output_dim(self) -> int:
        return self.n_mels * (self.stack_left + 1)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    frame_rate_ms: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ShapeError(f"feature matrix must be T x D with T >= 1, got {self.values.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist.

    Each triangle is scaled to unit area, so a flat power spectrum gives
    roughly equal energy in every band.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (bins - lo) / (mid - lo)
        fall = (hi - bins) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall)) * (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def log_mel(x: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    samples = x.samples
    win, hop = cfg.window_samples, cfg.shift_samples
    if samples.size < win:
        raise TooShortError(f"audio of {samples.size} samples is shorter than one {win}-sample window")
    n_frames = (samples.size - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * get_window("hann", win)
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energy = power @ mel_filterbank(cfg.n_mels).T
    values = np.log(np.maximum(energy, cfg.log_floor))
    if cfg.normalize:
        values = (values - values.mean()) / (values.std() + 1e-5)
    return FeatureMatrix(values, cfg.shift_ms)


def stack_downsample(F: FeatureMatrix, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Concatenate each frame with its ``stack_left`` predecessors, keep every
    ``downsample``-th frame starting at index 0.

    Frames before the start are replaced by frame 0.
    """
    v = F.values
    kept = np.arange(0, v.shape[0], cfg.downsample)
    cols = [v[np.maximum(kept - lag, 0)] for lag in range(cfg.stack_left, -1, -1)]
    return FeatureMatrix(np.concatenate(cols, axis=1), F.frame_rate_ms * cfg.downsample)


def extract(x: Waveform, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    return stack_downsample(log_mel(x, cfg), cfg)


HEADER = struct.Struct("<iif")


def write_feature_dump(path, F: FeatureMatrix) -> None:
    """Write ``(T, D, frame_rate_ms)`` then row-major little-endian float32 values."""
    t, d = F.shape
    payload = HEADER.pack(t, d, float(F.frame_rate_ms)) + F.values.astype("<f4").tobytes(order="C")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def read_feature_dump(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated feature dump header")
    t, d, rate = HEADER.unpack_from(data)
    body = np.frombuffer(data, dtype="<f4", offset=HEADER.size)
    if body.size != t * d:
        raise InvalidArgumentError(f"{path}: expected {t * d} values, found {body.size}")
    return FeatureMatrix(body.reshape(t, d).astype(np.float64), rate)


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Waveforms in, stacked and downsampled log-Mel matrices out.

    Stateless; ``fit`` only validates the configuration.
    """

    def __init__(self, n_mels=64, window_ms=25.0, shift_ms=10.0, stack_left=2, downsample=3,
                 log_floor=1e-10, normalize=False):
        self.n_mels = n_mels
        self.window_ms = window_ms
        self.shift_ms = shift_ms
        self.stack_left = stack_left
        self.downsample = downsample
        self.log_floor = log_floor
        self.normalize = normalize

    def _config(self) -> FeatureConfig:
        return FeatureConfig(self.n_mels, self.window_ms, self.shift_ms, self.stack_left,
                             self.downsample, self.log_floor, self.normalize)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.n_features_out_ = self.config_.output_dim
        return self

    def transform(self, X) -> list[FeatureMatrix]:
        cfg = self.config_ if hasattr(self, "config_") else self._config()
        return [extract(w, cfg) for w in check_waveforms(X)]

    def get_feature_names_out(self, input_features=None):
        cfg = self._config()
        return np.array([f"lag{lag}_mel{m}" for lag in range(cfg.stack_left, -1, -1)
                         for m in range(cfg.n_mels)], dtype=object)


def n_frames(n_samples: int, cfg: FeatureConfig = FeatureConfig()) -> int:
    """Number of downsampled frames produced for ``n_samples`` of audio."""
    t = (n_samples - cfg.window_samples) // cfg.shift_samples + 1
    return math.ceil(t / cfg.downsample)
