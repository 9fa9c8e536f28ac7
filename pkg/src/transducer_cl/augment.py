"""Audio- and feature-level corruption: reverb, additive noise, SpecAugment."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, DegenerateSignalError, InvalidArgumentError
from .synth import SAMPLE_RATE, Waveform
from .validation import check_feature_matrix, check_waveforms


@dataclass(frozen=True)
class AcousticImpulseResponse:
    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise InvalidArgumentError("impulse response must be a nonempty 1-D array")
        if not np.sum(taps ** 2) > 0:
            raise DegenerateSignalError("impulse response has zero energy")
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class CorruptionPolicy:
    p_reverb: float = 0.6
    p_noise: float = 0.6
    snr_low_db: float = 10.0
    snr_high_db: float = 20.0

    def __post_init__(self):
        for name in ("p_reverb", "p_noise"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be a probability, got {p}")
        if self.snr_low_db > self.snr_high_db:
            raise ConfigurationError("snr_low_db must not exceed snr_high_db")


@dataclass(frozen=True)
class SpecAugmentConfig:
    n_freq_masks: int = 2
    max_freq_fraction: float = 0.375
    max_time_mask_fraction: float = 0.05
    time_mask_count_fraction: float = 0.05
    time_mask_count_cap: int = 10

    def __post_init__(self):
        for name in ("max_freq_fraction", "max_time_mask_fraction", "time_mask_count_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {v}")
        if self.n_freq_masks < 0 or self.time_mask_count_cap < 0:
            raise ConfigurationError("mask counts must be >= 0")

    def time_mask_count(self, n_frames: int) -> int:
        return max(1, min(math.floor(self.time_mask_count_fraction * n_frames), self.time_mask_count_cap))

    def max_time_width(self, n_frames: int) -> int:
        return math.floor(self.max_time_mask_fraction * n_frames)

    def freq_budget(self, n_bins: int) -> int:
        return math.floor(self.max_freq_fraction * n_bins)


def reverberate(x: Waveform, air: AcousticImpulseResponse, renormalize: bool = True) -> Waveform:
    """Convolve ``x`` with ``air``, keep the first ``len(x)`` samples.

    With ``renormalize`` the result is rescaled to the input's peak.
    """
    if x.sample_rate != air.sample_rate:
        raise InvalidArgumentError(
            f"sample rate mismatch: audio {x.sample_rate} Hz, impulse response {air.sample_rate} Hz")
    n = len(x)
    if n == 0:
        return Waveform(x.samples.copy())
    if air.taps.size == 1:
        out = x.samples * air.taps[0]
    elif min(n, air.taps.size) < 64:
        out = np.convolve(x.samples, air.taps)[:n]
    else:
        out = fftconvolve(x.samples, air.taps)[:n]
    if renormalize:
        peak_in = np.max(np.abs(x.samples))
        peak_out = np.max(np.abs(out))
        if peak_out > 0 and peak_in != peak_out:
            out = out * (peak_in / peak_out)
    return Waveform(out)


def fit_noise_length(noise: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Tile ``noise`` if shorter than ``n``, else crop ``n`` samples from ``offset``."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise DegenerateSignalError("noise clip is empty")
    if noise.size < n:
        reps = -(-n // noise.size)
        return np.tile(noise, reps)[:n]
    offset = min(max(offset, 0), noise.size - n)
    return noise[offset:offset + n]


def snr_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    """Scale factor applied to noise so the mixture has the requested SNR."""
    return math.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0)))


def mix_noise(x: Waveform, noise: Waveform, snr_db: float, offset: int = 0) -> Waveform:
    """Add ``noise`` to ``x`` at ``snr_db``.

    The mixture is uniformly scaled down if it would leave [-1, 1]; this
    keeps the component power ratio, and so the SNR, unchanged.
    """
    n = fit_noise_length(noise.samples, len(x), offset)
    p_x = float(np.mean(x.samples ** 2)) if len(x) else 0.0
    p_n = float(np.mean(n ** 2))
    if p_x == 0.0:
        raise DegenerateSignalError("signal has zero power")
    if p_n == 0.0:
        raise DegenerateSignalError("noise has zero power")
    out = x.samples + snr_gain(p_x, p_n, snr_db) * n
    peak = np.max(np.abs(out))
    if peak > 1.0:
        out /= peak
    return Waveform(out)


@dataclass(frozen=True)
class CorruptionInfo:
    reverb: bool
    noise: bool
    air_index: int | None = None
    noise_index: int | None = None
    snr_db: float | None = None

    @property
    def outcome(self) -> str:
        if self.reverb and self.noise:
            return "both"
        if self.reverb:
            return "reverb"
        if self.noise:
            return "noise"
        return "clean"


def corrupt(x: Waveform, policy: CorruptionPolicy,
            air_pool: Sequence[AcousticImpulseResponse], noise_pool: Sequence[Waveform],
            rng_seed, return_info: bool = False):
    """Randomly reverberate and/or add noise to ``x``, reverb first.

    Two independent Bernoulli draws decide each corruption.  Draw order from
    the seeded generator is fixed: reverb flag, noise flag, AIR index, noise
    index, crop offset, SNR.
    """
    if policy.p_reverb > 0 and not air_pool:
        raise ConfigurationError("p_reverb > 0 requires a nonempty impulse-response pool")
    if policy.p_noise > 0 and not noise_pool:
        raise ConfigurationError("p_noise > 0 requires a nonempty noise pool")
    rng = np.random.default_rng(rng_seed)
    do_reverb = bool(rng.random() < policy.p_reverb)
    do_noise = bool(rng.random() < policy.p_noise)
    out = x
    air_index = noise_index = None
    snr = None
    if do_reverb:
        air_index = int(rng.integers(len(air_pool)))
        out = reverberate(out, air_pool[air_index])
    if do_noise:
        noise_index = int(rng.integers(len(noise_pool)))
        clip = noise_pool[noise_index]
        offset = int(rng.integers(max(len(clip) - len(out), 0) + 1))
        snr = float(rng.uniform(policy.snr_low_db, policy.snr_high_db))
        out = mix_noise(out, clip, snr, offset)
    if out is x:
        out = Waveform(x.samples.copy())
    if return_info:
        return out, CorruptionInfo(do_reverb, do_noise, air_index, noise_index, snr)
    return out


@dataclass(frozen=True)
class Mask:
    axis: str  # "freq" or "time"
    start: int
    width: int


def draw_masks(n_frames: int, n_bins: int, cfg: SpecAugmentConfig, rng: np.random.Generator) -> list[Mask]:
    masks = []
    per_mask = cfg.freq_budget(n_bins) // cfg.n_freq_masks if cfg.n_freq_masks else 0
    for _ in range(cfg.n_freq_masks):
        w = int(rng.integers(0, per_mask + 1))
        masks.append(Mask("freq", int(rng.integers(0, n_bins - w + 1)), w))
    max_w = cfg.max_time_width(n_frames)
    for _ in range(cfg.time_mask_count(n_frames)):
        w = int(rng.integers(0, max_w + 1))
        masks.append(Mask("time", int(rng.integers(0, n_frames - w + 1)), w))
    return masks


def spec_augment(F, cfg: SpecAugmentConfig, rng_seed, return_masks: bool = False):
    """Mask frequency bands and time spans, filling each with Gaussian noise.

    Fill statistics come from the original values under each mask.  A
    cell covered by several masks belongs to the last one and is filled
    once; each mask's draws are standardized over the cells it owns, so
    their sample mean and variance equal the region's exactly.
    """
    values = check_feature_matrix(F, min_bins=2)
    rng = np.random.default_rng(rng_seed)
    n_frames, n_bins = values.shape
    masks = draw_masks(n_frames, n_bins, cfg, rng)
    out = values.copy()
    owner = np.full(values.shape, -1)
    regions = [(slice(None), slice(m.start, m.start + m.width)) if m.axis == "freq"
               else (slice(m.start, m.start + m.width), slice(None)) for m in masks]
    for i, region in enumerate(regions):
        owner[region] = i
    for i, region in enumerate(regions):
        cells = owner == i
        n = int(cells.sum())
        if n == 0:
            continue
        orig = values[region]
        z = rng.normal(size=n)
        if n > 1:
            z = (z - z.mean()) / z.std()
        out[cells] = orig.mean() + orig.std() * z
    result = _rewrap(F, out)
    return (result, masks) if return_masks else result


def _rewrap(F, values):
    from .features import FeatureMatrix
    if isinstance(F, FeatureMatrix):
        return FeatureMatrix(values, F.frame_rate_ms)
    return values


class Corruptor(TransformerMixin, BaseEstimator):
    """Transformer applying :func:`corrupt` to a list of waveforms.

    Each input gets its own seed drawn from ``random_state``.
    """

    def __init__(self, air_pool=(), noise_pool=(), p_reverb=0.6, p_noise=0.6,
                 snr_low_db=10.0, snr_high_db=20.0, random_state=0):
        self.air_pool = air_pool
        self.noise_pool = noise_pool
        self.p_reverb = p_reverb
        self.p_noise = p_noise
        self.snr_low_db = snr_low_db
        self.snr_high_db = snr_high_db
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.policy_ = CorruptionPolicy(self.p_reverb, self.p_noise, self.snr_low_db, self.snr_high_db)
        if self.p_reverb > 0 and not self.air_pool:
            raise ConfigurationError("p_reverb > 0 requires a nonempty impulse-response pool")
        if self.p_noise > 0 and not self.noise_pool:
            raise ConfigurationError("p_noise > 0 requires a nonempty noise pool")
        return self

    def transform(self, X):
        if not hasattr(self, "policy_"):
            self.fit()
        waves = check_waveforms(X)
        rng = np.random.default_rng(self.random_state)
        seeds = rng.integers(0, 2 ** 63 - 1, size=len(waves))
        return [corrupt(w, self.policy_, self.air_pool, self.noise_pool, int(s))
                for w, s in zip(waves, seeds)]


class SpecAugmenter(TransformerMixin, BaseEstimator):
    def __init__(self, n_freq_masks=2, max_freq_fraction=0.375, max_time_mask_fraction=0.05,
                 time_mask_count_fraction=0.05, time_mask_count_cap=10, random_state=0):
        self.n_freq_masks = n_freq_masks
        self.max_freq_fraction = max_freq_fraction
        self.max_time_mask_fraction = max_time_mask_fraction
        self.time_mask_count_fraction = time_mask_count_fraction
        self.time_mask_count_cap = time_mask_count_cap
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.config_ = SpecAugmentConfig(self.n_freq_masks, self.max_freq_fraction,
                                         self.max_time_mask_fraction, self.time_mask_count_fraction,
                                         self.time_mask_count_cap)
        return self

    def transform(self, X):
        if not hasattr(self, "config_"):
            self.fit()
        rng = np.random.default_rng(self.random_state)
        seeds = rng.integers(0, 2 ** 63 - 1, size=len(X))
        return [spec_augment(F, self.config_, int(s)) for F, s in zip(X, seeds)]
