"""Parametric tone-burst synthesizer used as the synthetic speech source.

Each vocabulary token is rendered as a short harmonic tone whose fundamental
depends on the token id and on the voice profile's base pitch.  Voice profiles
are cheap stand-ins for speaker identities: pitch, speaking rate and timbre.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import InvalidArgumentError, UnknownTokenError

SAMPLE_RATE = 16000
PITCH_RANGE = (90.0, 300.0)
RATE_RANGE = (0.8, 1.25)
N_HARMONICS = 3

BURST_MS = 120.0
GAP_MS = 20.0
RAMP_MS = 5.0
PEAK = 0.5
JITTER = 0.03
REFERENCE_PITCH = 150.0


@dataclass(frozen=True)
class VoiceProfile:
    profile_id: int
    base_pitch: float
    rate_scale: float
    harmonic_weights: tuple[float, float, float]


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidArgumentError("waveform samples must be one-dimensional")
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidArgumentError(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise InvalidArgumentError("waveform samples must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Utterance:
    id: str
    tokens: tuple[int, ...]
    transcript: str
    source: str
    waveform: Waveform = field(repr=False)

    def __post_init__(self):
        if self.source not in ("real", "synthetic"):
            raise InvalidArgumentError(f"source must be 'real' or 'synthetic', got {self.source!r}")
        self.tokens = tuple(int(t) for t in self.tokens)


def sample_profiles(pool_seed: int, count: int, *,
                    pitch_range: tuple[float, float] = PITCH_RANGE,
                    rate_range: tuple[float, float] = RATE_RANGE) -> list[VoiceProfile]:
    """Draw ``count`` voice profiles with ids ``0..count-1``.

    Profile ``i`` depends only on ``(pool_seed, i)``, so a pool of 32 is a
    prefix of a pool of 500 drawn with the same seed.  ``pitch_range`` and
    ``rate_range`` may narrow (never widen) the default ranges.
    """
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    lo, hi = pitch_range
    if not PITCH_RANGE[0] <= lo <= hi <= PITCH_RANGE[1]:
        raise InvalidArgumentError(f"pitch_range must lie within {PITCH_RANGE}")
    rlo, rhi = rate_range
    if not RATE_RANGE[0] <= rlo <= rhi <= RATE_RANGE[1]:
        raise InvalidArgumentError(f"rate_range must lie within {RATE_RANGE}")
    profiles = []
    for pid in range(count):
        rng = np.random.default_rng([pool_seed, pid])
        profiles.append(VoiceProfile(
            profile_id=pid,
            base_pitch=float(rng.uniform(lo, hi)),
            rate_scale=float(rng.uniform(rlo, rhi)),
            harmonic_weights=tuple(float(w) for w in rng.uniform(0.0, 1.0, N_HARMONICS)),
        ))
    return profiles


def token_frequency(token_id: int, base_pitch: float = REFERENCE_PITCH) -> float:
    """Fundamental frequency in Hz for a token under a given base pitch."""
    f = 220.0 * 2.0 ** (token_id / 12.0)
    while f > 2000.0:
        f /= 2.0
    while f < 200.0:
        f *= 2.0
    return f * base_pitch / REFERENCE_PITCH


def _burst(freq: float, n: int, weights: Sequence[float]) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    out = np.sin(2 * np.pi * freq * t)
    for k, w in enumerate(weights, start=2):
        if k * freq < SAMPLE_RATE / 2:
            out += w * np.sin(2 * np.pi * k * freq * t)
    ramp = min(int(RAMP_MS * SAMPLE_RATE / 1000), n // 2)
    if ramp > 0:
        env = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        out[:ramp] *= env
        out[n - ramp:] *= env[::-1]
    return out


def synthesize(tokens: Sequence[int], profile: VoiceProfile, seed: int,
               vocab_size: int | None = None) -> Waveform:
    """Render ``tokens`` as a sequence of tone bursts separated by 20 ms gaps.

    ``seed`` only perturbs per-token durations (uniform +-3%).  When
    ``vocab_size`` is given, ids outside ``1..vocab_size-1`` are rejected.
    """
    tokens = list(tokens)
    if not tokens:
        raise InvalidArgumentError("cannot synthesize an empty token sequence")
    for tok in tokens:
        if tok < 1 or (vocab_size is not None and tok >= vocab_size):
            raise UnknownTokenError(tok)
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-JITTER, JITTER, len(tokens))
    gap = np.zeros(int(round(GAP_MS * SAMPLE_RATE / 1000)))
    pieces = []
    for i, (tok, j) in enumerate(zip(tokens, jitter)):
        n = int(round(BURST_MS * profile.rate_scale * (1.0 + j) * SAMPLE_RATE / 1000))
        pieces.append(_burst(token_frequency(tok, profile.base_pitch), n, profile.harmonic_weights))
        if i < len(tokens) - 1:
            pieces.append(gap)
    audio = np.concatenate(pieces)
    audio *= PEAK / np.max(np.abs(audio))
    return Waveform(audio)
