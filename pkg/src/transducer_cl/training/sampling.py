"""Weighted real/synthetic batch sampling and the per-utterance feature pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..augment import (AcousticImpulseResponse, CorruptionPolicy, SpecAugmentConfig, corrupt,
                       spec_augment)
from ..exceptions import ConfigurationError
from ..features import FeatureConfig, log_mel, stack_downsample
from ..synth import Utterance, Waveform

SEED_BOUND = 2 ** 63 - 1


@dataclass(frozen=True)
class MixWeights:
    real_pct: float = 100.0
    synth_pct: float = 0.0

    def __post_init__(self):
        if self.real_pct < 0 or self.synth_pct < 0 or abs(self.real_pct + self.synth_pct - 100.0) > 1e-9:
            raise ConfigurationError(f"mix weights must be >= 0 and sum to 100, got ({self.real_pct}, {self.synth_pct})")

    @classmethod
    def real_only(cls) -> "MixWeights":
        return cls(100.0, 0.0)

    @property
    def uses_synthetic(self) -> bool:
        return self.synth_pct > 0


def sample_batch(real_corpus: Sequence[Utterance], synth_corpus: Sequence[Utterance],
                 mix: MixWeights, batch_size: int, rng: np.random.Generator) -> list[Utterance]:
    """Fill each slot independently: real with probability ``real_pct/100``,
    then a uniform draw with replacement from the chosen corpus."""
    if mix.real_pct > 0 and not real_corpus:
        raise ConfigurationError("real weight > 0 but the real corpus is empty")
    if mix.synth_pct > 0 and not synth_corpus:
        raise ConfigurationError("synthetic weight > 0 but the synthetic corpus is empty")
    p_real = mix.real_pct / 100.0
    batch = []
    for _ in range(batch_size):
        corpus = real_corpus if rng.random() < p_real else synth_corpus
        batch.append(corpus[int(rng.integers(len(corpus)))])
    return batch


@dataclass
class FeaturePipeline:
    """Turns utterances into encoder inputs with on-the-fly augmentation.

    Synthetic audio is corrupted on every draw; SpecAugment (when
    configured) applies to both sources.  Clean log-Mel features of real
    utterances are cached by id.
    """
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    policy: CorruptionPolicy = field(default_factory=CorruptionPolicy)
    air_pool: Sequence[AcousticImpulseResponse] = ()
    noise_pool: Sequence[Waveform] = ()
    spec_config: SpecAugmentConfig | None = field(default_factory=SpecAugmentConfig)
    cache_real: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def validate(self, needs_synthetic: bool) -> None:
        if needs_synthetic:
            if self.policy.p_reverb > 0 and not self.air_pool:
                raise ConfigurationError("synthetic data requires an impulse-response pool (p_reverb > 0)")
            if self.policy.p_noise > 0 and not self.noise_pool:
                raise ConfigurationError("synthetic data requires a noise pool (p_noise > 0)")

    def clean(self, utt: Utterance) -> np.ndarray:
        """Stacked features without any augmentation (evaluation path)."""
        return stack_downsample(self._log_mel_cached(utt), self.feature_config).values

    def _log_mel_cached(self, utt: Utterance):
        if self.cache_real and utt.id in self._cache:
            return self._cache[utt.id]
        F = log_mel(utt.waveform, self.feature_config)
        if self.cache_real:
            self._cache[utt.id] = F
        return F

    def training(self, utt: Utterance, corrupt_seed: int, spec_seed: int) -> np.ndarray:
        if utt.source == "synthetic":
            wave = corrupt(utt.waveform, self.policy, self.air_pool, self.noise_pool, corrupt_seed)
            F = log_mel(wave, self.feature_config)
        else:
            F = self._log_mel_cached(utt)
        if self.spec_config is not None:
            F = spec_augment(F, self.spec_config, spec_seed)
        return stack_downsample(F, self.feature_config).values
