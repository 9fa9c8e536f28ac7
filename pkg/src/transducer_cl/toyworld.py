"""A small, fully synthetic continual-learning world.

"General" words are what a baseline recognizer already knows from real
recordings; "new" words only ever appear in freshly synthesized template
sentences, like medication names spoken into a general-purpose assistant.
"Real" audio uses one voice pool and passes once through a fixed
recording channel; "synthetic" audio uses a separate voice pool and is
stored clean (corruption happens on the fly during training).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AcousticImpulseResponse, CorruptionPolicy, SpecAugmentConfig, corrupt
from .features import FeatureConfig
from .io import Vocabulary
from .synth import SAMPLE_RATE, Utterance, Waveform, sample_profiles, synthesize
from .training import (Corpora, ElasticPenaltyConfig, FeaturePipeline, LrSchedule, MixWeights,
                       StageConfig)

GENERAL_WORDS = (
    "play", "stop", "music", "weather", "today", "tomorrow", "light", "kitchen", "timer", "set",
    "call", "mom", "news", "volume", "up", "down", "alarm", "off", "on", "please",
)
NEW_WORDS = ("alvarin", "bexatol", "cyprazine", "dovamex", "eltrofen")
SLOT = "<slot>"
TEMPLATES = (
    f"call {SLOT}",
    f"set {SLOT} timer",
    f"{SLOT} please",
    f"play {SLOT}",
    f"{SLOT} today",
    f"stop {SLOT}",
)


def default_vocabulary() -> Vocabulary:
    """25 words interleaved so every fifth id is a new word."""
    general = iter(GENERAL_WORDS)
    new = iter(NEW_WORDS)
    words = [next(new) if k % 5 == 4 else next(general) for k in range(len(GENERAL_WORDS) + len(NEW_WORDS))]
    return Vocabulary(words)


def make_air_pool(count: int, seed: int, length_s: float = 0.25) -> list[AcousticImpulseResponse]:
    """Direct path followed by an exponentially decaying diffuse tail."""
    rng = np.random.default_rng(seed)
    n = int(length_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    pool = []
    for _ in range(count):
        rt60 = rng.uniform(0.1, 0.4)
        tail = rng.normal(size=n) * np.exp(-6.9 * t / rt60) * rng.uniform(0.05, 0.2)
        delay = int(rng.integers(40, 160))
        taps = np.zeros(n)
        taps[0] = 1.0
        taps[delay:] += tail[: n - delay]
        pool.append(AcousticImpulseResponse(taps))
    return pool


def make_noise_pool(count: int, seed: int, length_s: float = 2.0) -> list[Waveform]:
    """White, pink-ish and brown-ish noise clips, peak 0.5."""
    rng = np.random.default_rng(seed)
    n = int(length_s * SAMPLE_RATE)
    pool = []
    freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
    freqs[0] = freqs[1]
    for k in range(count):
        spec = np.fft.rfft(rng.normal(size=n)) * freqs ** (-0.5 * (k % 3))
        x = np.fft.irfft(spec, n)
        pool.append(Waveform(0.5 * x / np.max(np.abs(x))))
    return pool


@dataclass
class ToyWorldConfig:
    real_pool_seed: int = 11
    synth_pool_seed: int = 23
    n_real_profiles: int = 40
    n_synth_profiles: int = 500
    synth_profiles_per_text: int = 8
    pitch_range: tuple[float, float] = (147.0, 153.0)
    n_train_real: int = 2000
    n_dev_gen: int = 100
    n_eval_gen: int = 200
    n_eval_new: int = 150
    min_words: int = 1
    max_words: int = 3
    channel_policy: CorruptionPolicy = field(default_factory=lambda: CorruptionPolicy(0.5, 0.5, 15.0, 25.0))
    n_airs: int = 24
    n_noises: int = 12
    seed: int = 0


@dataclass
class ToyWorld:
    vocab: Vocabulary
    general_ids: tuple[int, ...]
    new_ids: tuple[int, ...]
    train_real: list[Utterance]
    synthetic: list[Utterance]
    dev_gen: list[Utterance]
    eval_gen: list[Utterance]
    eval_new: list[Utterance]
    air_pool: list[AcousticImpulseResponse]
    noise_pool: list[Waveform]


def expand_templates(templates, slot_words) -> list[str]:
    return [tpl.replace(SLOT, w) for tpl in templates for w in slot_words]


def build_toy_world(cfg: ToyWorldConfig = ToyWorldConfig()) -> ToyWorld:
    vocab = default_vocabulary()
    general_ids = tuple(vocab.id(w) for w in GENERAL_WORDS)
    new_ids = tuple(vocab.id(w) for w in NEW_WORDS)
    rng = np.random.default_rng(cfg.seed)
    airs = make_air_pool(cfg.n_airs, cfg.seed + 1)
    noises = make_noise_pool(cfg.n_noises, cfg.seed + 2)
    real_profiles = sample_profiles(cfg.real_pool_seed, cfg.n_real_profiles, pitch_range=cfg.pitch_range)
    synth_profiles = sample_profiles(cfg.synth_pool_seed, cfg.n_synth_profiles, pitch_range=cfg.pitch_range)

    def real_utt(uid: str, text: str) -> Utterance:
        tokens = vocab.encode(text)
        profile = real_profiles[int(rng.integers(len(real_profiles)))]
        clean = synthesize(tokens, profile, int(rng.integers(2 ** 31)))
        recorded = corrupt(clean, cfg.channel_policy, airs, noises, int(rng.integers(2 ** 31)))
        return Utterance(uid, tokens, text, "real", recorded)

    def general_text() -> str:
        n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        return " ".join(GENERAL_WORDS[int(i)] for i in rng.integers(len(GENERAL_WORDS), size=n))

    train_real = [real_utt(f"real-{i:05d}", general_text()) for i in range(cfg.n_train_real)]
    dev_gen = [real_utt(f"devgen-{i:04d}", general_text()) for i in range(cfg.n_dev_gen)]
    eval_gen = [real_utt(f"evalgen-{i:04d}", general_text()) for i in range(cfg.n_eval_gen)]
    new_texts = expand_templates(TEMPLATES, NEW_WORDS)
    eval_new = [real_utt(f"evalnew-{i:04d}", new_texts[int(rng.integers(len(new_texts)))])
                for i in range(cfg.n_eval_new)]

    synthetic = []
    for k, text in enumerate(new_texts):
        tokens = vocab.encode(text)
        chosen = rng.choice(len(synth_profiles), size=cfg.synth_profiles_per_text, replace=False)
        for j, pid in enumerate(chosen):
            wave = synthesize(tokens, synth_profiles[int(pid)], int(rng.integers(2 ** 31)))
            synthetic.append(Utterance(f"synth-{k:03d}-{j:02d}", tokens, text, "synthetic", wave))

    return ToyWorld(vocab, general_ids, new_ids, train_real, synthetic, dev_gen, eval_gen, eval_new,
                    airs, noises)


def toy_pipeline(world: ToyWorld, spec_augment: bool = False) -> FeaturePipeline:
    """Normalized log-Mel features; synthetic audio corrupted with the default policy."""
    return FeaturePipeline(FeatureConfig(normalize=True), CorruptionPolicy(), world.air_pool,
                           world.noise_pool, SpecAugmentConfig() if spec_augment else None)


def corpora(world: ToyWorld) -> Corpora:
    return Corpora(world.train_real, world.synthetic)


def _schedule(steps: int, peak: float, final_ratio: float = 0.2) -> LrSchedule:
    warm = min(100, steps // 10)
    hold = steps // 2
    return LrSchedule(warm, hold, steps - hold - warm, peak, peak * final_ratio)


def baseline_stage(steps: int = 8000, batch_size: int = 8, seed: int = 1) -> StageConfig:
    """Real-only training from scratch on general-word audio."""
    warm = 100
    return StageConfig("baseline", schedule=LrSchedule(warm, steps // 2, steps - steps // 2 - warm, 2e-3, 2e-4),
                       steps=steps, batch_size=batch_size, seed=seed)


def continual_stages(steps: tuple[int, int, int, int] = (6000, 6000, 300, 300),
                     lrs: tuple[float, float, float, float] = (2e-3, 2e-3, 2e-4, 2e-5),
                     lam: float = 100.0, batch_size: int = 16, seed: int = 2) -> list[StageConfig]:
    """Four stages: (95, 5) with a frozen encoder, (98, 2), real-only with an
    elastic penalty, real-only at a small learning rate.

    The penalty covers the prediction network, its embedding and the joint
    network; anchoring only the prediction network lets the joint output
    layer forget new words within a few hundred real-only steps.
    """
    scope = frozenset({"decoder", "embedding", "joint"})
    return [
        StageConfig("stage1", mix=MixWeights(95, 5), freeze_encoder=True,
                    schedule=_schedule(steps[0], lrs[0]), steps=steps[0], batch_size=batch_size, seed=seed),
        StageConfig("stage2", mix=MixWeights(98, 2), schedule=_schedule(steps[1], lrs[1]),
                    steps=steps[1], batch_size=batch_size, seed=seed + 1),
        StageConfig("stage3", elastic=ElasticPenaltyConfig(lam=lam, component_scope=scope),
                    schedule=_schedule(steps[2], lrs[2]), steps=steps[2], batch_size=batch_size, seed=seed + 2),
        StageConfig("stage4", schedule=_schedule(steps[3], lrs[3]), steps=steps[3],
                    batch_size=batch_size, seed=seed + 3),
    ]
