import numpy as np
import pytest

from transducer_cl.augment import AcousticImpulseResponse, CorruptionPolicy
from transducer_cl.features import FeatureConfig
from transducer_cl.model import ModelConfig, Transducer
from transducer_cl.synth import Utterance, Waveform, sample_profiles, synthesize
from transducer_cl.training import Corpora, FeaturePipeline

TINY = ModelConfig(enc_layers=1, enc_units=8, dec_layers=1, dec_units=8, proj_dim=6, joint_units=8,
                   vocab_size=6, input_dim=192)


def _utterances(prefix, texts, source, pool_seed):
    profiles = sample_profiles(pool_seed, 4, pitch_range=(145.0, 155.0))
    return [Utterance(f"{prefix}-{i}", toks, " ".join(map(str, toks)), source,
                      synthesize(toks, profiles[i % 4], seed=i))
            for i, toks in enumerate(texts)]


@pytest.fixture(scope="session")
def tiny_corpora():
    real = _utterances("real", [(1,), (2, 3), (3,), (1, 2), (4,), (2,)], "real", 1)
    synth = _utterances("syn", [(5,), (1, 5), (5, 2)], "synthetic", 2)
    return Corpora(real, synth)


@pytest.fixture(scope="session")
def tiny_pools():
    rng = np.random.default_rng(0)
    airs = [AcousticImpulseResponse(np.r_[1.0, rng.normal(size=200) * 0.05 * np.exp(-np.arange(200) / 40)])]
    noises = [Waveform(rng.uniform(-0.3, 0.3, 8000))]
    return airs, noises


@pytest.fixture
def tiny_pipeline(tiny_pools):
    airs, noises = tiny_pools
    return FeaturePipeline(FeatureConfig(normalize=True), CorruptionPolicy(), airs, noises)


@pytest.fixture
def tiny_model():
    return Transducer.initialize(TINY, 0)
