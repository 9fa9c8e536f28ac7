import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transducer_cl.exceptions import ConfigurationError, TooShortError
from transducer_cl.features import (FeatureConfig, FeatureMatrix, LogMelExtractor, extract, hz_to_mel,
                                    log_mel, mel_filterbank, mel_to_hz, n_frames, read_feature_dump,
                                    stack_downsample, write_feature_dump)
from transducer_cl.synth import SAMPLE_RATE, Waveform


def tone(freq, seconds=0.5, amp=0.5):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return Waveform(amp * np.sin(2 * np.pi * freq * t))


def test_one_second_gives_98_frames():
    F = log_mel(Waveform(np.random.default_rng(0).uniform(-0.1, 0.1, 16000)))
    assert F.shape == (98, 64)
    assert F.frame_rate_ms == 10.0


def test_silence_hits_log_floor():
    F = log_mel(Waveform(np.zeros(16000)))
    assert np.all(F.values == math.log(1e-10))


def test_single_window():
    assert log_mel(Waveform(np.zeros(400))).shape == (1, 64)
    with pytest.raises(TooShortError):
        log_mel(Waveform(np.zeros(399)))


@pytest.mark.parametrize("n", [400, 559, 560, 16000, 16399])
def test_frame_count_formula(n):
    x = Waveform(np.random.default_rng(n).uniform(-0.1, 0.1, n))
    T = (n - 400) // 160 + 1
    assert log_mel(x).shape[0] == T
    assert extract(x).shape[0] == n_frames(n) == math.ceil(T / 3)


@pytest.mark.parametrize("freq", [300.0, 1000.0, 2500.0, 6000.0])
def test_tone_lands_in_its_mel_band(freq):
    F = log_mel(tone(freq))
    band = int(np.argmax(F.values.mean(axis=0)))
    edges = mel_to_hz(np.linspace(0, hz_to_mel(8000.0), 66))
    assert edges[band] <= freq <= edges[band + 2]


def test_filterbank_triangles_have_unit_area():
    fb = mel_filterbank(64)
    bin_hz = SAMPLE_RATE / 512
    areas = fb.sum(axis=1) * bin_hz
    # narrow low-frequency triangles are poorly sampled by 31.25 Hz bins
    np.testing.assert_allclose(areas[20:], 1.0, rtol=0.05)
    assert fb.shape == (64, 257)
    assert np.all(fb >= 0)


def test_mel_scale_roundtrip():
    f = np.array([0.0, 100.0, 1000.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)
    assert hz_to_mel(1000.0) == pytest.approx(1000.0, abs=0.1)


def test_stack_98_frames():
    F = FeatureMatrix(np.random.default_rng(0).normal(size=(98, 64)), 10.0)
    out = stack_downsample(F)
    assert out.shape == (33, 192)
    assert out.frame_rate_ms == 30.0


@pytest.mark.parametrize("T", [1, 3])
def test_first_row_is_frame_zero_repeated(T):
    v = np.arange(T * 4, dtype=float).reshape(T, 4)
    out = stack_downsample(FeatureMatrix(v, 10.0))
    assert out.shape[0] == 1
    np.testing.assert_array_equal(out.values[0], np.tile(v[0], 3))


def test_stack_row_layout():
    v = np.arange(10, dtype=float)[:, None] * np.ones((1, 2))
    out = stack_downsample(FeatureMatrix(v, 10.0)).values
    # kept frames 0, 3, 6, 9; each row is [f(t-2); f(t-1); f(t)]
    np.testing.assert_array_equal(out[1], [1, 1, 2, 2, 3, 3])
    np.testing.assert_array_equal(out[3], [7, 7, 8, 8, 9, 9])


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 60), marker=st.integers(0, 59))
def test_downsampling_keeps_index_zero_phase(T, marker):
    marker %= T
    v = np.zeros((T, 5))
    v[marker] = 1.0
    out = stack_downsample(FeatureMatrix(v, 10.0)).values
    # the current-frame block is the last 5 columns
    current = out[:, -5:]
    assert (current.sum() == 5.0) == (marker % 3 == 0)
    assert out.shape == (math.ceil(T / 3), 15)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(400, 6000), seed=st.integers(0, 1000), scale=st.floats(0.0, 1.0))
def test_features_are_finite(n, seed, scale):
    x = Waveform(np.random.default_rng(seed).uniform(-scale, scale, n))
    F = extract(x)
    assert np.all(np.isfinite(F.values))
    assert F.shape[1] == 192


def test_normalize_toggle():
    x = tone(500.0)
    plain = log_mel(x).values
    norm = log_mel(x, FeatureConfig(normalize=True)).values
    assert norm.mean() == pytest.approx(0.0, abs=1e-9)
    assert norm.std() == pytest.approx(1.0, abs=1e-3)
    np.testing.assert_allclose((plain - plain.mean()) / (plain.std() + 1e-5), norm)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FeatureConfig(window_ms=10.0, shift_ms=10.0)
    with pytest.raises(ConfigurationError):
        FeatureConfig(n_mels=1)
    with pytest.raises(ConfigurationError):
        FeatureConfig(downsample=0)


def test_feature_dump_roundtrip(tmp_path):
    F = extract(tone(440.0))
    p = tmp_path / "a.feat"
    write_feature_dump(p, F)
    raw = p.read_bytes()
    T, D = F.shape
    assert len(raw) == 12 + 4 * T * D
    assert np.frombuffer(raw[:8], "<i4").tolist() == [T, D]
    back = read_feature_dump(p)
    assert back.frame_rate_ms == 30.0
    np.testing.assert_allclose(back.values, F.values.astype(np.float32))


def test_extractor_transformer():
    ext = LogMelExtractor().fit()
    out = ext.transform([tone(440.0).samples, tone(880.0)])
    assert [o.shape[1] for o in out] == [192, 192]
    assert ext.n_features_out_ == 192
    assert len(ext.get_feature_names_out()) == 192
    assert ext.get_params()["n_mels"] == 64
