"""Estimator front-end bundling features, model, training and decoding."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .augment import CorruptionPolicy, SpecAugmentConfig
from .decode import greedy_decode
from .exceptions import InvalidArgumentError
from .features import FeatureConfig
from .metrics import corpus_wer, wer
from .model import ModelConfig, Transducer
from .synth import Utterance
from .training import (Corpora, FeaturePipeline, LrSchedule, StageConfig, checkpoint_load,
                       checkpoint_save, run_recipe, run_stage)
from .validation import check_consistent_length, check_label_sequences, check_waveforms


class TransducerRecognizer(BaseEstimator):
    """Word recognizer trained with the transducer loss.

    ``X`` is a list of 16 kHz waveforms (``Waveform`` or 1-D arrays) and
    ``y`` a list of token-id sequences without blanks.  ``fit`` trains
    from scratch on real-style data; :meth:`continue_training` applies a
    multi-stage recipe to an already fitted recognizer.
    """

    def __init__(self, vocab_size=None, enc_layers=2, enc_units=64, dec_layers=1, dec_units=64,
                 proj_dim=48, joint_units=64, n_mels=64, normalize=True, spec_augment=False,
                 steps=1000, batch_size=8, warmup_steps=100, peak_lr=2e-3, final_lr=2e-4,
                 max_emit_per_frame=10, random_state=0):
        self.vocab_size = vocab_size
        self.enc_layers = enc_layers
        self.enc_units = enc_units
        self.dec_layers = dec_layers
        self.dec_units = dec_units
        self.proj_dim = proj_dim
        self.joint_units = joint_units
        self.n_mels = n_mels
        self.normalize = normalize
        self.spec_augment = spec_augment
        self.steps = steps
        self.batch_size = batch_size
        self.warmup_steps = warmup_steps
        self.peak_lr = peak_lr
        self.final_lr = final_lr
        self.max_emit_per_frame = max_emit_per_frame
        self.random_state = random_state

    def _feature_config(self) -> FeatureConfig:
        return FeatureConfig(n_mels=self.n_mels, normalize=self.normalize)

    def _pipeline(self, policy=None, air_pool=(), noise_pool=()) -> FeaturePipeline:
        return FeaturePipeline(self._feature_config(), policy or CorruptionPolicy(0.0, 0.0),
                               air_pool, noise_pool, SpecAugmentConfig() if self.spec_augment else None)

    def _schedule(self) -> LrSchedule:
        warm = min(self.warmup_steps, self.steps)
        hold = (self.steps - warm) // 2
        return LrSchedule(warm, hold, self.steps - warm - hold, self.peak_lr, self.final_lr)

    def fit(self, X, y):
        waves = check_waveforms(X)
        y = list(y)
        check_consistent_length(waves, y)
        vocab_size = self.vocab_size
        if vocab_size is None:
            vocab_size = 1 + max((max(seq) for seq in y if len(seq)), default=1)
        labels = check_label_sequences(y, vocab_size)
        if any(len(seq) == 0 for seq in labels):
            raise InvalidArgumentError("training transcripts must contain at least one token")
        fc = self._feature_config()
        self.model_config_ = ModelConfig(self.enc_layers, self.enc_units, self.dec_layers, self.dec_units,
                                         self.proj_dim, self.joint_units, vocab_size, fc.output_dim)
        self.model_ = Transducer.initialize(self.model_config_, self.random_state)
        utts = [Utterance(f"fit-{i:06d}", seq, " ".join(map(str, seq)), "real", w)
                for i, (w, seq) in enumerate(zip(waves, labels))]
        stage = StageConfig("fit", schedule=self._schedule(), steps=self.steps,
                            batch_size=self.batch_size, seed=self.random_state)
        self.pipeline_ = self._pipeline()
        report = run_stage(self.model_, Corpora(utts), stage, self.pipeline_)
        self.loss_curve_ = list(report.losses)
        self.n_features_in_ = fc.output_dim
        return self

    def continue_training(self, corpora: Corpora, stages: Sequence[StageConfig],
                          pipeline: FeaturePipeline | None = None, checkpoint_dir=None):
        """Run a multi-stage recipe on the fitted model in place; returns the recipe report."""
        check_is_fitted(self, "model_")
        if pipeline is not None:
            self.pipeline_ = pipeline
        report = run_recipe(self.model_, corpora, stages, self.pipeline_, checkpoint_dir)
        self.loss_curve_ = self.loss_curve_ + [x for r in report.stages for x in r.losses]
        return report

    def features(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        return [self.pipeline_.clean(Utterance(f"x-{i}", (), "", "real", w))
                for i, w in enumerate(check_waveforms(X))]

    def predict(self, X) -> list[tuple[int, ...]]:
        return [greedy_decode(self.model_, F, self.max_emit_per_frame).tokens for F in self.features(X)]

    def score(self, X, y) -> float:
        """``1 - WER`` over the whole set, so that higher is better."""
        hyps = self.predict(X)
        y = list(y)
        check_consistent_length(hyps, y)
        return 1.0 - corpus_wer(wer(list(r), list(h)) for r, h in zip(y, hyps)).wer

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        checkpoint_save(path, self.model_, meta={"estimator_params": self.get_params()})

    @classmethod
    def load(cls, path) -> "TransducerRecognizer":
        ckpt = checkpoint_load(path)
        est = cls(**ckpt.meta.get("estimator_params", {}))
        est.model_ = ckpt.model
        est.model_config_ = ckpt.model.config
        est.vocab_size = ckpt.model.config.vocab_size
        est.pipeline_ = est._pipeline()
        est.loss_curve_ = []
        est.n_features_in_ = ckpt.model.config.input_dim
        return est

    @classmethod
    def from_model(cls, model: Transducer, pipeline: FeaturePipeline | None = None,
                   **params) -> "TransducerRecognizer":
        """Wrap an already trained model."""
        est = cls(vocab_size=model.config.vocab_size, **params)
        est.model_ = model
        est.model_config_ = model.config
        est.pipeline_ = pipeline or est._pipeline()
        est.loss_curve_ = []
        est.n_features_in_ = model.config.input_dim
        return est
