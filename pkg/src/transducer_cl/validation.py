"""Input validation helpers for the estimator front-ends."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidArgumentError, ShapeError
from .synth import Waveform


def as_waveform(x) -> Waveform:
    """Accept a ``Waveform`` or a 1-D array of samples at 16 kHz."""
    if isinstance(x, Waveform):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"expected 1-D audio, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("audio contains non-finite samples")
    return Waveform(arr)


def check_waveforms(X: Iterable) -> list[Waveform]:
    waves = [as_waveform(x) for x in X]
    if not waves:
        raise InvalidArgumentError("expected at least one waveform")
    return waves


def check_feature_matrix(F, n_features: int | None = None, min_bins: int = 1) -> np.ndarray:
    arr = np.asarray(getattr(F, "values", F), dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D feature matrix, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ShapeError("feature matrix has no frames")
    if arr.shape[1] < min_bins:
        raise ShapeError(f"feature matrix needs >= {min_bins} bins, got {arr.shape[1]}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ShapeError(f"expected {n_features} features per frame, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("feature matrix contains non-finite values")
    return arr


def check_label_sequences(y: Iterable[Sequence[int]], vocab_size: int) -> list[tuple[int, ...]]:
    out = []
    for seq in y:
        seq = tuple(int(t) for t in seq)
        for t in seq:
            if t == 0:
                raise InvalidArgumentError("label sequences must not contain the blank id 0")
            if not 0 < t < vocab_size:
                raise InvalidArgumentError(f"label {t} outside vocabulary of size {vocab_size}")
        out.append(seq)
    return out


def check_consistent_length(*arrays) -> None:
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise InvalidArgumentError(f"inconsistent numbers of samples: {sorted(lengths)}")
