"""Greedy transducer search."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import BLANK, Transducer, decoder_step, encode


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float


def greedy_search(H: np.ndarray, start_state, step_fn: Callable, joint_fn: Callable,
                  max_emit_per_frame: int = 10, blank: int = BLANK) -> Hypothesis:
    """Frame-synchronous greedy search.

    ``step_fn(token, state) -> (g, state)`` advances the prediction network,
    ``joint_fn(h_t, g) -> log-probs`` scores one lattice node.  Ties go to the
    lowest token id.  After ``max_emit_per_frame`` labels the frame advances.
    """
    g, state = step_fn(blank, start_state)
    tokens: list[int] = []
    score = 0.0
    for t in range(H.shape[0]):
        emitted = 0
        while emitted < max_emit_per_frame:
            lp = joint_fn(H[t], g)
            k = int(np.argmax(lp))
            score += float(lp[k])
            if k == blank:
                break
            tokens.append(k)
            g, state = step_fn(k, state)
            emitted += 1
    return Hypothesis(tuple(tokens), score)


def greedy_decode(model: Transducer, features, max_emit_per_frame: int = 10) -> Hypothesis:
    params, cfg = model.params, model.config
    H, _ = encode(features, params, cfg)
    Wj, bj = params.v("joint.W"), params.v("joint.b")
    Wo, bo = params.v("joint.out.W"), params.v("joint.out.b")

    def joint_fn(h, g):
        logits = Wo @ np.tanh(Wj @ (h + g) + bj) + bo
        m = logits.max()
        return logits - m - np.log(np.exp(logits - m).sum())

    def step_fn(token, state):
        return decoder_step(token, state, params, cfg)

    return greedy_search(H, None, step_fn, joint_fn, max_emit_per_frame)
