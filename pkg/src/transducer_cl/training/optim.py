"""Adam with a warm-up / hold / exponential-decay learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, StateError
from ..model import ParameterStore


@dataclass(frozen=True)
class LrSchedule:
    warmup_steps: int = 0
    hold_steps: int = 0
    decay_steps: int = 0
    peak_lr: float = 1e-3
    final_lr: float = 1e-3

    def __post_init__(self):
        if min(self.warmup_steps, self.hold_steps, self.decay_steps) < 0:
            raise ConfigurationError("schedule step counts must be >= 0")
        if not (self.peak_lr > 0 and self.final_lr > 0):
            raise ConfigurationError("learning rates must be positive")
        if self.final_lr > self.peak_lr:
            raise ConfigurationError("final_lr must not exceed peak_lr")

    @classmethod
    def constant(cls, lr: float) -> "LrSchedule":
        return cls(0, 0, 0, lr, lr)


def lr_at(step: int, s: LrSchedule) -> float:
    """Linear warm-up to ``peak_lr``, hold, then geometric decay to ``final_lr``."""
    if step < 0:
        raise ConfigurationError("step must be >= 0")
    W, H, D = s.warmup_steps, s.hold_steps, s.decay_steps
    if step < W:
        return s.peak_lr * (step + 1) / W
    if step < W + H:
        return s.peak_lr
    frac = 1.0 if D == 0 else min(1.0, (step - W - H) / D)
    return s.peak_lr * (s.final_lr / s.peak_lr) ** frac


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterStore) -> "AdamState":
        return cls(0, {p.name: np.zeros_like(p.value) for p in params},
                   {p.name: np.zeros_like(p.value) for p in params})


def adam_step(params: ParameterStore, lr: float, state: AdamState,
              hyper: AdamHyper = AdamHyper()) -> AdamState:
    """Bias-corrected Adam update of every parameter not in a frozen component.

    Frozen parameters keep both their values and their moment estimates.
    """
    state.step += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p in params.trainable():
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None or v is None or m.shape != p.value.shape or v.shape != p.value.shape:
            raise StateError(f"optimizer state does not match parameter {p.name!r}")
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return state


def clip_grad_norm(params: ParameterStore, max_norm: float) -> float:
    """Rescale trainable gradients to global L2 norm ``max_norm``; return the pre-clip norm."""
    trainable = params.trainable()
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in trainable))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in trainable:
            p.grad *= scale
    return norm


def set_freeze(params: ParameterStore, freeze_encoder: bool) -> None:
    """Exclude (or re-include) encoder-tagged parameters from optimizer updates."""
    if freeze_encoder:
        params.frozen.add("encoder")
    else:
        params.frozen.discard("encoder")
