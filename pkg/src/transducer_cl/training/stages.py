"""Stage runner and multi-stage continual-learning recipe."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..exceptions import ConfigurationError, DivergenceError
from ..model import Transducer, forward_backward
from ..synth import Utterance
from .checkpoint import Checkpoint, checkpoint_save, restore_rng
from .elastic import ElasticPenaltyConfig, ParameterSnapshot, add_elastic_penalty
from .optim import AdamState, LrSchedule, adam_step, clip_grad_norm, lr_at, set_freeze
from .sampling import SEED_BOUND, FeaturePipeline, MixWeights, sample_batch

log = logging.getLogger(__name__)

CLIP_NORM = 5.0


@dataclass
class StageConfig:
    name: str
    mix: MixWeights = field(default_factory=MixWeights.real_only)
    freeze_encoder: bool = False
    elastic: ElasticPenaltyConfig | None = None
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule.constant(1e-3))
    steps: int = 1
    batch_size: int = 8
    seed: int = 0
    clip_norm: float = CLIP_NORM

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError(f"stage {self.name!r}: steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError(f"stage {self.name!r}: batch_size must be >= 1")


@dataclass
class Corpora:
    real: Sequence[Utterance] = ()
    synthetic: Sequence[Utterance] = ()


@dataclass
class StageReport:
    name: str
    losses: list[float] = field(default_factory=list)
    penalties: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    start_step: int = 0
    completed: bool = False
    final_params: dict | None = None
    adam: AdamState | None = None
    rng: np.random.Generator | None = None
    snapshot: ParameterSnapshot | None = None

    @property
    def steps_run(self) -> int:
        return len(self.losses)

    def log_lines(self) -> list[str]:
        return [format_step(self.start_step + i, lr, loss, pen)
                for i, (lr, loss, pen) in enumerate(zip(self.lrs, self.losses, self.penalties))]


def format_step(step: int, lr: float, loss: float, penalty: float) -> str:
    return f"step {step} lr {lr:.9g} loss {loss:.9g} penalty {penalty:.9g}"


def train_step(model: Transducer, batch, features: Sequence[np.ndarray], lr: float,
               adam: AdamState, elastic: ElasticPenaltyConfig | None = None,
               clip_norm: float = CLIP_NORM) -> tuple[float, float, float]:
    """One optimizer step on a batch; returns ``(mean loss, penalty, grad norm)``."""
    params = model.params
    params.zero_grad()
    scale = 1.0 / len(batch)
    total = 0.0
    for utt, X in zip(batch, features):
        total += forward_backward(params, model.config, X, utt.tokens, scale,
                                  encoder_grad="encoder" not in params.frozen)
    loss = total * scale
    penalty = add_elastic_penalty(params, elastic) if elastic is not None else 0.0
    if not (math.isfinite(loss) and math.isfinite(penalty)):
        raise DivergenceError(f"non-finite objective (loss={loss}, penalty={penalty})")
    norm = clip_grad_norm(params, clip_norm)
    adam_step(params, lr, adam)
    return loss, penalty, norm


def run_stage(model: Transducer, corpora: Corpora, stage: StageConfig,
              pipeline: FeaturePipeline | None = None, *,
              resume: Checkpoint | None = None, stop_after: int | None = None,
              snapshot: ParameterSnapshot | None = None,
              on_step: Callable[[str], None] | None = None) -> StageReport:
    """Train ``model`` in place for ``stage.steps`` optimizer steps.

    ``resume`` continues from a mid-stage checkpoint (optimizer moments, RNG
    state, step counter and penalty snapshot).  ``stop_after`` ends the stage
    early after that many total steps, leaving it resumable.
    """
    pipeline = pipeline or FeaturePipeline()
    pipeline.validate(stage.mix.uses_synthetic)
    params = model.params
    set_freeze(params, stage.freeze_encoder)

    if resume is not None:
        adam = resume.adam
        rng = restore_rng(resume.rng_state)
        start = int(resume.meta.get("step", 0))
        snapshot = resume.snapshot if snapshot is None else snapshot
    else:
        adam = AdamState.for_params(params)
        rng = np.random.default_rng(stage.seed)
        start = 0

    elastic = None
    if stage.elastic is not None:
        snap = snapshot or stage.elastic.snapshot or ParameterSnapshot.take(params, stage.elastic.component_scope)
        elastic = dataclasses.replace(stage.elastic, snapshot=snap)

    end = stage.steps if stop_after is None else min(stage.steps, stop_after)
    report = StageReport(stage.name, start_step=start, adam=adam, rng=rng,
                         snapshot=None if elastic is None else elastic.snapshot)
    for step in range(start, end):
        lr = lr_at(step, stage.schedule)
        batch = sample_batch(corpora.real, corpora.synthetic, stage.mix, stage.batch_size, rng)
        seeds = rng.integers(0, SEED_BOUND, size=(len(batch), 2))
        feats = [pipeline.training(u, int(a), int(b)) for u, (a, b) in zip(batch, seeds)]
        loss, penalty, norm = train_step(model, batch, feats, lr, adam, elastic, stage.clip_norm)
        report.losses.append(loss)
        report.penalties.append(penalty)
        report.lrs.append(lr)
        report.grad_norms.append(norm)
        line = format_step(step, lr, loss, penalty)
        log.debug("%s: %s", stage.name, line)
        if on_step is not None:
            on_step(line)
    report.completed = end == stage.steps
    if report.completed:
        report.final_params = params.state_dict()
    return report


def save_stage_checkpoint(path, model: Transducer, report: StageReport, stage_index: int) -> Path:
    meta = {"stage_index": stage_index, "stage_name": report.name,
            "step": report.start_step + report.steps_run, "completed": report.completed}
    return checkpoint_save(path, model, report.adam, meta, report.rng, report.snapshot)


@dataclass
class RecipeReport:
    stages: list[StageReport] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def run_recipe(model: Transducer, corpora: Corpora, stages: Sequence[StageConfig],
               pipeline: FeaturePipeline | None = None, checkpoint_dir=None,
               on_step: Callable[[str, str], None] | None = None) -> RecipeReport:
    """Run stages in order.

    A stage with an elastic penalty is anchored to the parameters as they
    stand when that stage begins, i.e. the end of the previous stage.
    """
    if not stages:
        raise ConfigurationError("a recipe needs at least one stage")
    pipeline = pipeline or FeaturePipeline()
    for stage in stages:
        pipeline.validate(stage.mix.uses_synthetic)
    out = RecipeReport()
    for k, stage in enumerate(stages):
        snapshot = None
        if stage.elastic is not None:
            snapshot = ParameterSnapshot.take(model.params, stage.elastic.component_scope)
        cb = None if on_step is None else (lambda line, name=stage.name: on_step(name, line))
        log.info("stage %d/%d %s: %d steps", k + 1, len(stages), stage.name, stage.steps)
        report = run_stage(model, corpora, stage, pipeline, snapshot=snapshot, on_step=cb)
        out.stages.append(report)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"stage{k + 1}_{stage.name}.npz"
            out.checkpoints.append(save_stage_checkpoint(path, model, report, k))
    return out
