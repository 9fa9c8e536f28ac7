from .checkpoint import Checkpoint, checkpoint_load, checkpoint_save
from .elastic import ElasticPenaltyConfig, ParameterSnapshot, add_elastic_penalty, elastic_penalty
from .optim import AdamHyper, AdamState, LrSchedule, adam_step, clip_grad_norm, lr_at, set_freeze
from .sampling import FeaturePipeline, MixWeights, sample_batch
from .stages import Corpora, RecipeReport, StageConfig, StageReport, run_recipe, run_stage, train_step

__all__ = [
    "AdamHyper", "AdamState", "Checkpoint", "Corpora", "ElasticPenaltyConfig", "FeaturePipeline",
    "LrSchedule", "MixWeights", "ParameterSnapshot", "RecipeReport", "StageConfig", "StageReport",
    "adam_step", "add_elastic_penalty", "checkpoint_load", "checkpoint_save", "clip_grad_norm",
    "elastic_penalty", "lr_at", "run_recipe", "run_stage", "sample_batch", "set_freeze", "train_step",
]
