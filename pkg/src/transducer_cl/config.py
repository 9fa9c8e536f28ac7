"""Flat ``dotted.key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment line; blank lines are
ignored.  Stage keys are ``stages.<k>.<field>`` with ``k`` counting from 1
and field names matching :class:`~transducer_cl.training.StageConfig`,
e.g. ``stages.2.mix.synth_pct`` or ``stages.3.elastic.lambda``.  Relative
paths resolve against the config file's directory.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .augment import CorruptionPolicy, SpecAugmentConfig
from .exceptions import ConfigurationError, TransducerError
from .features import FeatureConfig
from .model import COMPONENTS, ModelConfig
from .synth import PITCH_RANGE, RATE_RANGE
from .training import ElasticPenaltyConfig, LrSchedule, MixWeights, StageConfig

_STAGE_KEY = re.compile(r"^stages\.(\d+)\.(.+)$")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _str(s: str) -> str:
    if not s:
        raise ValueError("empty value")
    return s


def _words(s: str) -> tuple[str, ...]:
    out = tuple(w.strip() for w in s.split(",") if w.strip())
    if not out:
        raise ValueError("expected a comma-separated list")
    return out


# key -> (parser, default); ``None`` default means optional with no value
GLOBAL_KEYS: dict[str, tuple[Callable, object]] = {
    "seed": (int, None),
    "vocab": (Path, None),
    "out_dir": (Path, None),
    "init.checkpoint": (Path, None),
    "init.seed": (int, None),
    "data.real": (Path, None),
    "data.synthetic": (Path, None),
    "data.air_pool": (Path, None),
    "data.noise_pool": (Path, None),
    "model.enc_layers": (int, 2),
    "model.enc_units": (int, 64),
    "model.dec_layers": (int, 1),
    "model.dec_units": (int, 64),
    "model.proj_dim": (int, 48),
    "model.joint_units": (int, 64),
    "features.n_mels": (int, 64),
    "features.window_ms": (float, 25.0),
    "features.shift_ms": (float, 10.0),
    "features.stack_left": (int, 2),
    "features.downsample": (int, 3),
    "features.log_floor": (float, 1e-10),
    "features.normalize": (_bool, False),
    "corruption.p_reverb": (float, 0.6),
    "corruption.p_noise": (float, 0.6),
    "corruption.snr_low_db": (float, 10.0),
    "corruption.snr_high_db": (float, 20.0),
    "specaugment.enabled": (_bool, True),
    "specaugment.n_freq_masks": (int, 2),
    "specaugment.max_freq_fraction": (float, 0.375),
    "specaugment.max_time_mask_fraction": (float, 0.05),
    "specaugment.time_mask_count_fraction": (float, 0.05),
    "specaugment.time_mask_count_cap": (int, 10),
    "synth.templates": (Path, None),
    "synth.slot_words": (_words, None),
    "synth.texts": (Path, None),
    "synth.source": (_str, "synthetic"),
    "synth.profile_count": (int, 500),
    "synth.profiles_per_text": (int, 32),
    "synth.pool_seed": (int, None),
    "synth.pitch_low": (float, PITCH_RANGE[0]),
    "synth.pitch_high": (float, PITCH_RANGE[1]),
    "synth.rate_low": (float, RATE_RANGE[0]),
    "synth.rate_high": (float, RATE_RANGE[1]),
    "decode.max_emit_per_frame": (int, 10),
}

STAGE_KEYS: dict[str, tuple[Callable, object]] = {
    "name": (_str, None),
    "mix.real_pct": (float, 100.0),
    "mix.synth_pct": (float, 0.0),
    "freeze_encoder": (_bool, False),
    "elastic.lambda": (float, None),
    "elastic.component_scope": (_words, ("decoder",)),
    "schedule.warmup_steps": (int, 0),
    "schedule.hold_steps": (int, 0),
    "schedule.decay_steps": (int, 0),
    "schedule.peak_lr": (float, 1e-3),
    "schedule.final_lr": (float, None),
    "steps": (int, None),
    "batch_size": (int, 8),
    "seed": (int, None),
    "clip_norm": (float, 5.0),
}

PATH_KEYS = {k for k, (p, _) in GLOBAL_KEYS.items() if p is Path}


class ConfigErrors(ConfigurationError):
    """All problems found in one config, reported together."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; duplicate keys and malformed lines are errors."""
    out: dict[str, str] = {}
    errors = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"{source}:{n}: expected 'key = value'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            errors.append(f"{source}:{n}: empty key")
        elif key in out:
            errors.append(f"{source}:{n}: duplicate key {key!r}")
        else:
            out[key] = value
    if errors:
        raise ConfigErrors(errors)
    return out


@dataclass
class SynthSettings:
    templates: Path | None
    slot_words: tuple[str, ...] | None
    texts: Path | None
    source: str
    profile_count: int
    profiles_per_text: int
    pool_seed: int
    pitch_range: tuple[float, float]
    rate_range: tuple[float, float]


@dataclass
class RunConfig:
    path: Path | None
    seed: int
    vocab_path: Path | None
    out_dir: Path | None
    model: dict
    features: FeatureConfig
    corruption: CorruptionPolicy
    specaugment: SpecAugmentConfig | None
    stages: list[StageConfig]
    real_manifest: Path | None
    synth_manifest: Path | None
    air_pool_dir: Path | None
    noise_pool_dir: Path | None
    init_checkpoint: Path | None
    init_seed: int
    synth: SynthSettings
    max_emit_per_frame: int
    raw: dict = field(default_factory=dict, repr=False)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, input_dim=self.features.output_dim, **self.model)

    def uses_synthetic(self) -> bool:
        return any(s.mix.uses_synthetic for s in self.stages)


class _Collector:
    def __init__(self, raw: dict[str, str], base: Path):
        self.raw = raw
        self.base = base
        self.errors: list[str] = []

    def get(self, key: str, parser: Callable, default):
        if key not in self.raw:
            return default
        try:
            value = parser(self.raw[key])
        except (ValueError, TypeError) as exc:
            self.errors.append(f"{key}: {exc}")
            return default
        if parser is Path and not value.is_absolute():
            value = self.base / value
        return value

    def build(self, key: str, factory: Callable, *args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except (TransducerError, ValueError, TypeError) as exc:
            self.errors.append(f"{key}: {exc}")
            return None


def build_run_config(raw: dict[str, str], base_dir: Path = Path("."), *, path: Path | None = None,
                     seed_override: int | None = None, out_override: Path | None = None,
                     require: tuple[str, ...] = ()) -> RunConfig:
    """Validate every key at once; raises :class:`ConfigErrors` listing all problems.

    ``require`` names keys that the calling command needs; they are checked
    for presence and, for paths, existence.
    """
    c = _Collector(raw, base_dir)
    stage_raw: dict[int, dict[str, str]] = {}
    for key, value in raw.items():
        m = _STAGE_KEY.match(key)
        if m:
            k, sub = int(m.group(1)), m.group(2)
            if sub not in STAGE_KEYS:
                c.errors.append(f"{key}: unknown stage field {sub!r}")
            stage_raw.setdefault(k, {})[sub] = value
        elif key not in GLOBAL_KEYS:
            c.errors.append(f"{key}: unknown key")

    g = {key: c.get(key, parser, default) for key, (parser, default) in GLOBAL_KEYS.items()}
    if seed_override is not None:
        g["seed"] = seed_override
    if out_override is not None:
        g["out_dir"] = Path(out_override)
    if g["seed"] is None:
        c.errors.append("seed: required (set it in the config or pass --seed)")
    seed = g["seed"] if g["seed"] is not None else 0

    for key in require:
        if key != "stages" and g.get(key) is None:
            c.errors.append(f"{key}: required by this command")
    for key in PATH_KEYS - {"out_dir"}:
        p = g[key]
        if p is not None and not p.exists():
            c.errors.append(f"{key}: {p} does not exist")

    model = {k.split(".", 1)[1]: g[k] for k in GLOBAL_KEYS if k.startswith("model.")}
    c.build("model", ModelConfig, vocab_size=2, input_dim=1, **model)
    features = c.build("features", FeatureConfig, g["features.n_mels"], g["features.window_ms"],
                       g["features.shift_ms"], g["features.stack_left"], g["features.downsample"],
                       g["features.log_floor"], g["features.normalize"])
    corruption = c.build("corruption", CorruptionPolicy, g["corruption.p_reverb"], g["corruption.p_noise"],
                         g["corruption.snr_low_db"], g["corruption.snr_high_db"])
    spec = None
    if g["specaugment.enabled"]:
        spec = c.build("specaugment", SpecAugmentConfig, g["specaugment.n_freq_masks"],
                       g["specaugment.max_freq_fraction"], g["specaugment.max_time_mask_fraction"],
                       g["specaugment.time_mask_count_fraction"], g["specaugment.time_mask_count_cap"])

    stages = []
    if stage_raw:
        expected = list(range(1, max(stage_raw) + 1))
        if sorted(stage_raw) != expected:
            c.errors.append(f"stages: indices must be 1..{len(expected)} without gaps, got {sorted(stage_raw)}")
    for k in sorted(stage_raw):
        st = _build_stage(c, k, stage_raw[k], seed)
        if st is not None:
            stages.append(st)
    names = [s.name for s in stages]
    if len(set(names)) != len(names):
        c.errors.append(f"stages: names must be unique, got {names}")
    if "stages" in require and not stage_raw:
        c.errors.append("stages: at least one stage is required")
    if any(s.mix.uses_synthetic for s in stages):
        if g["data.synthetic"] is None:
            c.errors.append("data.synthetic: required because a stage samples synthetic data")
        if corruption is not None and corruption.p_reverb > 0 and g["data.air_pool"] is None:
            c.errors.append("data.air_pool: required because synthetic data is reverberated (p_reverb > 0)")
        if corruption is not None and corruption.p_noise > 0 and g["data.noise_pool"] is None:
            c.errors.append("data.noise_pool: required because synthetic data is noised (p_noise > 0)")
    if any(s.mix.real_pct > 0 for s in stages) and g["data.real"] is None:
        c.errors.append("data.real: required because a stage samples real data")

    if g["synth.source"] not in ("real", "synthetic"):
        c.errors.append(f"synth.source: must be 'real' or 'synthetic', got {g['synth.source']!r}")
    for key in ("synth.profile_count", "synth.profiles_per_text", "decode.max_emit_per_frame"):
        if g[key] < 1:
            c.errors.append(f"{key}: must be >= 1")
    if g["synth.profiles_per_text"] > g["synth.profile_count"]:
        c.errors.append("synth.profiles_per_text: must not exceed synth.profile_count")
    for lo, hi in (("synth.pitch_low", "synth.pitch_high"), ("synth.rate_low", "synth.rate_high")):
        if g[lo] > g[hi]:
            c.errors.append(f"{lo}: must not exceed {hi}")

    if c.errors:
        raise ConfigErrors(c.errors)
    synth = SynthSettings(g["synth.templates"], g["synth.slot_words"], g["synth.texts"], g["synth.source"],
                          g["synth.profile_count"], g["synth.profiles_per_text"],
                          seed if g["synth.pool_seed"] is None else g["synth.pool_seed"],
                          (g["synth.pitch_low"], g["synth.pitch_high"]),
                          (g["synth.rate_low"], g["synth.rate_high"]))
    return RunConfig(path, seed, g["vocab"], g["out_dir"], model, features, corruption, spec, stages,
                     g["data.real"], g["data.synthetic"], g["data.air_pool"], g["data.noise_pool"],
                     g["init.checkpoint"], seed if g["init.seed"] is None else g["init.seed"], synth,
                     g["decode.max_emit_per_frame"], dict(raw))


def _build_stage(c: _Collector, k: int, raw: dict[str, str], seed: int) -> StageConfig | None:
    prefix = f"stages.{k}."
    v = {}
    for sub, (parser, default) in STAGE_KEYS.items():
        if sub in raw:
            try:
                v[sub] = parser(raw[sub])
            except (ValueError, TypeError) as exc:
                c.errors.append(f"{prefix}{sub}: {exc}")
                v[sub] = default
        else:
            v[sub] = default
    if v["steps"] is None:
        c.errors.append(f"{prefix}steps: required")
        return None
    if "mix.real_pct" in raw and "mix.synth_pct" not in raw:
        v["mix.synth_pct"] = 100.0 - v["mix.real_pct"]
    elif "mix.synth_pct" in raw and "mix.real_pct" not in raw:
        v["mix.real_pct"] = 100.0 - v["mix.synth_pct"]
    mix = c.build(prefix + "mix", MixWeights, v["mix.real_pct"], v["mix.synth_pct"])
    final = v["schedule.final_lr"] if v["schedule.final_lr"] is not None else v["schedule.peak_lr"]
    schedule = c.build(prefix + "schedule", LrSchedule, v["schedule.warmup_steps"], v["schedule.hold_steps"],
                       v["schedule.decay_steps"], v["schedule.peak_lr"], final)
    elastic = None
    if v["elastic.lambda"] is not None:
        scope = frozenset(v["elastic.component_scope"])
        unknown = scope - set(COMPONENTS)
        if unknown:
            c.errors.append(f"{prefix}elastic.component_scope: unknown components {sorted(unknown)}")
        else:
            elastic = c.build(prefix + "elastic", ElasticPenaltyConfig, v["elastic.lambda"], scope)
    elif "elastic.component_scope" in raw:
        c.errors.append(f"{prefix}elastic.component_scope: set without stages.{k}.elastic.lambda")
    if mix is None or schedule is None:
        return None
    return c.build(prefix.rstrip("."), StageConfig, v["name"] or f"stage{k}", mix, v["freeze_encoder"], elastic,
                   schedule, v["steps"], v["batch_size"], seed + k if v["seed"] is None else v["seed"],
                   v["clip_norm"])


def load_run_config(path, *, seed_override: int | None = None, out_override=None,
                    require: tuple[str, ...] = ()) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} does not exist")
    raw = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    return build_run_config(raw, path.parent, path=path, seed_override=seed_override,
                            out_override=out_override, require=require)
