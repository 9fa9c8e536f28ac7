"""Command-line driver: ``transducer-cl <command> --config run.cfg [...]``.

Exit status is 0 on success, 2 for configuration errors and 3 for errors
raised while doing the work.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AcousticImpulseResponse, corrupt
from .config import RunConfig, load_run_config
from .decode import greedy_decode
from .exceptions import ConfigurationError, TemplateParseError, TransducerError, UnknownTokenError
from .features import log_mel, stack_downsample, write_feature_dump
from .io import (ManifestRecord, Vocabulary, atomic_write_text, load_pool, load_utterances, read_wav,
                 write_manifest, write_wav)
from .metrics import WerReport, corpus_wer, nwer, wer
from .model import Transducer
from .synth import Utterance, sample_profiles, synthesize
from .training import Corpora, FeaturePipeline, checkpoint_load, run_recipe

log = logging.getLogger("transducer_cl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
SLOT = "<slot>"


def parse_templates(text: str) -> list[str]:
    """One template per non-blank, non-comment line, each with exactly one slot marker."""
    out = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        count = line.count(SLOT)
        if count != 1:
            raise TemplateParseError(f"template must contain exactly one {SLOT} marker, found {count}", n)
        out.append(line)
    if not out:
        raise TemplateParseError("template file contains no templates", 0)
    return out


def _texts(cfg: RunConfig, vocab: Vocabulary) -> list[str]:
    s = cfg.synth
    if s.texts is not None:
        texts = [ln.strip() for ln in s.texts.read_text(encoding="utf-8").splitlines()
                 if ln.strip() and not ln.startswith("#")]
    else:
        templates = parse_templates(s.templates.read_text(encoding="utf-8"))
        texts = [t.replace(SLOT, w) for t in templates for w in s.slot_words]
    for t in texts:
        vocab.encode(t)
    return texts


def cmd_synth(cfg: RunConfig) -> Path:
    if cfg.synth.texts is None and (cfg.synth.templates is None or cfg.synth.slot_words is None):
        raise ConfigurationError("synth needs synth.texts, or synth.templates together with synth.slot_words")
    vocab = Vocabulary.load(cfg.vocab_path)
    texts = _texts(cfg, vocab)
    s = cfg.synth
    profiles = sample_profiles(s.pool_seed, s.profile_count, pitch_range=s.pitch_range, rate_range=s.rate_range)
    rng = np.random.default_rng(cfg.seed)
    out = cfg.out_dir
    (out / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for k, text in enumerate(texts):
        tokens = vocab.encode(text)
        chosen = rng.choice(len(profiles), size=s.profiles_per_text, replace=False)
        for j, pid in enumerate(chosen):
            uid = f"{s.source}-{k:05d}-{j:02d}"
            rel = f"wav/{uid}.wav"
            write_wav(out / rel, synthesize(tokens, profiles[int(pid)], int(rng.integers(2 ** 31)), len(vocab)))
            records.append(ManifestRecord(uid, rel, text, s.source))
    path = out / "manifest.tsv"
    write_manifest(path, records)
    log.info("wrote %d utterances to %s", len(records), path)
    return path


def _airs(cfg: RunConfig) -> list[AcousticImpulseResponse]:
    if cfg.air_pool_dir is None:
        return []
    return [AcousticImpulseResponse(w.samples) for w in load_pool(cfg.air_pool_dir)]


def _noises(cfg: RunConfig):
    return [] if cfg.noise_pool_dir is None else load_pool(cfg.noise_pool_dir)


def cmd_corrupt_preview(cfg: RunConfig, inputs: Sequence[str]) -> Path:
    airs, noises = _airs(cfg), _noises(cfg)
    if cfg.corruption.p_reverb > 0 and not airs:
        raise ConfigurationError("data.air_pool is required when corruption.p_reverb > 0")
    if cfg.corruption.p_noise > 0 and not noises:
        raise ConfigurationError("data.noise_pool is required when corruption.p_noise > 0")
    rng = np.random.default_rng(cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["input\toutput\toutcome\tair\tnoise\tsnr_db\n"]
    for src in inputs:
        x = read_wav(src)
        y, info = corrupt(x, cfg.corruption, airs, noises, int(rng.integers(2 ** 63 - 1)), return_info=True)
        dst = cfg.out_dir / f"{Path(src).stem}.corrupt.wav"
        write_wav(dst, y)
        snr = "" if info.snr_db is None else f"{info.snr_db:.4f}"
        air = "" if info.air_index is None else str(info.air_index)
        noise = "" if info.noise_index is None else str(info.noise_index)
        lines.append(f"{src}\t{dst.name}\t{info.outcome}\t{air}\t{noise}\t{snr}\n")
    path = cfg.out_dir / "preview.tsv"
    atomic_write_text(path, "".join(lines))
    return path


def cmd_features_dump(cfg: RunConfig, manifest: Path, vocab: Vocabulary, stacked: bool = True) -> list[Path]:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for u in load_utterances(manifest, vocab):
        F = log_mel(u.waveform, cfg.features)
        if stacked:
            F = stack_downsample(F, cfg.features)
        p = cfg.out_dir / f"{u.id}.feat"
        write_feature_dump(p, F)
        paths.append(p)
    return paths


def _load_model(cfg: RunConfig, vocab: Vocabulary) -> Transducer:
    mc = cfg.model_config(len(vocab))
    if cfg.init_checkpoint is None:
        return Transducer.initialize(mc, cfg.init_seed)
    model = checkpoint_load(cfg.init_checkpoint).model
    if model.config.vocab_size != len(vocab) or model.config.input_dim != cfg.features.output_dim:
        raise ConfigurationError(
            f"init.checkpoint: model expects vocab {model.config.vocab_size} / input {model.config.input_dim}, "
            f"config gives {len(vocab)} / {cfg.features.output_dim}")
    return model


def cmd_train(cfg: RunConfig) -> dict:
    # load and check every input before creating any output
    vocab = Vocabulary.load(cfg.vocab_path)
    real = load_utterances(cfg.real_manifest, vocab) if cfg.real_manifest else []
    synth = load_utterances(cfg.synth_manifest, vocab) if cfg.synth_manifest else []
    model = _load_model(cfg, vocab)
    pipeline = FeaturePipeline(cfg.features, cfg.corruption, _airs(cfg), _noises(cfg), cfg.specaugment)
    corpora = Corpora(real, synth)
    for stage in cfg.stages:
        pipeline.validate(stage.mix.uses_synthetic)
        if stage.mix.real_pct > 0 and not real:
            raise ConfigurationError(f"stage {stage.name!r} samples real data but data.real is empty")
        if stage.mix.uses_synthetic and not synth:
            raise ConfigurationError(f"stage {stage.name!r} samples synthetic data but data.synthetic is empty")

    out = cfg.out_dir
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    logs: dict[str, list[str]] = {s.name: [] for s in cfg.stages}
    report = run_recipe(model, corpora, cfg.stages, pipeline, ckpt_dir,
                        on_step=lambda name, line: logs[name].append(line))
    summary = {"n_parameters": model.params.n_parameters(), "stages": []}
    for k, (stage, sr, ck) in enumerate(zip(cfg.stages, report.stages, report.checkpoints), start=1):
        log_path = out / f"stage{k}_{stage.name}.log"
        atomic_write_text(log_path, "".join(line + "\n" for line in logs[stage.name]))
        tail = sr.losses[-min(100, len(sr.losses)):]
        summary["stages"].append({
            "name": stage.name, "steps": sr.steps_run, "final_loss": sr.losses[-1],
            "mean_loss_last_100": float(np.mean(tail)), "max_grad_norm": float(max(sr.grad_norms)),
            "checkpoint": str(ck.relative_to(out)), "log": log_path.name,
        })
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _decode_all(cfg: RunConfig, checkpoint: Path, manifest: Path, vocab: Vocabulary):
    model = checkpoint_load(checkpoint).model
    if model.config.vocab_size != len(vocab):
        raise ConfigurationError(f"checkpoint vocabulary size {model.config.vocab_size} != {len(vocab)}")
    pipeline = FeaturePipeline(cfg.features, spec_config=None)
    utts = load_utterances(manifest, vocab)
    return [(u, greedy_decode(model, pipeline.clean(u), cfg.max_emit_per_frame)) for u in utts]


def cmd_decode(cfg: RunConfig, checkpoint: Path, manifest: Path) -> Path:
    vocab = Vocabulary.load(cfg.vocab_path)
    results = _decode_all(cfg, checkpoint, manifest, vocab)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / f"{manifest.stem}.hyp.tsv"
    atomic_write_text(path, "".join(f"{u.id}\t{vocab.decode(h.tokens)}\t{h.score:.6f}\n" for u, h in results))
    return path


def format_report(name: str, rows: list[tuple[Utterance, str, WerReport]], total: WerReport,
                  baseline: float | None = None) -> str:
    lines = ["# id\treference\thypothesis\terrors\n"]
    for u, hyp, r in rows:
        lines.append(f"{u.id}\t{u.transcript}\t{hyp}\t{r.errors}\n")
    lines += ["# summary\n", f"set {name}\n", f"utterances {len(rows)}\n",
              f"reference_words {total.reference_words}\n", f"substitutions {total.substitutions}\n",
              f"insertions {total.insertions}\n", f"deletions {total.deletions}\n", f"wer {total.wer:.6f}\n"]
    if baseline is not None:
        lines += [f"baseline_wer {baseline:.6f}\n", f"nwer {nwer(total.wer, baseline):.2f}\n"]
    return "".join(lines)


def read_report_wer(path) -> float:
    """WER from the summary block of an evaluation report."""
    in_summary = False
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# summary"):
            in_summary = True
        elif in_summary and line.startswith("wer "):
            return float(line.split()[1])
    raise ConfigurationError(f"{path}: no 'wer' line in a summary block")


def cmd_eval(cfg: RunConfig, checkpoint: Path, manifest: Path, baseline: Path | None = None,
             want_nwer: bool = False, name: str | None = None) -> Path:
    if want_nwer and baseline is None:
        raise ConfigurationError("NWER requested but no --baseline report given")
    if baseline is not None and not Path(baseline).is_file():
        raise ConfigurationError(f"--baseline: {baseline} does not exist")
    base_wer = read_report_wer(baseline) if baseline is not None else None
    vocab = Vocabulary.load(cfg.vocab_path)
    results = _decode_all(cfg, checkpoint, manifest, vocab)
    rows = []
    for u, h in results:
        hyp = vocab.decode(h.tokens)
        rows.append((u, hyp, wer(u.transcript, hyp)))
    total = corpus_wer(r for _, _, r in rows)
    name = name or manifest.stem
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / f"{name}.report"
    atomic_write_text(path, format_report(name, rows, total, base_wer))
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transducer-cl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="run configuration file")
        p.add_argument("--seed", type=int, help="override the config's seed")
        p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        return p

    add("synth", "render template sentences with sampled voice profiles")
    p = add("corrupt-preview", "apply the corruption policy to WAV files")
    p.add_argument("inputs", nargs="+", help="input WAV files")
    p = add("features-dump", "write binary feature dumps for a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--unstacked", action="store_true", help="dump log-Mel frames before stacking")
    add("train", "run the configured training stages")
    for name in ("decode", "eval"):
        p = add(name, f"{name} a manifest with a checkpoint")
        p.add_argument("--checkpoint", required=True, type=Path)
        p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--baseline", type=Path, help="baseline evaluation report for NWER")
    p.add_argument("--nwer", action="store_true", help="require NWER in the report")
    p.add_argument("--name", help="set name used in the report (default: manifest stem)")
    return ap


REQUIRED = {
    "synth": ("vocab", "out_dir"),
    "corrupt-preview": ("out_dir",),
    "features-dump": ("vocab", "out_dir"),
    "train": ("vocab", "out_dir", "stages"),
    "decode": ("vocab", "out_dir"),
    "eval": ("vocab", "out_dir"),
}


def _check_inputs(args) -> None:
    for attr in ("manifest", "checkpoint"):
        p = getattr(args, attr, None)
        if p is not None and not p.is_file():
            raise ConfigurationError(f"--{attr}: {p} does not exist")
    for p in getattr(args, "inputs", None) or ():
        if not Path(p).is_file():
            raise ConfigurationError(f"input {p} does not exist")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, seed_override=args.seed, out_override=args.out,
                              require=REQUIRED[args.command])
        _check_inputs(args)
        if args.command == "synth":
            result = cmd_synth(cfg)
        elif args.command == "corrupt-preview":
            result = cmd_corrupt_preview(cfg, args.inputs)
        elif args.command == "features-dump":
            result = cmd_features_dump(cfg, args.manifest, Vocabulary.load(cfg.vocab_path), not args.unstacked)
            result = f"{len(result)} dumps in {cfg.out_dir}"
        elif args.command == "train":
            result = cfg.out_dir / "summary.json"
            cmd_train(cfg)
        elif args.command == "decode":
            result = cmd_decode(cfg, args.checkpoint, args.manifest)
        else:
            result = cmd_eval(cfg, args.checkpoint, args.manifest, args.baseline, args.nwer, args.name)
    except (ConfigurationError, TemplateParseError, UnknownTokenError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransducerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
